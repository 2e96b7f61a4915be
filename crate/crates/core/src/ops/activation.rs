use rand::Rng;
use rayon::prelude::*;

use crate::tensor::{Element, LabelMap, Shape, Tensor};

/// NaN passes through so that a corrupted activation still surfaces in the loss.
pub fn relu<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    input.map(|v| if !(v <= T::zero()) { v } else { T::zero() })
}

/// Passes gradient where the input was strictly positive.
pub fn relu_backward<T: Element>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = input.data().iter().zip(grad_out.data()).map(|(&x, &g)| if x > T::zero() { g } else { T::zero() }).collect();
    Tensor::from_parts(input.shape(), data)
}

/// Softmax across the channel axis at every pixel (max-subtracted).
pub fn channel_softmax<T: Element>(input: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    let mut out = vec![T::zero(); s.numel()];
    let item = s.c * s.plane();
    out.par_chunks_mut(item).enumerate().for_each(|(n, dst)| {
        let src = input.item(n);
        let plane = s.plane();
        let mut max = vec![T::neg_infinity(); plane];
        for c in 0..s.c {
            for (m, &v) in max.iter_mut().zip(&src[c * plane..(c + 1) * plane]) {
                *m = (*m).max(v);
            }
        }
        let mut sum = vec![0f64; plane];
        for c in 0..s.c {
            let row = &mut dst[c * plane..(c + 1) * plane];
            for ((d, &v), (m, acc)) in row.iter_mut().zip(&src[c * plane..(c + 1) * plane]).zip(max.iter().zip(sum.iter_mut())) {
                let e = (v - *m).exp();
                *d = e;
                *acc += e.as_f64();
            }
        }
        let inv: Vec<T> = sum.iter().map(|&z| T::of(1.0 / z)).collect();
        for c in 0..s.c {
            for (d, &r) in dst[c * plane..(c + 1) * plane].iter_mut().zip(&inv) {
                *d = *d * r;
            }
        }
    });
    Tensor::from_parts(s, out)
}

/// `dx = p ⊙ (dy − Σ_c p·dy)` per pixel.
pub fn channel_softmax_backward<T: Element>(probs: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let s = probs.shape();
    let plane = s.plane();
    let mut out = vec![T::zero(); s.numel()];
    for n in 0..s.n {
        let p = probs.item(n);
        let g = grad_out.item(n);
        let dst = &mut out[n * s.c * plane..(n + 1) * s.c * plane];
        for i in 0..plane {
            let dot: f64 = (0..s.c).map(|c| p[c * plane + i].as_f64() * g[c * plane + i].as_f64()).sum();
            for c in 0..s.c {
                let k = c * plane + i;
                dst[k] = T::of(p[k].as_f64() * (g[k].as_f64() - dot));
            }
        }
    }
    Tensor::from_parts(s, out)
}

/// Index of the largest channel per pixel; ties go to the smallest index.
pub fn channel_argmax<T: Element>(input: &Tensor<T>) -> LabelMap {
    let s = input.shape();
    assert!(s.c <= 256, "channel_argmax: {} channels exceed the u8 label range", s.c);
    let plane = s.plane();
    let mut labels = vec![0u8; s.n * plane];
    labels.par_chunks_mut(plane).enumerate().for_each(|(n, dst)| {
        let src = input.item(n);
        let mut best: Vec<T> = src[..plane].to_vec();
        for c in 1..s.c {
            for ((b, l), &v) in best.iter_mut().zip(dst.iter_mut()).zip(&src[c * plane..(c + 1) * plane]) {
                if v > *b {
                    *b = v;
                    *l = c as u8;
                }
            }
        }
    });
    LabelMap::new(s.n, s.h, s.w, labels).expect("label buffer sized from tensor shape")
}

/// Inverted-dropout mask: zero with probability `p`, else `1/(1−p)`.
pub fn dropout_mask<T: Element>(shape: Shape, p: f64, rng: &mut impl Rng) -> Tensor<T> {
    let keep = T::of(1.0 / (1.0 - p));
    let data = (0..shape.numel()).map(|_| if rng.random::<f64>() < p { T::zero() } else { keep }).collect();
    Tensor::from_parts(shape, data)
}
