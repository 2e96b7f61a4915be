use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// Interpolation taps for one output coordinate.
#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

/// Half-pixel-centre taps: `src = (dst + 0.5)·in/out − 0.5`, clamped to the input.
fn taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            Tap { lo, hi, frac: src - lo as f64 }
        })
        .collect()
}

/// Source index of nearest-neighbour resampling under the same half-pixel mapping.
#[inline]
pub fn nearest_index(dst: usize, input: usize, output: usize) -> usize {
    let src = ((dst as f64 + 0.5) * input as f64 / output as f64).floor() as usize;
    src.min(input - 1)
}

/// Bilinear resampling with half-pixel centres; identity when sizes match.
pub fn bilinear_resize<T: Element>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(format!("bilinear_resize: output size {out_h}x{out_w}")));
    }
    let s = input.shape();
    if (s.h, s.w) == (out_h, out_w) {
        return Ok(input.clone());
    }
    let ys = taps(s.h, out_h);
    let xs: Vec<(usize, usize, T)> = taps(s.w, out_w).into_iter().map(|t| (t.lo, t.hi, T::of(t.frac))).collect();
    let out_shape = s.with_spatial(out_h, out_w);
    let mut out = vec![T::zero(); out_shape.numel()];
    out.par_chunks_mut(out_h * out_w).enumerate().for_each(|(i, dst)| {
        let plane = &input.data()[i * s.plane()..(i + 1) * s.plane()];
        // horizontal pass once per source row; lerp as a + t·(b − a) so
        // equal endpoints reproduce exactly
        let mut rows = vec![T::zero(); s.h * out_w];
        for (r, src) in rows.chunks_mut(out_w).zip(plane.chunks(s.w)) {
            for (d, &(x0, x1, fx)) in r.iter_mut().zip(&xs) {
                *d = src[x0] + fx * (src[x1] - src[x0]);
            }
        }
        for (ty, drow) in ys.iter().zip(dst.chunks_mut(out_w)) {
            let top = &rows[ty.lo * out_w..(ty.lo + 1) * out_w];
            let bot = &rows[ty.hi * out_w..(ty.hi + 1) * out_w];
            let fy = T::of(ty.frac);
            for ((d, &a), &b) in drow.iter_mut().zip(top).zip(bot) {
                *d = a + fy * (b - a);
            }
        }
    });
    Ok(Tensor::from_parts(out_shape, out))
}

pub fn bilinear_resize_backward<T: Element>(input_shape: Shape, grad_out: &Tensor<T>) -> Tensor<T> {
    let s = input_shape;
    let (out_h, out_w) = (grad_out.shape().h, grad_out.shape().w);
    if (s.h, s.w) == (out_h, out_w) {
        return grad_out.clone();
    }
    let ys = taps(s.h, out_h);
    let xs: Vec<(usize, usize, T)> = taps(s.w, out_w).into_iter().map(|t| (t.lo, t.hi, T::of(t.frac))).collect();
    let mut dx = Tensor::zeros(s);
    let plane_len = s.plane();
    let data = dx.data_mut();
    for n in 0..s.n {
        for c in 0..s.c {
            let g = grad_out.plane(n, c);
            let dst = &mut data[(n * s.c + c) * plane_len..][..plane_len];
            for (i, ty) in ys.iter().enumerate() {
                let fy = T::of(ty.frac);
                let row = &g[i * out_w..(i + 1) * out_w];
                for (&gv, &(x0, x1, fx)) in row.iter().zip(&xs) {
                    let top = gv * (T::one() - fy);
                    let bot = gv * fy;
                    dst[ty.lo * s.w + x0] = dst[ty.lo * s.w + x0] + top * (T::one() - fx);
                    dst[ty.lo * s.w + x1] = dst[ty.lo * s.w + x1] + top * fx;
                    dst[ty.hi * s.w + x0] = dst[ty.hi * s.w + x0] + bot * (T::one() - fx);
                    dst[ty.hi * s.w + x1] = dst[ty.hi * s.w + x1] + bot * fx;
                }
            }
        }
    }
    dx
}
