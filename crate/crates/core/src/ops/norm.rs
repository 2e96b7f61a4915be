use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// Variance floor added before the square root.
pub const BN_EPS: f64 = 1e-3;
/// Weight of the batch statistic in the running-average update.
pub const BN_MOMENTUM: f64 = 0.01;

/// Per-channel batch statistics (biased variance) from a training-mode pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

fn check(input: Shape, gamma: &Tensor<impl Element>, beta: &Tensor<impl Element>) -> Result<()> {
    if gamma.numel() != input.c || beta.numel() != input.c {
        return Err(Error::shape(format!(
            "batch_norm: input {input} needs {} affine terms, got gamma {} / beta {}",
            input.c,
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok(())
}

/// Each channel's values across the batch, in batch order.
fn channel_planes<T: Element>(t: &Tensor<T>, c: usize) -> impl Iterator<Item = &[T]> {
    (0..t.shape().n).map(move |n| t.plane(n, c))
}

/// Apply `f(c, value)` per element, parallel over channels.
fn map_channels<T: Element>(input: &Tensor<T>, f: impl Fn(usize, &[T], &mut [T]) + Sync) -> Tensor<T> {
    let s = input.shape();
    let mut out = vec![T::zero(); s.numel()];
    out.par_chunks_mut(s.plane()).enumerate().for_each(|(i, dst)| {
        let c = i % s.c;
        f(c, &input.data()[i * s.plane()..(i + 1) * s.plane()], dst);
    });
    Tensor::from_parts(s, out)
}

/// Training-mode batch norm: normalizes with batch statistics over (n, h, w).
pub fn batch_norm_train<T: Element>(input: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<(Tensor<T>, BatchStats)> {
    let s = input.shape();
    check(s, gamma, beta)?;
    let count = (s.n * s.plane()) as f64;
    let stats: Vec<(f64, f64)> = (0..s.c)
        .into_par_iter()
        .map(|c| {
            let sum: f64 = channel_planes(input, c).flat_map(|p| p.iter()).map(|v| v.as_f64()).sum();
            let mean = sum / count;
            let sq: f64 = channel_planes(input, c)
                .flat_map(|p| p.iter())
                .map(|v| {
                    let d = v.as_f64() - mean;
                    d * d
                })
                .sum();
            (mean, sq / count)
        })
        .collect();
    let (mean, var): (Vec<f64>, Vec<f64>) = stats.into_iter().unzip();
    let out = normalize(input, gamma, beta, &mean, &var, eps);
    Ok((out, BatchStats { mean, var }))
}

/// Inference-mode batch norm with stored statistics.
pub fn batch_norm_infer<T: Element>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let s = input.shape();
    check(s, gamma, beta)?;
    if running_mean.numel() != s.c || running_var.numel() != s.c {
        return Err(Error::shape(format!("batch_norm: running stats do not match input {s}")));
    }
    let mean: Vec<f64> = running_mean.data().iter().map(|v| v.as_f64()).collect();
    let var: Vec<f64> = running_var.data().iter().map(|v| v.as_f64()).collect();
    Ok(normalize(input, gamma, beta, &mean, &var, eps))
}

fn normalize<T: Element>(input: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, mean: &[f64], var: &[f64], eps: f64) -> Tensor<T> {
    // y = (x − m)·scale + β with scale = γ/√(v+ε); a constant channel yields β exactly
    let coeffs: Vec<(T, T, T)> = (0..mean.len())
        .map(|c| {
            let scale = gamma.data()[c].as_f64() / (var[c] + eps).sqrt();
            (T::of(mean[c]), T::of(scale), beta.data()[c])
        })
        .collect();
    map_channels(input, |c, src, dst| {
        let (m, scale, shift) = coeffs[c];
        for (d, &x) in dst.iter_mut().zip(src) {
            *d = (x - m) * scale + shift;
        }
    })
}

/// Per-channel `(Σ dy, Σ dy·x̂)` in f64.
fn reduce_grads<T: Element>(input: &Tensor<T>, grad_out: &Tensor<T>, mean: &[f64], inv_std: &[f64]) -> Vec<(f64, f64)> {
    (0..input.shape().c)
        .into_par_iter()
        .map(|c| {
            let (m, is) = (mean[c], inv_std[c]);
            channel_planes(input, c).zip(channel_planes(grad_out, c)).fold((0.0, 0.0), |acc, (x, dy)| {
                x.iter().zip(dy).fold(acc, |(sd, sdx), (&x, &dy)| {
                    let dy = dy.as_f64();
                    (sd + dy, sdx + dy * (x.as_f64() - m) * is)
                })
            })
        })
        .collect()
}

/// Gradients of [`batch_norm_train`] w.r.t. (input, gamma, beta).
pub fn batch_norm_train_backward<T: Element>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    stats: &BatchStats,
    eps: f64,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let s = input.shape();
    let count = (s.n * s.plane()) as f64;
    let inv_std: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let sums = reduce_grads(input, grad_out, &stats.mean, &inv_std);
    // dx = γ·σ⁻¹/M · (M·dy − Σdy − x̂·Σ(dy·x̂))
    let dx = {
        let mut out = vec![T::zero(); s.numel()];
        out.par_chunks_mut(s.plane()).enumerate().for_each(|(i, dst)| {
            let c = i % s.c;
            let k = gamma.data()[c].as_f64() * inv_std[c] / count;
            let (sd, sdx) = sums[c];
            let (m, is) = (stats.mean[c], inv_std[c]);
            let x = &input.data()[i * s.plane()..(i + 1) * s.plane()];
            let dy = &grad_out.data()[i * s.plane()..(i + 1) * s.plane()];
            for ((d, &x), &g) in dst.iter_mut().zip(x).zip(dy) {
                let xhat = (x.as_f64() - m) * is;
                *d = T::of(k * (count * g.as_f64() - sd - xhat * sdx));
            }
        });
        Tensor::from_parts(s, out)
    };
    let (dgamma, dbeta) = affine_grads(gamma.shape(), &sums);
    (dx, dgamma, dbeta)
}

/// Gradients of [`batch_norm_infer`] w.r.t. (input, gamma, beta).
pub fn batch_norm_infer_backward<T: Element>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: f64,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let mean: Vec<f64> = running_mean.data().iter().map(|v| v.as_f64()).collect();
    let inv_std: Vec<f64> = running_var.data().iter().map(|v| 1.0 / (v.as_f64() + eps).sqrt()).collect();
    let sums = reduce_grads(input, grad_out, &mean, &inv_std);
    let scale: Vec<T> = (0..mean.len()).map(|c| T::of(gamma.data()[c].as_f64() * inv_std[c])).collect();
    let dx = map_channels(grad_out, |c, src, dst| {
        for (d, &g) in dst.iter_mut().zip(src) {
            *d = g * scale[c];
        }
    });
    let (dgamma, dbeta) = affine_grads(gamma.shape(), &sums);
    (dx, dgamma, dbeta)
}

fn affine_grads<T: Element>(shape: Shape, sums: &[(f64, f64)]) -> (Tensor<T>, Tensor<T>) {
    let dgamma = sums.iter().map(|s| T::of(s.1)).collect();
    let dbeta = sums.iter().map(|s| T::of(s.0)).collect();
    (Tensor::from_parts(shape, dgamma), Tensor::from_parts(shape, dbeta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn affine(c: usize, g: f32, b: f32) -> (Tensor<f32>, Tensor<f32>) {
        (Tensor::full(Shape::new(1, c, 1, 1), g), Tensor::full(Shape::new(1, c, 1, 1), b))
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f32>::uniform(Shape::new(4, 3, 5, 6), -20.0, 20.0, &mut rng);
        let (g, b) = affine(3, 1.0, 0.0);
        let (y, _) = batch_norm_train(&x, &g, &b, BN_EPS).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..4).flat_map(|n| y.plane(n, c).iter().map(|&v| v as f64)).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-4, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn constant_channel_maps_to_beta() {
        let x = Tensor::<f32>::full(Shape::new(2, 2, 3, 3), 5.25);
        let (g, b) = affine(2, 2.0, 0.75);
        let (y, stats) = batch_norm_train(&x, &g, &b, BN_EPS).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.75));
        assert_eq!(stats.var, vec![0.0, 0.0]);
    }

    #[test]
    fn infer_mode_matches_scalar_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::<f32>::uniform(Shape::new(2, 3, 2, 2), -1.0, 1.0, &mut rng);
        let gamma = Tensor::<f32>::new(Shape::new(1, 3, 1, 1), vec![0.5, 1.5, -2.0]).unwrap();
        let beta = Tensor::<f32>::new(Shape::new(1, 3, 1, 1), vec![0.1, -0.2, 0.3]).unwrap();
        let mean = Tensor::<f32>::new(Shape::new(1, 3, 1, 1), vec![0.2, -0.4, 0.0]).unwrap();
        let var = Tensor::<f32>::new(Shape::new(1, 3, 1, 1), vec![0.5, 2.0, 0.01]).unwrap();
        let y = batch_norm_infer(&x, &gamma, &beta, &mean, &var, BN_EPS).unwrap();
        for n in 0..2 {
            for c in 0..3 {
                for i in 0..2 {
                    for j in 0..2 {
                        let xv = x.at(n, c, i, j) as f64;
                        let expect =
                            (xv - mean.data()[c] as f64) / (var.data()[c] as f64 + BN_EPS).sqrt() * gamma.data()[c] as f64 + beta.data()[c] as f64;
                        assert!((y.at(n, c, i, j) as f64 - expect).abs() < 1e-6 * (1.0 + expect.abs()));
                    }
                }
            }
        }
    }

    #[test]
    fn affine_length_is_checked() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 3, 2, 2));
        let (g, b) = affine(2, 1.0, 0.0);
        assert!(batch_norm_train(&x, &g, &b, BN_EPS).is_err());
    }
}
