use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// Source range `[floor(i·len/bins), ceil((i+1)·len/bins))` of output cell `i`.
#[inline]
pub fn pool_bounds(i: usize, len: usize, bins: usize) -> (usize, usize) {
    (i * len / bins, ((i + 1) * len).div_ceil(bins))
}

fn check(s: Shape, bins: (usize, usize)) -> Result<()> {
    let (bh, bw) = bins;
    if bh == 0 || bw == 0 || bh > s.h || bw > s.w {
        return Err(Error::invalid(format!("adaptive_avg_pool: bins {bh}x{bw} must lie in 1..={}x1..={} for input {s}", s.h, s.w)));
    }
    Ok(())
}

/// Average pooling onto a fixed `bh×bw` grid of possibly overlapping cells.
pub fn adaptive_avg_pool<T: Element>(input: &Tensor<T>, bins: (usize, usize)) -> Result<Tensor<T>> {
    let s = input.shape();
    check(s, bins)?;
    let (bh, bw) = bins;
    let out_shape = Shape::new(s.n, s.c, bh, bw);
    let mut out = Vec::with_capacity(out_shape.numel());
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = input.plane(n, c);
            for i in 0..bh {
                let (y0, y1) = pool_bounds(i, s.h, bh);
                for j in 0..bw {
                    let (x0, x1) = pool_bounds(j, s.w, bw);
                    let mut sum = 0f64;
                    for y in y0..y1 {
                        sum += plane[y * s.w + x0..y * s.w + x1].iter().map(|v| v.as_f64()).sum::<f64>();
                    }
                    out.push(T::of(sum / ((y1 - y0) * (x1 - x0)) as f64));
                }
            }
        }
    }
    Ok(Tensor::from_parts(out_shape, out))
}

pub fn adaptive_avg_pool_backward<T: Element>(input_shape: Shape, grad_out: &Tensor<T>) -> Tensor<T> {
    let s = input_shape;
    let (bh, bw) = (grad_out.shape().h, grad_out.shape().w);
    let mut dx = Tensor::zeros(s);
    let data = dx.data_mut();
    for n in 0..s.n {
        for c in 0..s.c {
            let base = (n * s.c + c) * s.plane();
            let g = grad_out.plane(n, c);
            for i in 0..bh {
                let (y0, y1) = pool_bounds(i, s.h, bh);
                for j in 0..bw {
                    let (x0, x1) = pool_bounds(j, s.w, bw);
                    let share = T::of(g[i * bw + j].as_f64() / ((y1 - y0) * (x1 - x0)) as f64);
                    for y in y0..y1 {
                        for v in &mut data[base + y * s.w + x0..base + y * s.w + x1] {
                            *v = *v + share;
                        }
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrant_means_of_ramp() {
        let x = Tensor::<f32>::from_fn(Shape::new(1, 1, 4, 4), |_, _, y, xx| (y * 4 + xx) as f32);
        let y = adaptive_avg_pool(&x, (2, 2)).unwrap();
        assert_eq!(y.data(), &[2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn single_bin_is_global_mean_and_full_bins_are_identity() {
        let x = Tensor::<f32>::from_fn(Shape::new(2, 3, 3, 5), |n, c, y, xx| (n + c * 7 + y * 5 + xx) as f32);
        let g = adaptive_avg_pool(&x, (1, 1)).unwrap();
        for n in 0..2 {
            for c in 0..3 {
                let mean = x.plane(n, c).iter().sum::<f32>() / 15.0;
                assert!((g.at(n, c, 0, 0) - mean).abs() < 1e-5);
            }
        }
        assert_eq!(adaptive_avg_pool(&x, (3, 5)).unwrap(), x);
    }

    #[test]
    fn uneven_bins_overlap() {
        assert_eq!(pool_bounds(0, 5, 3), (0, 2));
        assert_eq!(pool_bounds(1, 5, 3), (1, 4));
        assert_eq!(pool_bounds(2, 5, 3), (3, 5));
    }

    #[test]
    fn oversized_bins_rejected() {
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 4, 8));
        let msg = adaptive_avg_pool(&x, (6, 6)).unwrap_err().to_string();
        assert!(msg.contains("6x6"), "{msg}");
    }
}
