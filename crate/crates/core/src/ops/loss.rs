use crate::error::{Error, Result};
use crate::tensor::{Element, LabelMap, Tensor};

fn check<T: Element>(logits: &Tensor<T>, labels: &LabelMap, ignore: u8) -> Result<()> {
    let s = logits.shape();
    if labels.dims() != (s.n, s.h, s.w) {
        return Err(Error::shape(format!("cross_entropy: logits {s} vs labels {:?}", labels.dims())));
    }
    if let Some(&bad) = labels.data().iter().find(|&&l| l != ignore && l as usize >= s.c) {
        return Err(Error::invalid(format!("cross_entropy: label {bad} out of range for {} classes", s.c)));
    }
    Ok(())
}

/// Per-pixel `(log Σ exp, max)` over channels, in f64.
fn log_partition<T: Element>(item: &[T], classes: usize, plane: usize, i: usize) -> f64 {
    let max = (0..classes).map(|c| item[c * plane + i].as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = (0..classes).map(|c| (item[c * plane + i].as_f64() - max).exp()).sum();
    max + z.ln()
}

/// Mean `−log softmax(logits)[label]` over pixels whose label is not `ignore`.
///
/// Returns the loss and the number of contributing pixels; the mean over no
/// pixels is zero.
pub fn cross_entropy<T: Element>(logits: &Tensor<T>, labels: &LabelMap, ignore: u8) -> Result<(f64, usize)> {
    check(logits, labels, ignore)?;
    let s = logits.shape();
    let plane = s.plane();
    let mut total = 0f64;
    let mut count = 0usize;
    for n in 0..s.n {
        let item = logits.item(n);
        for (i, &l) in labels.item(n).iter().enumerate() {
            if l == ignore {
                continue;
            }
            total += log_partition(item, s.c, plane, i) - item[l as usize * plane + i].as_f64();
            count += 1;
        }
    }
    Ok((if count == 0 { 0.0 } else { total / count as f64 }, count))
}

/// Gradient of [`cross_entropy`] scaled by the upstream scalar gradient.
pub fn cross_entropy_backward<T: Element>(logits: &Tensor<T>, labels: &LabelMap, ignore: u8, count: usize, upstream: f64) -> Tensor<T> {
    let s = logits.shape();
    let plane = s.plane();
    let mut grad = Tensor::zeros(s);
    if count == 0 {
        return grad;
    }
    let k = upstream / count as f64;
    let item_len = s.c * plane;
    let data = grad.data_mut();
    for n in 0..s.n {
        let item = logits.item(n);
        let dst = &mut data[n * item_len..(n + 1) * item_len];
        for (i, &l) in labels.item(n).iter().enumerate() {
            if l == ignore {
                continue;
            }
            let lz = log_partition(item, s.c, plane, i);
            for c in 0..s.c {
                let p = (item[c * plane + i].as_f64() - lz).exp();
                let onehot = if c == l as usize { 1.0 } else { 0.0 };
                dst[c * plane + i] = T::of(k * (p - onehot));
            }
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, IGNORE_ID};

    #[test]
    fn uniform_logits_give_log_classes() {
        let logits = Tensor::<f32>::zeros(Shape::new(1, 19, 2, 3));
        let labels = LabelMap::filled(1, 2, 3, 4);
        let (loss, count) = cross_entropy(&logits, &labels, IGNORE_ID).unwrap();
        assert_eq!(count, 6);
        assert!((loss - 19f64.ln()).abs() < 1e-12);
        assert!((loss - 2.9444).abs() < 1e-4);
    }

    #[test]
    fn confident_logits_give_tiny_loss() {
        let labels = LabelMap::new(1, 1, 2, vec![0, 2]).unwrap();
        let logits = Tensor::<f32>::from_fn(Shape::new(1, 3, 1, 2), |_, c, _, x| if c == labels.at(0, 0, x) as usize { 20.0 } else { -20.0 });
        assert!(cross_entropy(&logits, &labels, IGNORE_ID).unwrap().0 < 1e-3);
    }

    #[test]
    fn all_ignored_is_zero_with_zero_grad() {
        let logits = Tensor::<f32>::full(Shape::new(2, 3, 2, 2), 1.5);
        let labels = LabelMap::filled(2, 2, 2, IGNORE_ID);
        let (loss, count) = cross_entropy(&logits, &labels, IGNORE_ID).unwrap();
        assert_eq!((loss, count), (0.0, 0));
        let g = cross_entropy_backward(&logits, &labels, IGNORE_ID, count, 1.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_range_label_rejected() {
        let logits = Tensor::<f32>::zeros(Shape::new(1, 3, 1, 1));
        let labels = LabelMap::filled(1, 1, 1, 3);
        assert!(cross_entropy(&logits, &labels, IGNORE_ID).is_err());
    }
}
