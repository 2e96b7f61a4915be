//! Forward and backward kernels for every primitive the network uses.
//!
//! Kernels are plain functions over [`Tensor`]s. The autograd tape in
//! [`crate::autograd`] pairs each forward kernel with its backward kernel.

mod activation;
mod conv;
mod loss;
mod norm;
mod pool;
mod resize;

pub use activation::{channel_argmax, channel_softmax, channel_softmax_backward, dropout_mask, relu, relu_backward};
pub use conv::{conv2d, conv2d_backward, depthwise_conv2d, depthwise_conv2d_backward, ConvParams, Geometry};
pub use loss::{cross_entropy, cross_entropy_backward};
pub use norm::{batch_norm_infer, batch_norm_infer_backward, batch_norm_train, batch_norm_train_backward, BatchStats, BN_EPS, BN_MOMENTUM};
pub use pool::{adaptive_avg_pool, adaptive_avg_pool_backward, pool_bounds};
pub use resize::{bilinear_resize, bilinear_resize_backward, nearest_index};

use crate::tensor::{Element, Tensor};

/// Output length and leading pad of a "same"-padded strided window.
///
/// Total padding is `max((ceil(in/s) - 1)·s + (k - 1)·d + 1 - in, 0)`,
/// split with the smaller half before the data.
pub fn same_padding(input: usize, kernel: usize, stride: usize, dilation: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let needed = (out - 1) * stride + (kernel - 1) * dilation + 1;
    let total = needed.saturating_sub(input);
    (out, total / 2)
}

/// Concatenate along the channel axis.
pub fn concat_channels<T: Element>(parts: &[&Tensor<T>]) -> crate::Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| crate::Error::invalid("concat of nothing"))?.shape();
    let mut channels = 0;
    for p in parts {
        let s = p.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(crate::Error::shape(format!("concat: {first} vs {s}")));
        }
        channels += s.c;
    }
    let out_shape = first.with_channels(channels);
    let mut data = Vec::with_capacity(out_shape.numel());
    for n in 0..first.n {
        for p in parts {
            data.extend_from_slice(p.item(n));
        }
    }
    Ok(Tensor::from_parts(out_shape, data))
}

/// Split a channel-axis gradient back into the concatenated parts.
pub fn split_channels<T: Element>(grad: &Tensor<T>, channels: &[usize]) -> Vec<Tensor<T>> {
    let s = grad.shape();
    let plane = s.plane();
    let mut outs: Vec<Vec<T>> = channels.iter().map(|c| Vec::with_capacity(s.n * c * plane)).collect();
    for n in 0..s.n {
        let item = grad.item(n);
        let mut start = 0;
        for (out, &c) in outs.iter_mut().zip(channels) {
            out.extend_from_slice(&item[start * plane..(start + c) * plane]);
            start += c;
        }
    }
    outs.into_iter().zip(channels).map(|(d, &c)| Tensor::from_parts(s.with_channels(c), d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn same_padding_halves_even_inputs() {
        assert_eq!(same_padding(1024, 3, 2, 1), (512, 0));
        assert_eq!(same_padding(7, 3, 2, 1), (4, 1));
        assert_eq!(same_padding(8, 3, 1, 1), (8, 1));
        assert_eq!(same_padding(8, 3, 1, 4), (8, 4));
        assert_eq!(same_padding(5, 1, 2, 1), (3, 0));
    }

    #[test]
    fn concat_then_split_restores_parts() {
        let a = Tensor::<f32>::from_fn(Shape::new(2, 1, 2, 2), |n, _, y, x| (n * 4 + y * 2 + x) as f32);
        let b = a.map(|v| -v);
        let b = Tensor::stack(std::slice::from_ref(&b)).unwrap();
        let joined = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(joined.shape(), Shape::new(2, 2, 2, 2));
        assert_eq!(joined.at(1, 1, 0, 1), -5.0);
        let parts = split_channels(&joined, &[1, 1]);
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }
}
