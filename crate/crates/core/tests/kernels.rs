//! Primitive kernels against independent oracles, and the gradient checks.

use fastscnn::autograd::Tape;
use fastscnn::check::*;
use fastscnn::ops::{self, same_padding, ConvParams};
use fastscnn::{Shape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn oracle_suite_over_many_cases() {
    let cases = oracle_cases(400, 11);
    assert!(cases.len() >= 200);
    for c in &cases {
        assert!(c.error <= ORACLE_TOLERANCE, "{c:?}");
    }
    let strides: std::collections::BTreeSet<_> = cases.iter().map(|c| (c.depthwise, c.stride, c.dilation)).collect();
    assert_eq!(strides.len(), 12, "every (kind, stride, dilation) combination is exercised");
}

#[test]
fn small_dense_conv_matches_loops() {
    let mut r = rng(1);
    let x = Tensor::<f64>::uniform(Shape::new(1, 2, 4, 4), -1.0, 1.0, &mut r);
    let w = Tensor::<f64>::uniform(Shape::new(3, 2, 3, 3), -1.0, 1.0, &mut r);
    let got = ops::conv2d(&x, &w, ConvParams::k3(1)).unwrap();
    let want = naive_conv(&x, &w, 1, 1, 1);
    assert!(relative_error(got.data(), want.data()) < 1e-12);
}

#[test]
fn dilated_depthwise_matches_loops() {
    let mut r = rng(2);
    let x = Tensor::<f32>::uniform(Shape::new(1, 3, 6, 6), -1.0, 1.0, &mut r);
    let w = Tensor::<f32>::uniform(Shape::new(3, 1, 3, 3), -1.0, 1.0, &mut r);
    let got = ops::depthwise_conv2d(&x, &w, ConvParams::new(3, 1, 4).unwrap()).unwrap();
    let want = naive_conv(&x.cast(), &w.cast(), 1, 4, 3);
    assert!(relative_error(got.cast::<f64>().data(), want.data()) <= 1e-5);
}

#[test]
fn stem_conv_halves_full_resolution() {
    let x = Tensor::<f32>::zeros(Shape::new(1, 3, 1024, 2048));
    let w = Tensor::<f32>::zeros(Shape::new(32, 3, 3, 3));
    assert_eq!(ops::conv2d(&x, &w, ConvParams::k3(2)).unwrap().shape(), Shape::new(1, 32, 512, 1024));
}

#[test]
fn depthwise_stride_two_halves() {
    let x = Tensor::<f32>::uniform(Shape::new(1, 12, 10, 14), -1.0, 1.0, &mut rng(3));
    let w = Tensor::<f32>::uniform(Shape::new(12, 1, 3, 3), -1.0, 1.0, &mut rng(4));
    assert_eq!(ops::depthwise_conv2d(&x, &w, ConvParams::k3(2)).unwrap().shape(), Shape::new(1, 12, 5, 7));
}

#[test]
fn two_by_two_upsampled_to_four() {
    let x = Tensor::<f64>::new(Shape::new(1, 1, 2, 2), vec![0.0, 2.0, 4.0, 6.0]).unwrap();
    let y = ops::bilinear_resize(&x, 4, 4).unwrap();
    // half-pixel source coordinates for 2 -> 4, clamped at the borders
    let src = |d: usize| ((d as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, 1.0);
    for i in 0..4 {
        for j in 0..4 {
            // the input is the linear field 4y + 2x, which bilinear reproduces
            let want = 4.0 * src(i) + 2.0 * src(j);
            assert!((y.at(0, 0, i, j) - want).abs() < 1e-12, "({i},{j})");
        }
    }
}

#[test]
fn constant_field_resizes_to_constant() {
    let x = Tensor::<f32>::full(Shape::new(1, 2, 5, 7), 0.3);
    for (h, w) in [(1, 1), (3, 11), (20, 28)] {
        let y = ops::bilinear_resize(&x, h, w).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.3));
        assert_eq!(ops::bilinear_resize(&y, 5, 7).unwrap(), x);
    }
}

#[test]
fn dropout_keeps_expectation() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(Tensor::full(Shape::new(1, 1, 1000, 1000), 1.0), false);
    let y = tape.dropout(&x, 0.5, Some(&mut rng(5))).unwrap();
    let mean = y.value().sum_f64() / 1e6;
    assert!((0.99..=1.01).contains(&mean), "mean {mean}");
    let id = tape.dropout(&x, 0.0, Some(&mut rng(5))).unwrap();
    assert_eq!(id.value(), x.value());
    let off = tape.dropout(&x, 0.5, None::<&mut ChaCha8Rng>).unwrap();
    assert_eq!(off.value(), x.value());
}

#[test]
fn uniform_logits_softmax() {
    let p = ops::channel_softmax(&Tensor::<f32>::zeros(Shape::new(1, 19, 2, 3)));
    assert!(p.data().iter().all(|&v| (v as f64 - 1.0 / 19.0).abs() < 1e-7));
}

#[test]
fn softmax_rows_and_argmax() {
    let x = Tensor::<f32>::uniform(Shape::new(1, 19, 25, 40), -8.0, 8.0, &mut rng(6));
    let p = ops::channel_softmax(&x);
    for y in 0..25 {
        for xx in 0..40 {
            let s: f64 = (0..19).map(|c| p.at(0, c, y, xx) as f64).sum();
            assert!((s - 1.0).abs() <= 1e-6);
        }
    }
    assert_eq!(ops::channel_argmax(&p), ops::channel_argmax(&x));
}

#[test]
fn gradient_suite_passes() {
    let primitives = primitive_gradients(GradCheckOptions::default()).unwrap();
    let blocks = block_gradients(GradCheckOptions::blocks()).unwrap();
    for r in primitives.iter().chain(&blocks) {
        assert!(r.worst() <= GRAD_TOLERANCE, "{} {:.3e}", r.name, r.worst());
    }
    let names: Vec<&str> = primitives.iter().chain(&blocks).map(|r| r.name.as_str()).collect();
    for needle in [
        "conv",
        "depthwise",
        "batch_norm",
        "relu",
        "pool",
        "resize",
        "dropout",
        "softmax",
        "concat",
        "cross_entropy",
        "dsconv",
        "bottleneck",
        "ppm",
        "ffm",
        "classifier",
    ] {
        assert!(names.iter().any(|n| n.contains(needle)), "no gradient check covers {needle}: {names:?}");
    }
}

proptest! {
    /// Every strided "same" op produces ceil(in / stride) outputs.
    #[test]
    fn same_padding_law(input in 1usize..200, k in prop::sample::select(vec![1usize, 3]), s in 1usize..=2, d in prop::sample::select(vec![1usize, 2, 4])) {
        let (out, pad) = same_padding(input, k, s, d);
        prop_assert_eq!(out, input.div_ceil(s));
        let p = ConvParams::new(k, s, d).unwrap();
        let x = Tensor::<f32>::zeros(Shape::new(1, 1, 1, input));
        let w = Tensor::<f32>::zeros(Shape::new(1, 1, k, k));
        prop_assert_eq!(ops::depthwise_conv2d(&x, &w, p).unwrap().shape().w, out);
        // the last window stays inside the padded input
        let total = ((out - 1) * s + (k - 1) * d + 1).saturating_sub(input);
        prop_assert_eq!(pad, total / 2);
    }

    /// Softmax never changes the winning channel.
    #[test]
    fn argmax_survives_softmax(v in proptest::collection::vec(-30.0f32..30.0, 19)) {
        let x = Tensor::new(Shape::new(1, 19, 1, 1), v).unwrap();
        prop_assert_eq!(ops::channel_argmax(&ops::channel_softmax(&x)), ops::channel_argmax(&x));
    }
}
