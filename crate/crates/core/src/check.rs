//! Independent reference implementations and the self-test suites built on
//! them: nested-loop convolution oracles, a finite-difference gradient
//! checker, and structural checks of the assembled network.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::blocks::{AuxHead, Bottleneck, BottleneckSpec, Classifier, DsConv, Ffm, FfmSpec, Ppm, PpmSpec};
use crate::error::Result;
use crate::layers::{Forward, ParamBuilder};
use crate::model::{ModelConfig, ModelGraph, BOUNDARY_BLOCKS};
use crate::ops::{self, ConvParams, BN_EPS};
use crate::params::ParamStore;
use crate::tensor::{LabelMap, Shape, Tensor};

/// Leading pad and output length of "same" padding, computed directly.
fn same_pad(len: usize, k: usize, s: usize, d: usize) -> (usize, isize) {
    let out = len.div_ceil(s);
    let span = (k - 1) * d + 1;
    let total = ((out - 1) * s + span).saturating_sub(len);
    (out, (total / 2) as isize)
}

/// Direct cross-correlation with zero padding, accumulated in f64.
/// `groups` is 1 for a dense conv and `c` for a depthwise one.
pub fn naive_conv(input: &Tensor<f64>, weight: &Tensor<f64>, stride: usize, dilation: usize, groups: usize) -> Tensor<f64> {
    let is = input.shape();
    let ws = weight.shape();
    let k = ws.h;
    let (oh, pt) = same_pad(is.h, k, stride, dilation);
    let (ow, pl) = same_pad(is.w, k, stride, dilation);
    let cout = ws.n;
    let cin_g = is.c / groups;
    let cout_g = cout / groups;
    Tensor::from_fn(Shape::new(is.n, cout, oh, ow), |n, co, oy, ox| {
        let g = co / cout_g;
        let mut acc = 0.0;
        for ci in 0..cin_g {
            for ky in 0..k {
                for kx in 0..k {
                    let iy = (oy * stride + ky * dilation) as isize - pt;
                    let ix = (ox * stride + kx * dilation) as isize - pl;
                    if iy < 0 || ix < 0 || iy >= is.h as isize || ix >= is.w as isize {
                        continue;
                    }
                    acc += input.at(n, g * cin_g + ci, iy as usize, ix as usize) * weight.at(co, ci, ky, kx);
                }
            }
        }
        acc
    })
}

/// `max|a − b| / max|b|`, with the denominator floored at 1e-12.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    diff / scale.max(1e-12)
}

/// Outcome of one self-test suite.
#[derive(Clone, Debug)]
pub struct SuiteOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl SuiteOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        SuiteOutcome { name, passed, detail }
    }
}

/// One randomized oracle comparison.
#[derive(Clone, Debug)]
pub struct OracleCase {
    pub depthwise: bool,
    pub input: Shape,
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub error: f64,
}

/// Compare the f32 convolution kernels against [`naive_conv`] on `cases`
/// random configurations up to (2,4,8,8) with strides {1,2}, dilations {1,2,4}.
pub fn oracle_cases(cases: usize, seed: u64) -> Vec<OracleCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cases)
        .map(|i| {
            let depthwise = i % 2 == 1;
            let input = Shape::new(rng.random_range(1..=2), rng.random_range(1..=4), rng.random_range(1..=8), rng.random_range(1..=8));
            let kernel = *[1usize, 3].choose(&mut rng).unwrap();
            let stride = *[1usize, 2].choose(&mut rng).unwrap();
            let dilation = *[1usize, 2, 4].choose(&mut rng).unwrap();
            let cout = if depthwise { input.c } else { rng.random_range(1..=4) };
            let ws = if depthwise { Shape::new(input.c, 1, kernel, kernel) } else { Shape::new(cout, input.c, kernel, kernel) };
            let x = Tensor::<f32>::uniform(input, -1.0, 1.0, &mut rng);
            let w = Tensor::<f32>::uniform(ws, -1.0, 1.0, &mut rng);
            let p = ConvParams::new(kernel, stride, dilation).expect("positive params");
            let got = if depthwise { ops::depthwise_conv2d(&x, &w, p) } else { ops::conv2d(&x, &w, p) }.expect("consistent shapes");
            let want = naive_conv(&x.cast(), &w.cast(), stride, dilation, if depthwise { input.c } else { 1 });
            let error = if got.shape() == want.shape() { relative_error(got.cast::<f64>().data(), want.data()) } else { f64::INFINITY };
            OracleCase { depthwise, input, kernel, stride, dilation, error }
        })
        .collect()
}

pub const ORACLE_TOLERANCE: f64 = 1e-5;

pub fn oracle_suite(cases: usize, seed: u64) -> SuiteOutcome {
    let results = oracle_cases(cases, seed);
    let worst = results.iter().max_by(|a, b| a.error.total_cmp(&b.error)).expect("at least one case");
    let passed = worst.error <= ORACLE_TOLERANCE;
    SuiteOutcome::new("oracle", passed, format!("{} cases, worst relative error {:.2e} ({:?})", results.len(), worst.error, worst))
}

/// Finite-difference settings.
#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Coordinates sampled per tensor (all of them when the tensor is smaller).
    pub samples: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { step: 1e-3, samples: 24, seed: 7 }
    }
}

impl GradCheckOptions {
    /// Settings for composite blocks. Their ReLUs sit behind batch norm, so
    /// many pre-activations lie within 1e-3 of the kink; the smaller step
    /// keeps the difference quotient on one side of it.
    pub fn blocks() -> Self {
        GradCheckOptions { step: 1e-6, ..Self::default() }
    }
}

pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Per-tensor gradient errors of one checked function.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub name: String,
    /// `(tensor, relative error)` with the error
    /// `‖numeric − analytic‖₂ / max(‖numeric‖₂, ‖analytic‖₂, 1e-3·G)` over
    /// the sampled coordinates, where `G` is the largest analytic norm of any
    /// tensor in the report. The floor keeps tensors whose true gradient
    /// vanishes (a BN shift followed by another BN) from dividing noise by zero.
    pub tensors: Vec<(String, f64)>,
}

impl GradReport {
    pub fn worst(&self) -> f64 {
        self.tensors.iter().map(|t| t.1).fold(0.0, f64::max)
    }
}

/// A function of some input tensors and a parameter store, evaluated inside a
/// forward context.
pub trait Checked {
    fn eval(&self, f: &mut Forward<'_, f64>, inputs: &[Var<f64>]) -> Result<Var<f64>>;
}

impl<F> Checked for F
where
    F: Fn(&mut Forward<'_, f64>, &[Var<f64>]) -> Result<Var<f64>>,
{
    fn eval(&self, f: &mut Forward<'_, f64>, inputs: &[Var<f64>]) -> Result<Var<f64>> {
        self(f, inputs)
    }
}

/// Check the analytic gradient of `⟨g(inputs, params), r⟩` for a fixed random
/// `r` against central differences, for every input and trainable parameter.
///
/// `train` selects batch statistics and dropout; the dropout stream is
/// reseeded for every evaluation so the mask stays fixed.
pub fn check_gradients(
    name: &str,
    g: &dyn Checked,
    inputs: &[Tensor<f64>],
    params: &ParamStore<f64>,
    train: bool,
    opts: GradCheckOptions,
) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let value = |inputs: &[Tensor<f64>], params: &ParamStore<f64>| -> Result<Var<f64>> {
        let mut f = Forward::new(params, Tape::inference(), train, opts.seed);
        let vars: Vec<Var<f64>> = inputs.iter().map(|x| Var::constant(x.clone())).collect();
        g.eval(&mut f, &vars)
    };

    let probe = value(inputs, params)?;
    let r = Tensor::<f64>::uniform(probe.shape(), -1.0, 1.0, &mut rng);
    let loss_of = |out: &Var<f64>| out.value().data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>();

    let mut f = Forward::new(params, Tape::new(), train, opts.seed);
    let vars: Vec<Var<f64>> = inputs.iter().map(|x| f.tape().leaf(x.clone(), true)).collect();
    let out = g.eval(&mut f, &vars)?;
    let loss = f.tape().dot(&out, &r)?;
    let rec = f.finish();
    let grads = rec.tape.backward(&loss)?;
    let zeros = |s: Shape| Tensor::<f64>::zeros(s);
    let input_grads: Vec<Tensor<f64>> = vars.iter().map(|v| grads.get(v).cloned().unwrap_or_else(|| zeros(v.shape()))).collect();
    let mut param_grads: Vec<Option<Tensor<f64>>> = vec![None; params.len()];
    for (id, v) in &rec.leaves {
        if v.requires_grad() {
            param_grads[id.index()] = Some(grads.get(v).cloned().unwrap_or_else(|| zeros(v.shape())));
        }
    }

    let mut tensors = Vec::new();
    let h = opts.step;
    let numeric_for = |len: usize, perturb: &mut dyn FnMut(usize, f64) -> Result<f64>, rng: &mut ChaCha8Rng| -> Result<Vec<(usize, f64)>> {
        let coords: Vec<usize> = if len <= opts.samples { (0..len).collect() } else { rand::seq::index::sample(rng, len, opts.samples).into_vec() };
        coords
            .into_iter()
            .map(|i| {
                let plus = perturb(i, h)?;
                let minus = perturb(i, -h)?;
                Ok((i, (plus - minus) / (2.0 * h)))
            })
            .collect()
    };

    for (k, x) in inputs.iter().enumerate() {
        let mut perturb = |i: usize, d: f64| -> Result<f64> {
            let mut moved = inputs.to_vec();
            moved[k].data_mut()[i] += d;
            let out = value(&moved, params)?;
            Ok(loss_of(&out))
        };
        let numeric = numeric_for(x.numel(), &mut perturb, &mut rng)?;
        tensors.push((format!("input{k}"), norms(&numeric, input_grads[k].data())));
    }
    for (id, p) in params.iter() {
        let Some(analytic) = &param_grads[id.index()] else { continue };
        let mut perturb = |i: usize, d: f64| -> Result<f64> {
            let mut moved = params.clone();
            moved.value_mut(id).data_mut()[i] += d;
            let out = value(inputs, &moved)?;
            Ok(loss_of(&out))
        };
        let numeric = numeric_for(p.numel(), &mut perturb, &mut rng)?;
        tensors.push((p.name().to_string(), norms(&numeric, analytic.data())));
    }
    let floor = 1e-3 * tensors.iter().map(|t| t.1[2]).fold(0.0, f64::max);
    let tensors = tensors.into_iter().map(|(n, [diff, num, ana])| (n, diff / num.max(ana).max(floor).max(f64::MIN_POSITIVE))).collect();
    Ok(GradReport { name: name.to_string(), tensors })
}

/// `[‖numeric − analytic‖₂, ‖numeric‖₂, ‖analytic‖₂]` over the sampled coordinates.
fn norms(numeric: &[(usize, f64)], analytic: &[f64]) -> [f64; 3] {
    let (mut diff, mut n2, mut a2) = (0.0, 0.0, 0.0);
    for &(i, g) in numeric {
        let a = analytic[i];
        diff += (g - a) * (g - a);
        n2 += g * g;
        a2 += a * a;
    }
    [diff.sqrt(), n2.sqrt(), a2.sqrt()]
}

fn uniform(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Inputs kept away from zero so ±step never crosses the ReLU kink.
fn off_zero(shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let t = uniform(shape, rng);
    t.map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 })
}

/// Gradient reports for every differentiable primitive.
pub fn primitive_gradients(opts: GradCheckOptions) -> Result<Vec<GradReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    let empty = ParamStore::<f64>::new();
    let s = Shape::new(2, 3, 5, 6);
    let mut out = Vec::new();
    let mut check = |name: &str, g: &dyn Checked, inputs: Vec<Tensor<f64>>, train: bool| -> Result<()> {
        out.push(check_gradients(name, g, &inputs, &empty, train, opts)?);
        Ok(())
    };

    for (stride, dilation) in [(1, 1), (2, 1), (1, 2), (2, 4)] {
        let p = ConvParams::new(3, stride, dilation)?;
        let conv = move |f: &mut Forward<'_, f64>, v: &[Var<f64>]| f.tape().conv2d(&v[0], &v[1], p);
        check(&format!("conv2d s{stride} d{dilation}"), &conv, vec![uniform(s, &mut rng), uniform(Shape::new(4, 3, 3, 3), &mut rng)], false)?;
        let dw = move |f: &mut Forward<'_, f64>, v: &[Var<f64>]| f.tape().depthwise_conv2d(&v[0], &v[1], p);
        check(&format!("depthwise_conv2d s{stride} d{dilation}"), &dw, vec![uniform(s, &mut rng), uniform(Shape::new(3, 1, 3, 3), &mut rng)], false)?;
    }
    let pw = |f: &mut Forward<'_, f64>, v: &[Var<f64>]| f.tape().conv2d(&v[0], &v[1], ConvParams::pointwise());
    check("conv2d 1x1", &pw, vec![uniform(s, &mut rng), uniform(Shape::new(4, 3, 1, 1), &mut rng)], false)?;

    let affine = Shape::new(1, 3, 1, 1);
    let bn_train = |f: &mut Forward<'_, f64>, v: &[Var<f64>]| Ok(f.tape().batch_norm_train(&v[0], &v[1], &v[2], BN_EPS)?.0);
    check("batch_norm train", &bn_train, vec![uniform(s, &mut rng), uniform(affine, &mut rng), uniform(affine, &mut rng)], true)?;
    let (rm, rv) = (uniform(affine, &mut rng), uniform(affine, &mut rng).map(|v| v.abs() + 0.5));
    let bn_infer = move |f: &mut Forward<'_, f64>, v: &[Var<f64>]| f.tape().batch_norm_infer(&v[0], &v[1], &v[2], &rm, &rv, BN_EPS);
    check("batch_norm infer", &bn_infer, vec![uniform(s, &mut rng), uniform(affine, &mut rng), uniform(affine, &mut rng)], false)?;

    let relu = |f: &mut Forward<'_, f64>, v: &[Var<f64>]| Ok(f.tape().relu(&v[0]));
    check("relu", &relu, vec![off_zero(s, &mut rng)], false)?;
    for bins in [1, 2, 3] {
        let pool = move |f: &mut Forward<'_, f64>, v: &[Var<f64>]| f.tape().adaptive_avg_pool(&v[0], (bins, bins));
        check(&format!("adaptive_avg_pool {bins}"), &pool, vec![uniform(s, &mut rng)], false)?;
    }
    for (h, w) in [(10, 12), (3, 4), (7, 13)] {
        let up = move |f: &mut Forward<'_, f64>, v: &[Var<f64>]| f.tape().bilinear_resize(&v[0], h, w);
        check(&format!("bilinear_resize {h}x{w}"), &up, vec![uniform(s, &mut rng)], false)?;
    }
    let drop = |f: &mut Forward<'_, f64>, v: &[Var<f64>]| {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(3);
        f.tape().dropout(&v[0], 0.3, Some(&mut mask_rng))
    };
    check("dropout", &drop, vec![uniform(s, &mut rng)], true)?;
    let softmax = |f: &mut Forward<'_, f64>, v: &[Var<f64>]| Ok(f.tape().channel_softmax(&v[0]));
    check("channel_softmax", &softmax, vec![uniform(s, &mut rng).map(|v| 3.0 * v)], false)?;
    let concat = |f: &mut Forward<'_, f64>, v: &[Var<f64>]| f.tape().concat_channels(&[&v[0], &v[1]]);
    check("concat_channels", &concat, vec![uniform(s, &mut rng), uniform(s.with_channels(2), &mut rng)], false)?;
    let add = |f: &mut Forward<'_, f64>, v: &[Var<f64>]| f.tape().add(&v[0], &v[1]);
    check("add", &add, vec![uniform(s, &mut rng), uniform(s, &mut rng)], false)?;

    let labels = LabelMap::new(2, 5, 6, (0..60).map(|i| if i % 7 == 0 { 255 } else { (i % 3) as u8 }).collect())?;
    let ce = move |f: &mut Forward<'_, f64>, v: &[Var<f64>]| f.tape().cross_entropy(&v[0], &labels, 255);
    check("cross_entropy", &ce, vec![uniform(s, &mut rng).map(|v| 2.0 * v)], false)?;
    Ok(out)
}

/// Build a block with fresh parameters and check its gradients in both
/// normalization modes.
fn check_block<B>(
    name: &str,
    build: impl FnOnce(&mut ParamBuilder) -> Result<B>,
    forward: impl Fn(&B, &mut Forward<'_, f64>, &[Var<f64>]) -> Result<Var<f64>>,
    inputs: Vec<Tensor<f64>>,
    opts: GradCheckOptions,
) -> Result<Vec<GradReport>> {
    let mut b = ParamBuilder::new(opts.seed);
    let block = build(&mut b)?;
    let mut store: ParamStore<f64> = b.finish().cast();
    // non-trivial running statistics and affine terms
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xb10c);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        use crate::params::ParamKind::*;
        let kind = store.get(id).kind();
        let t = store.value_mut(id);
        for v in t.data_mut() {
            match kind {
                BnGamma => *v = rng.random_range(0.5..1.5),
                BnBeta | RunningMean => *v = rng.random_range(-0.5..0.5),
                RunningVar => *v = rng.random_range(0.5..2.0),
                _ => {}
            }
        }
    }
    let g = |f: &mut Forward<'_, f64>, v: &[Var<f64>]| forward(&block, f, v);
    Ok(vec![
        check_gradients(&format!("{name} (train)"), &g, &inputs, &store, true, opts)?,
        check_gradients(&format!("{name} (infer)"), &g, &inputs, &store, false, opts)?,
    ])
}

/// Gradient reports for every composite block, in training and inference mode.
pub fn block_gradients(opts: GradCheckOptions) -> Result<Vec<GradReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xb1);
    let mut out = Vec::new();
    out.extend(check_block(
        "dsconv",
        |b| DsConv::new(b, "ds", 4, 6, 2),
        |m, f, v| m.forward(f, &v[0]),
        vec![uniform(Shape::new(2, 4, 6, 7), &mut rng)],
        opts,
    )?);
    out.extend(check_block(
        "bottleneck s2",
        |b| Bottleneck::new(b, "bn", BottleneckSpec { t: 2, c_in: 4, c_out: 6, s: 2 }),
        |m, f, v| m.forward(f, &v[0]),
        vec![uniform(Shape::new(2, 4, 6, 6), &mut rng)],
        opts,
    )?);
    out.extend(check_block(
        "bottleneck residual",
        |b| Bottleneck::new(b, "bn", BottleneckSpec { t: 3, c_in: 4, c_out: 4, s: 1 }),
        |m, f, v| m.forward(f, &v[0]),
        vec![uniform(Shape::new(2, 4, 5, 5), &mut rng)],
        opts,
    )?);
    out.extend(check_block(
        "ppm",
        |b| Ppm::new(b, "ppm", 6, PpmSpec { bins: vec![1, 2, 3], c_out: 5 }),
        |m, f, v| m.forward(f, &v[0]),
        vec![uniform(Shape::new(2, 6, 6, 7), &mut rng)],
        opts,
    )?);
    out.extend(check_block(
        "ffm",
        |b| Ffm::new(b, "ffm", 3, 4, FfmSpec { x: 2, c_out: 5 }),
        |m, f, v| m.forward(f, &v[0], &v[1]),
        vec![uniform(Shape::new(2, 3, 8, 6), &mut rng), uniform(Shape::new(2, 4, 4, 3), &mut rng)],
        opts,
    )?);
    out.extend(check_block(
        "classifier",
        |b| Classifier::new(b, "cls", 4, 5, 3, 0.1),
        |m, f, v| m.forward(f, &v[0], 12, 10),
        vec![uniform(Shape::new(2, 4, 6, 5), &mut rng)],
        opts,
    )?);
    out.extend(check_block(
        "aux head",
        |b| AuxHead::new(b, "aux", 4, 3),
        |m, f, v| m.forward(f, &v[0], 8, 8),
        vec![uniform(Shape::new(2, 4, 4, 4), &mut rng)],
        opts,
    )?);
    Ok(out)
}

pub fn gradient_suite(seed: u64) -> SuiteOutcome {
    let reports = primitive_gradients(GradCheckOptions { seed, ..Default::default() }).and_then(|mut p| {
        p.extend(block_gradients(GradCheckOptions { seed, ..GradCheckOptions::blocks() })?);
        Ok(p)
    });
    match reports {
        Err(e) => SuiteOutcome::new("gradient", false, format!("error: {e}")),
        Ok(reports) => {
            let failing: Vec<String> =
                reports.iter().filter(|r| !(r.worst() <= GRAD_TOLERANCE)).map(|r| format!("{} ({:.2e})", r.name, r.worst())).collect();
            let worst = reports.iter().map(GradReport::worst).fold(0.0, f64::max);
            if failing.is_empty() {
                SuiteOutcome::new("gradient", true, format!("{} checks, worst relative error {worst:.2e}", reports.len()))
            } else {
                SuiteOutcome::new("gradient", false, format!("failing: {}", failing.join(", ")))
            }
        }
    }
}

/// Output (h, w, c) of each boundary block for a 1024×2048 input.
pub const REFERENCE_BOUNDARIES: [(usize, usize, usize); 9] =
    [(512, 1024, 32), (256, 512, 48), (128, 256, 64), (64, 128, 64), (32, 64, 96), (32, 64, 128), (32, 64, 128), (128, 256, 128), (128, 256, 128)];

/// Compare the boundary shapes of `config`'s network at 1024×2048 (and at
/// half and quarter size) with the reference, naming the first diverging
/// layer on failure.
pub fn shape_trace_suite(config: &ModelConfig) -> SuiteOutcome {
    let name = "shape-trace";
    let graph = match ModelGraph::build(ModelConfig { input_h: 1024, input_w: 2048, ..config.clone() }) {
        Ok(g) => g,
        Err(e) => return SuiteOutcome::new(name, false, format!("build failed: {e}")),
    };
    for div in [1, 2, 4] {
        let (h, w) = (1024 / div, 2048 / div);
        let got = match graph.boundary_shapes(h, w) {
            Ok(s) => s,
            Err(e) => return SuiteOutcome::new(name, false, format!("{h}x{w}: {e}")),
        };
        for ((block, shape), &(rh, rw, rc)) in got.iter().zip(&REFERENCE_BOUNDARIES) {
            let want = Shape::new(1, rc, rh / div, rw / div);
            if *shape != want {
                let layer = first_divergent_layer(&graph, h, w).unwrap_or_else(|| block.clone());
                return SuiteOutcome::new(
                    name,
                    false,
                    format!("{h}x{w}: block {block} produced {shape}, expected {want}; first divergent layer {layer}"),
                );
            }
        }
    }
    SuiteOutcome::new(name, true, format!("{} boundary shapes match at 1024x2048, 512x1024, 256x512", BOUNDARY_BLOCKS.len()))
}

/// First primitive layer whose output differs from the default network's trace.
fn first_divergent_layer(graph: &ModelGraph, h: usize, w: usize) -> Option<String> {
    let reference =
        ModelGraph::build(ModelConfig { input_h: 1024, input_w: 2048, num_classes: graph.config().num_classes, ..ModelConfig::default() }).ok()?;
    let want = reference.shape_trace(h, w).ok()?;
    let got = graph.shape_trace(h, w).ok()?;
    got.iter().zip(&want).find(|(a, b)| a != b).map(|(a, _)| a.0.clone())
}

pub const REFERENCE_PARAMS: usize = 1_110_000;
pub const LDS_PARAMS: usize = 6_640;

pub fn param_count_suite(config: &ModelConfig) -> SuiteOutcome {
    let name = "param-count";
    let graph = match ModelGraph::build(ModelConfig { train: true, ..config.clone() }) {
        Ok(g) => g,
        Err(e) => return SuiteOutcome::new(name, false, format!("build failed: {e}")),
    };
    let report = graph.count_params();
    let lds: usize = report.per_layer.iter().filter(|(n, _)| n.starts_with("lds.")).map(|(_, p)| p).sum();
    let ratio = report.total as f64 / REFERENCE_PARAMS as f64;
    let passed = lds == LDS_PARAMS && (0.95..=1.05).contains(&ratio);
    SuiteOutcome::new(
        name,
        passed,
        format!("lds={lds} (expected {LDS_PARAMS}) total={} with_aux={} ratio={ratio:.4}", report.total, report.total_with_aux()),
    )
}
