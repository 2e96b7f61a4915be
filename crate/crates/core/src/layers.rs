//! Primitive layers, the forward-pass context and symbolic shape tracing.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::ops::{BatchStats, ConvParams, BN_EPS, BN_MOMENTUM};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::tensor::{Element, Shape, Tensor};

/// Registers parameters and draws their initial values from one seeded stream.
///
/// Conv weights are uniform in `±sqrt(6 / fan_in)`; batch-norm layers start
/// at γ = 1, β = 0 with running mean 0 and variance 1.
pub struct ParamBuilder {
    store: ParamStore<f32>,
    rng: ChaCha8Rng,
}

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        ParamBuilder { store: ParamStore::new(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn finish(self) -> ParamStore<f32> {
        self.store
    }

    pub fn store(&self) -> &ParamStore<f32> {
        &self.store
    }

    fn conv_weight(&mut self, name: &str, kind: ParamKind, dims: [usize; 4]) -> Result<ParamId> {
        let [_, cin, kh, kw] = dims;
        let bound = (6.0 / (cin * kh * kw) as f64).sqrt();
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
        let value = Tensor::uniform(shape, -bound, bound, &mut self.rng);
        self.store.register(format!("{name}.weight"), kind, &dims, value)
    }

    fn vector(&mut self, name: String, kind: ParamKind, c: usize, fill: f32) -> Result<ParamId> {
        self.store.register(name, kind, &[c], Tensor::full(Shape::new(1, c, 1, 1), fill))
    }
}

/// Standard (dense 3×3), pointwise (1×1) or depthwise convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConvKind {
    Standard,
    Pointwise,
    Depthwise,
}

/// Operation performed by one traced layer.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerOp {
    Conv { kind: ConvKind, cin: usize, cout: usize, params: ConvParams },
    BatchNorm,
    Relu,
    AvgPool { bins: usize },
    Resize,
    Concat,
    Add { residual: bool },
    Dropout { p: f64 },
}

impl LayerOp {
    /// Short tag used in layer listings.
    pub fn tag(&self) -> &'static str {
        match self {
            LayerOp::Conv { kind: ConvKind::Standard, .. } => "conv2d",
            LayerOp::Conv { kind: ConvKind::Pointwise, .. } => "pwconv",
            LayerOp::Conv { kind: ConvKind::Depthwise, .. } => "dwconv",
            LayerOp::BatchNorm => "bn",
            LayerOp::Relu => "relu",
            LayerOp::AvgPool { .. } => "avgpool",
            LayerOp::Resize => "upsample",
            LayerOp::Concat => "concat",
            LayerOp::Add { residual: true } => "residual",
            LayerOp::Add { residual: false } => "add",
            LayerOp::Dropout { .. } => "dropout",
        }
    }
}

impl fmt::Display for LayerOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerOp::Conv { cin, cout, params, .. } => {
                write!(f, "{} {}x{}/{}", self.tag(), params.kernel, params.kernel, params.stride)?;
                if params.dilation > 1 {
                    write!(f, " d{}", params.dilation)?;
                }
                write!(f, " {cin}->{cout}")
            }
            LayerOp::AvgPool { bins } => write!(f, "avgpool {bins}x{bins}"),
            LayerOp::Dropout { p } => write!(f, "dropout {p}"),
            other => f.write_str(other.tag()),
        }
    }
}

/// One row of a symbolic shape trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub name: String,
    pub op: LayerOp,
    pub output: Shape,
    pub params: usize,
    /// Multiply-accumulates (convolutions only).
    pub macs: u64,
    /// Per-element operations (normalization, activation, resampling, ...).
    pub elementwise: u64,
}

/// Symbolic propagation result: one row per primitive layer, in execution order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: &str, op: LayerOp, output: Shape, params: usize, macs: u64, elementwise: u64) {
        self.rows.push(TraceRow { name: name.to_string(), op, output, params, macs, elementwise });
    }

    pub fn get(&self, name: &str) -> Option<&TraceRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Rows belonging to a block, i.e. named `prefix` or `prefix.*`.
    pub fn under<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a TraceRow> + 'a {
        self.rows.iter().filter(move |r| r.name == prefix || (r.name.starts_with(prefix) && r.name[prefix.len()..].starts_with('.')))
    }

    /// Op tags of a block in execution order.
    pub fn tags(&self, prefix: &str) -> Vec<&'static str> {
        self.under(prefix).map(|r| r.op.tag()).collect()
    }

    pub fn total_params(&self) -> usize {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn total_macs(&self) -> u64 {
        self.rows.iter().map(|r| r.macs).sum()
    }

    pub fn total_elementwise(&self) -> u64 {
        self.rows.iter().map(|r| r.elementwise).sum()
    }
}

/// Running-statistics update produced by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub mean: ParamId,
    pub var: ParamId,
    pub stats: BatchStats,
}

/// State of one forward pass: the tape, parameter leaves, mode and RNG.
pub struct Forward<'a, T: Element> {
    tape: Tape<T>,
    params: &'a ParamStore<T>,
    train: bool,
    rng: Option<ChaCha8Rng>,
    leaves: Vec<Option<Var<T>>>,
    bn_updates: Vec<BnUpdate>,
    observed: Option<Vec<(String, Shape)>>,
}

/// What a finished forward pass leaves behind for the backward pass.
pub struct Recording<T: Element> {
    pub tape: Tape<T>,
    pub leaves: Vec<(ParamId, Var<T>)>,
    pub bn_updates: Vec<BnUpdate>,
    pub observed: Vec<(String, Shape)>,
}

impl<'a, T: Element> Forward<'a, T> {
    /// Fully general constructor. `train` selects batch statistics and
    /// active dropout; the tape decides whether anything is recorded.
    pub fn new(params: &'a ParamStore<T>, tape: Tape<T>, train: bool, seed: u64) -> Self {
        Forward {
            tape,
            params,
            train,
            rng: train.then(|| ChaCha8Rng::seed_from_u64(seed)),
            leaves: vec![None; params.len()],
            bn_updates: Vec::new(),
            observed: None,
        }
    }

    /// Inference: running statistics, no dropout, nothing recorded.
    pub fn inference(params: &'a ParamStore<T>) -> Self {
        Self::new(params, Tape::inference(), false, 0)
    }

    /// Training: batch statistics, seeded dropout, recording tape.
    pub fn training(params: &'a ParamStore<T>, seed: u64) -> Self {
        Self::new(params, Tape::new(), true, seed)
    }

    /// Also log the output shape of every primitive layer.
    pub fn observing(mut self) -> Self {
        self.observed = Some(Vec::new());
        self
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn tape(&mut self) -> &mut Tape<T> {
        &mut self.tape
    }

    pub fn params(&self) -> &'a ParamStore<T> {
        self.params
    }

    /// The parameter as a tape leaf; created on first use.
    pub fn param(&mut self, id: ParamId) -> Var<T> {
        if let Some(v) = &self.leaves[id.index()] {
            return v.clone();
        }
        let trainable = self.params.get(id).kind().trainable();
        let v = self.tape.leaf_shared(self.params.shared_value(id), trainable);
        self.leaves[id.index()] = Some(v.clone());
        v
    }

    pub(crate) fn observe(&mut self, name: &str, v: &Var<T>) {
        if let Some(log) = &mut self.observed {
            log.push((name.to_string(), v.shape()));
        }
    }

    pub fn finish(self) -> Recording<T> {
        Recording {
            tape: self.tape,
            leaves: self.params.ids().zip(self.leaves).filter_map(|(id, v)| v.map(|v| (id, v))).collect(),
            bn_updates: self.bn_updates,
            observed: self.observed.unwrap_or_default(),
        }
    }
}

impl<T: Element> Recording<T> {
    /// Run backward from `loss` and add parameter gradients into `store`.
    ///
    /// Tracked parameters the loss does not reach receive a zero gradient.
    pub fn backward_into(self, loss: &Var<T>, store: &mut ParamStore<T>) -> Result<Vec<BnUpdate>> {
        let grads: Gradients<T> = self.tape.backward(loss)?;
        for (id, var) in &self.leaves {
            if !var.requires_grad() {
                continue;
            }
            match grads.get(var) {
                Some(g) => store.accumulate_grad(*id, g)?,
                None => store.accumulate_grad(*id, &Tensor::zeros(var.shape()))?,
            }
        }
        Ok(self.bn_updates)
    }
}

/// Fold batch statistics into the running averages: `new = 0.99·old + 0.01·batch`.
pub fn apply_bn_updates<T: Element>(store: &mut ParamStore<T>, updates: &[BnUpdate]) {
    for u in updates {
        for (id, batch) in [(u.mean, &u.stats.mean), (u.var, &u.stats.var)] {
            let t = store.value_mut(id);
            for (r, &b) in t.data_mut().iter_mut().zip(batch) {
                *r = T::of((1.0 - BN_MOMENTUM) * r.as_f64() + BN_MOMENTUM * b);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub name: String,
    pub kind: ConvKind,
    pub cin: usize,
    pub cout: usize,
    pub params: ConvParams,
    pub weight: ParamId,
}

impl Conv {
    pub fn new(b: &mut ParamBuilder, name: &str, kind: ConvKind, cin: usize, cout: usize, params: ConvParams) -> Result<Self> {
        let (dims, pkind) = match kind {
            ConvKind::Depthwise => {
                if cin != cout {
                    return Err(Error::invalid(format!("{name}: depthwise conv needs cin == cout, got {cin}->{cout}")));
                }
                ([cin, 1, params.kernel, params.kernel], ParamKind::DepthwiseConv)
            }
            ConvKind::Pointwise => {
                if params.kernel != 1 {
                    return Err(Error::invalid(format!("{name}: pointwise conv with kernel {}", params.kernel)));
                }
                ([cout, cin, 1, 1], ParamKind::PointwiseConv)
            }
            ConvKind::Standard => ([cout, cin, params.kernel, params.kernel], ParamKind::StandardConv),
        };
        let weight = b.conv_weight(name, pkind, dims)?;
        Ok(Conv { name: name.to_string(), kind, cin, cout, params, weight })
    }

    pub fn param_count(&self) -> usize {
        let k2 = self.params.kernel * self.params.kernel;
        match self.kind {
            ConvKind::Depthwise => self.cin * k2,
            _ => self.cin * self.cout * k2,
        }
    }

    pub fn forward<T: Element>(&self, f: &mut Forward<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let w = f.param(self.weight);
        let y = match self.kind {
            ConvKind::Depthwise => f.tape().depthwise_conv2d(x, &w, self.params),
            _ => f.tape().conv2d(x, &w, self.params),
        }
        .map_err(|e| e.in_layer(&self.name))?;
        f.observe(&self.name, &y);
        Ok(y)
    }

    pub fn trace(&self, input: Shape, t: &mut Trace) -> Result<Shape> {
        if input.c != self.cin {
            return Err(Error::Layer { layer: self.name.clone(), msg: format!("expects {} input channels, got shape {input}", self.cin) });
        }
        let g = self.params.geometry(input.h, input.w);
        let out = Shape::new(input.n, self.cout, g.oh, g.ow);
        let k2 = (self.params.kernel * self.params.kernel) as u64;
        let per_pixel = match self.kind {
            ConvKind::Depthwise => self.cout as u64 * k2,
            _ => (self.cout * self.cin) as u64 * k2,
        };
        let macs = (out.n * out.plane()) as u64 * per_pixel;
        let op = LayerOp::Conv { kind: self.kind, cin: self.cin, cout: self.cout, params: self.params };
        t.push(&self.name, op, out, self.param_count(), macs, 0);
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub name: String,
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new(b: &mut ParamBuilder, name: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            name: name.to_string(),
            channels,
            gamma: b.vector(format!("{name}.gamma"), ParamKind::BnGamma, channels, 1.0)?,
            beta: b.vector(format!("{name}.beta"), ParamKind::BnBeta, channels, 0.0)?,
            running_mean: b.vector(format!("{name}.running_mean"), ParamKind::RunningMean, channels, 0.0)?,
            running_var: b.vector(format!("{name}.running_var"), ParamKind::RunningVar, channels, 1.0)?,
        })
    }

    pub fn forward<T: Element>(&self, f: &mut Forward<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let gamma = f.param(self.gamma);
        let beta = f.param(self.beta);
        let y = if f.is_training() {
            let (y, stats) = f.tape().batch_norm_train(x, &gamma, &beta, BN_EPS).map_err(|e| e.in_layer(&self.name))?;
            f.bn_updates.push(BnUpdate { mean: self.running_mean, var: self.running_var, stats });
            y
        } else {
            let params = f.params();
            let (m, v) = (params.value(self.running_mean), params.value(self.running_var));
            f.tape().batch_norm_infer(x, &gamma, &beta, m, v, BN_EPS).map_err(|e| e.in_layer(&self.name))?
        };
        f.observe(&self.name, &y);
        Ok(y)
    }

    pub fn trace(&self, input: Shape, t: &mut Trace) -> Result<Shape> {
        if input.c != self.channels {
            return Err(Error::Layer { layer: self.name.clone(), msg: format!("expects {} channels, got shape {input}", self.channels) });
        }
        t.push(&self.name, LayerOp::BatchNorm, input, 2 * self.channels, 0, input.numel() as u64);
        Ok(input)
    }
}

#[derive(Clone, Debug)]
pub struct Relu {
    pub name: String,
}

impl Relu {
    pub fn new(name: &str) -> Self {
        Relu { name: name.to_string() }
    }

    pub fn forward<T: Element>(&self, f: &mut Forward<'_, T>, x: &Var<T>) -> Var<T> {
        let y = f.tape().relu(x);
        f.observe(&self.name, &y);
        y
    }

    pub fn trace(&self, input: Shape, t: &mut Trace) -> Shape {
        t.push(&self.name, LayerOp::Relu, input, 0, 0, input.numel() as u64);
        input
    }
}

/// Bilinear resampling to a size fixed at call time.
#[derive(Clone, Debug)]
pub struct Upsample {
    pub name: String,
}

impl Upsample {
    pub fn new(name: &str) -> Self {
        Upsample { name: name.to_string() }
    }

    pub fn forward<T: Element>(&self, f: &mut Forward<'_, T>, x: &Var<T>, h: usize, w: usize) -> Result<Var<T>> {
        let y = f.tape().bilinear_resize(x, h, w).map_err(|e| e.in_layer(&self.name))?;
        f.observe(&self.name, &y);
        Ok(y)
    }

    pub fn trace(&self, input: Shape, h: usize, w: usize, t: &mut Trace) -> Shape {
        let out = input.with_spatial(h, w);
        let work = if (input.h, input.w) == (h, w) { 0 } else { out.numel() as u64 };
        t.push(&self.name, LayerOp::Resize, out, 0, 0, work);
        out
    }
}

#[derive(Clone, Debug)]
pub struct Dropout {
    pub name: String,
    pub p: f64,
}

impl Dropout {
    pub fn forward<T: Element>(&self, f: &mut Forward<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let p = self.p;
        // split borrows of the tape and the rng
        let rng = f.rng.as_mut();
        let y = f.tape.dropout(x, p, rng).map_err(|e| e.in_layer(&self.name))?;
        f.observe(&self.name, &y);
        Ok(y)
    }

    pub fn trace(&self, input: Shape, t: &mut Trace) -> Shape {
        t.push(&self.name, LayerOp::Dropout { p: self.p }, input, 0, 0, input.numel() as u64);
        input
    }
}

/// Record an element-wise add (plain or residual) in the trace.
pub(crate) fn trace_add(name: &str, shape: Shape, residual: bool, t: &mut Trace) {
    t.push(name, LayerOp::Add { residual }, shape, 0, 0, shape.numel() as u64);
}

pub(crate) fn trace_pool(name: &str, input: Shape, bins: usize, t: &mut Trace) -> Result<Shape> {
    if bins == 0 || bins > input.h || bins > input.w {
        return Err(Error::Layer { layer: name.to_string(), msg: format!("pool bins {bins} exceed spatial size of {input}") });
    }
    let out = input.with_spatial(bins, bins);
    t.push(name, LayerOp::AvgPool { bins }, out, 0, 0, input.numel() as u64);
    Ok(out)
}

pub(crate) fn trace_concat(name: &str, out: Shape, t: &mut Trace) {
    t.push(name, LayerOp::Concat, out, 0, 0, out.numel() as u64);
}
