//! Composite blocks: DSConv, bottleneck, pyramid pooling, feature fusion and
//! the classifier and auxiliary heads.
//!
//! Every block offers a numeric `forward` over any [`Element`] type and a
//! symbolic `trace` that appends one [`TraceRow`](crate::layers::TraceRow)
//! per primitive layer.

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::layers::{trace_add, trace_concat, trace_pool, BatchNorm, Conv, ConvKind, Dropout, Forward, ParamBuilder, Relu, Trace, Upsample};
use crate::ops::ConvParams;
use crate::tensor::{Element, Shape};

/// Conv → BN → ReLU, used for the stem and the PPM projections.
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub conv: Conv,
    pub bn: BatchNorm,
    pub relu: Relu,
}

impl ConvBnRelu {
    pub fn new(b: &mut ParamBuilder, name: &str, kind: ConvKind, cin: usize, cout: usize, p: ConvParams) -> Result<Self> {
        Ok(ConvBnRelu {
            conv: Conv::new(b, &format!("{name}.conv"), kind, cin, cout, p)?,
            bn: BatchNorm::new(b, &format!("{name}.bn"), cout)?,
            relu: Relu::new(&format!("{name}.relu")),
        })
    }

    pub fn forward<T: Element>(&self, f: &mut Forward<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let y = self.conv.forward(f, x)?;
        let y = self.bn.forward(f, &y)?;
        Ok(self.relu.forward(f, &y))
    }

    pub fn trace(&self, input: Shape, t: &mut Trace) -> Result<Shape> {
        let s = self.conv.trace(input, t)?;
        let s = self.bn.trace(s, t)?;
        Ok(self.relu.trace(s, t))
    }
}

/// Depthwise 3×3 → BN → pointwise 1×1 → BN → ReLU. No activation between
/// the two convolutions.
#[derive(Clone, Debug)]
pub struct DsConv {
    pub dw: Conv,
    pub dw_bn: BatchNorm,
    pub pw: Conv,
    pub pw_bn: BatchNorm,
    pub relu: Relu,
}

impl DsConv {
    pub fn new(b: &mut ParamBuilder, name: &str, cin: usize, cout: usize, stride: usize) -> Result<Self> {
        Ok(DsConv {
            dw: Conv::new(b, &format!("{name}.dw"), ConvKind::Depthwise, cin, cin, ConvParams::new(3, stride, 1)?)?,
            dw_bn: BatchNorm::new(b, &format!("{name}.dw_bn"), cin)?,
            pw: Conv::new(b, &format!("{name}.pw"), ConvKind::Pointwise, cin, cout, ConvParams::pointwise())?,
            pw_bn: BatchNorm::new(b, &format!("{name}.pw_bn"), cout)?,
            relu: Relu::new(&format!("{name}.relu")),
        })
    }

    pub fn forward<T: Element>(&self, f: &mut Forward<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let y = self.dw.forward(f, x)?;
        let y = self.dw_bn.forward(f, &y)?;
        let y = self.pw.forward(f, &y)?;
        let y = self.pw_bn.forward(f, &y)?;
        Ok(self.relu.forward(f, &y))
    }

    pub fn trace(&self, input: Shape, t: &mut Trace) -> Result<Shape> {
        let s = self.dw.trace(input, t)?;
        let s = self.dw_bn.trace(s, t)?;
        let s = self.pw.trace(s, t)?;
        let s = self.pw_bn.trace(s, t)?;
        Ok(self.relu.trace(s, t))
    }
}

/// One row of the bottleneck table: expansion `t`, output width, stride.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BottleneckSpec {
    pub t: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub s: usize,
}

impl BottleneckSpec {
    pub fn expanded(&self) -> usize {
        self.t * self.c_in
    }

    pub fn residual(&self) -> bool {
        self.s == 1 && self.c_in == self.c_out
    }
}

/// Inverted residual block: expand 1×1 (BN, ReLU) → depthwise 3×3/s (BN, ReLU)
/// → project 1×1 (BN only), plus an identity skip when shapes allow.
#[derive(Clone, Debug)]
pub struct Bottleneck {
    pub name: String,
    pub spec: BottleneckSpec,
    pub expand: Conv,
    pub expand_bn: BatchNorm,
    pub expand_relu: Relu,
    pub dw: Conv,
    pub dw_bn: BatchNorm,
    pub dw_relu: Relu,
    pub project: Conv,
    pub project_bn: BatchNorm,
}

impl Bottleneck {
    pub fn new(b: &mut ParamBuilder, name: &str, spec: BottleneckSpec) -> Result<Self> {
        if spec.t == 0 {
            return Err(Error::invalid(format!("{name}: expansion factor must be >= 1")));
        }
        let e = spec.expanded();
        let n = |part: &str| format!("{name}.{part}");
        Ok(Bottleneck {
            name: name.to_string(),
            spec,
            expand: Conv::new(b, &n("expand"), ConvKind::Pointwise, spec.c_in, e, ConvParams::pointwise())?,
            expand_bn: BatchNorm::new(b, &n("expand_bn"), e)?,
            expand_relu: Relu::new(&n("expand_relu")),
            dw: Conv::new(b, &n("dw"), ConvKind::Depthwise, e, e, ConvParams::new(3, spec.s, 1)?)?,
            dw_bn: BatchNorm::new(b, &n("dw_bn"), e)?,
            dw_relu: Relu::new(&n("dw_relu")),
            project: Conv::new(b, &n("project"), ConvKind::Pointwise, e, spec.c_out, ConvParams::pointwise())?,
            project_bn: BatchNorm::new(b, &n("project_bn"), spec.c_out)?,
        })
    }

    pub fn residual(&self) -> bool {
        self.spec.residual()
    }

    fn residual_name(&self) -> String {
        format!("{}.residual", self.name)
    }

    pub fn forward<T: Element>(&self, f: &mut Forward<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let y = self.expand.forward(f, x)?;
        let y = self.expand_bn.forward(f, &y)?;
        let y = self.expand_relu.forward(f, &y);
        let y = self.dw.forward(f, &y)?;
        let y = self.dw_bn.forward(f, &y)?;
        let y = self.dw_relu.forward(f, &y);
        let y = self.project.forward(f, &y)?;
        let y = self.project_bn.forward(f, &y)?;
        if !self.residual() {
            return Ok(y);
        }
        let name = self.residual_name();
        let out = f.tape().add(x, &y).map_err(|e| e.in_layer(&name))?;
        f.observe(&name, &out);
        Ok(out)
    }

    pub fn trace(&self, input: Shape, t: &mut Trace) -> Result<Shape> {
        let s = self.expand.trace(input, t)?;
        let s = self.expand_bn.trace(s, t)?;
        let s = self.expand_relu.trace(s, t);
        let s = self.dw.trace(s, t)?;
        let s = self.dw_bn.trace(s, t)?;
        let s = self.dw_relu.trace(s, t);
        let s = self.project.trace(s, t)?;
        let s = self.project_bn.trace(s, t)?;
        if self.residual() {
            trace_add(&self.residual_name(), s, true, t);
        }
        Ok(s)
    }
}

/// `n` bottlenecks; only the first one strides and changes width.
#[derive(Clone, Debug)]
pub struct BottleneckGroup {
    pub name: String,
    pub blocks: Vec<Bottleneck>,
}

impl BottleneckGroup {
    pub fn new(b: &mut ParamBuilder, name: &str, spec: BottleneckSpec, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid(format!("{name}: repeat count must be >= 1")));
        }
        let blocks = (0..n)
            .map(|i| {
                let s = if i == 0 { spec } else { BottleneckSpec { c_in: spec.c_out, s: 1, ..spec } };
                Bottleneck::new(b, &format!("{name}.{i}"), s)
            })
            .collect::<Result<_>>()?;
        Ok(BottleneckGroup { name: name.to_string(), blocks })
    }

    pub fn forward<T: Element>(&self, f: &mut Forward<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let mut y = x.clone();
        for block in &self.blocks {
            y = block.forward(f, &y)?;
        }
        Ok(y)
    }

    pub fn trace(&self, input: Shape, t: &mut Trace) -> Result<Shape> {
        self.blocks.iter().try_fold(input, |s, block| block.trace(s, t))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PpmSpec {
    pub bins: Vec<usize>,
    pub c_out: usize,
}

impl Default for PpmSpec {
    fn default() -> Self {
        PpmSpec { bins: vec![1, 2, 3, 6], c_out: 128 }
    }
}

#[derive(Clone, Debug)]
struct PpmBranch {
    bins: usize,
    pool: String,
    reduce: ConvBnRelu,
    upsample: Upsample,
}

/// Pyramid pooling: per-bin pooled context, reduced, upsampled and
/// concatenated after the input, then projected.
#[derive(Clone, Debug)]
pub struct Ppm {
    pub name: String,
    pub c_in: usize,
    pub spec: PpmSpec,
    branches: Vec<PpmBranch>,
    concat: String,
    pub project: ConvBnRelu,
}

impl Ppm {
    pub fn new(b: &mut ParamBuilder, name: &str, c_in: usize, spec: PpmSpec) -> Result<Self> {
        if spec.bins.is_empty() || spec.bins.contains(&0) {
            return Err(Error::invalid(format!("{name}: bins must be non-empty and positive, got {:?}", spec.bins)));
        }
        if spec.bins.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!("{name}: bins must be strictly ascending, got {:?}", spec.bins)));
        }
        if !c_in.is_multiple_of(spec.bins.len()) {
            return Err(Error::invalid(format!("{name}: {c_in} channels do not split into {} branches", spec.bins.len())));
        }
        let width = c_in / spec.bins.len();
        let branches = spec
            .bins
            .iter()
            .map(|&bins| {
                let branch = format!("{name}.branch{bins}");
                Ok(PpmBranch {
                    bins,
                    pool: format!("{branch}.pool"),
                    reduce: ConvBnRelu::new(b, &branch, ConvKind::Pointwise, c_in, width, ConvParams::pointwise())?,
                    upsample: Upsample::new(&format!("{branch}.upsample")),
                })
            })
            .collect::<Result<_>>()?;
        let project = ConvBnRelu::new(b, &format!("{name}.project"), ConvKind::Pointwise, 2 * c_in, spec.c_out, ConvParams::pointwise())?;
        Ok(Ppm { name: name.to_string(), c_in, spec, branches, concat: format!("{name}.concat"), project })
    }

    pub fn forward<T: Element>(&self, f: &mut Forward<'_, T>, x: &Var<T>) -> Result<Var<T>> {
        let s = x.shape();
        let mut parts = vec![x.clone()];
        for br in &self.branches {
            let pooled = f.tape().adaptive_avg_pool(x, (br.bins, br.bins)).map_err(|e| e.in_layer(&br.pool))?;
            f.observe(&br.pool, &pooled);
            let y = br.reduce.forward(f, &pooled)?;
            parts.push(br.upsample.forward(f, &y, s.h, s.w)?);
        }
        let refs: Vec<&Var<T>> = parts.iter().collect();
        let cat = f.tape().concat_channels(&refs).map_err(|e| e.in_layer(&self.concat))?;
        f.observe(&self.concat, &cat);
        self.project.forward(f, &cat)
    }

    pub fn trace(&self, input: Shape, t: &mut Trace) -> Result<Shape> {
        let mut channels = input.c;
        for br in &self.branches {
            let pooled = trace_pool(&br.pool, input, br.bins, t)?;
            let y = br.reduce.trace(pooled, t)?;
            channels += br.upsample.trace(y, input.h, input.w, t).c;
        }
        let cat = input.with_channels(channels);
        trace_concat(&self.concat, cat, t);
        self.project.trace(cat, t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FfmSpec {
    /// Resolution ratio between the two inputs.
    pub x: usize,
    pub c_out: usize,
}

/// Feature fusion: the low-resolution input is upsampled ×X and passed through
/// a dilated depthwise conv; both branches end in a linear 1×1 + BN and are
/// summed before the only ReLU.
#[derive(Clone, Debug)]
pub struct Ffm {
    pub name: String,
    pub spec: FfmSpec,
    pub upsample: Upsample,
    pub dw: Conv,
    pub dw_bn: BatchNorm,
    pub dw_relu: Relu,
    pub low_pw: Conv,
    pub low_bn: BatchNorm,
    pub high_pw: Conv,
    pub high_bn: BatchNorm,
    add: String,
    pub relu: Relu,
}

impl Ffm {
    pub fn new(b: &mut ParamBuilder, name: &str, c_high: usize, c_low: usize, spec: FfmSpec) -> Result<Self> {
        if spec.x == 0 {
            return Err(Error::invalid(format!("{name}: resolution ratio must be >= 1")));
        }
        let n = |part: &str| format!("{name}.{part}");
        Ok(Ffm {
            name: name.to_string(),
            spec,
            upsample: Upsample::new(&n("upsample")),
            dw: Conv::new(b, &n("dw"), ConvKind::Depthwise, c_low, c_low, ConvParams::new(3, 1, spec.x)?)?,
            dw_bn: BatchNorm::new(b, &n("dw_bn"), c_low)?,
            dw_relu: Relu::new(&n("dw_relu")),
            low_pw: Conv::new(b, &n("low_pw"), ConvKind::Pointwise, c_low, spec.c_out, ConvParams::pointwise())?,
            low_bn: BatchNorm::new(b, &n("low_bn"), spec.c_out)?,
            high_pw: Conv::new(b, &n("high_pw"), ConvKind::Pointwise, c_high, spec.c_out, ConvParams::pointwise())?,
            high_bn: BatchNorm::new(b, &n("high_bn"), spec.c_out)?,
            add: n("add"),
            relu: Relu::new(&n("relu")),
        })
    }

    fn check_ratio(&self, high: Shape, low: Shape) -> Result<()> {
        let x = self.spec.x;
        if high.n != low.n || high.h != x * low.h || high.w != x * low.w {
            return Err(Error::Layer { layer: self.name.clone(), msg: format!("high-res input {high} is not {x}x the low-res input {low}") });
        }
        Ok(())
    }

    pub fn forward<T: Element>(&self, f: &mut Forward<'_, T>, high: &Var<T>, low: &Var<T>) -> Result<Var<T>> {
        let hs = high.shape();
        self.check_ratio(hs, low.shape())?;
        let l = self.upsample.forward(f, low, hs.h, hs.w)?;
        let l = self.dw.forward(f, &l)?;
        let l = self.dw_bn.forward(f, &l)?;
        let l = self.dw_relu.forward(f, &l);
        let l = self.low_pw.forward(f, &l)?;
        let l = self.low_bn.forward(f, &l)?;
        let h = self.high_pw.forward(f, high)?;
        let h = self.high_bn.forward(f, &h)?;
        let sum = f.tape().add(&h, &l).map_err(|e| e.in_layer(&self.add))?;
        f.observe(&self.add, &sum);
        Ok(self.relu.forward(f, &sum))
    }

    pub fn trace(&self, high: Shape, low: Shape, t: &mut Trace) -> Result<Shape> {
        self.check_ratio(high, low)?;
        let l = self.upsample.trace(low, high.h, high.w, t);
        let l = self.dw.trace(l, t)?;
        let l = self.dw_bn.trace(l, t)?;
        let l = self.dw_relu.trace(l, t);
        let l = self.low_pw.trace(l, t)?;
        let l = self.low_bn.trace(l, t)?;
        let h = self.high_pw.trace(high, t)?;
        let h = self.high_bn.trace(h, t)?;
        if h != l {
            return Err(Error::Layer { layer: self.add.clone(), msg: format!("branch shapes {h} and {l} differ") });
        }
        trace_add(&self.add, h, false, t);
        Ok(self.relu.trace(h, t))
    }
}

/// Two DSConvs, dropout, 1×1 to class logits, upsampled to the output size.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub ds1: DsConv,
    pub ds2: DsConv,
    pub dropout: Dropout,
    pub conv: Conv,
    pub upsample: Upsample,
}

impl Classifier {
    pub fn new(b: &mut ParamBuilder, name: &str, c_in: usize, width: usize, num_classes: usize, p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("{name}: dropout rate {p} outside [0, 1)")));
        }
        Ok(Classifier {
            ds1: DsConv::new(b, &format!("{name}.dsconv1"), c_in, width, 1)?,
            ds2: DsConv::new(b, &format!("{name}.dsconv2"), width, width, 1)?,
            dropout: Dropout { name: format!("{name}.dropout"), p },
            conv: Conv::new(b, &format!("{name}.conv"), ConvKind::Pointwise, width, num_classes, ConvParams::pointwise())?,
            upsample: Upsample::new(&format!("{name}.upsample")),
        })
    }

    /// Logits at `(out_h, out_w)`.
    pub fn forward<T: Element>(&self, f: &mut Forward<'_, T>, x: &Var<T>, out_h: usize, out_w: usize) -> Result<Var<T>> {
        let y = self.ds1.forward(f, x)?;
        let y = self.ds2.forward(f, &y)?;
        let y = self.dropout.forward(f, &y)?;
        let y = self.conv.forward(f, &y)?;
        self.upsample.forward(f, &y, out_h, out_w)
    }

    pub fn trace(&self, input: Shape, out_h: usize, out_w: usize, t: &mut Trace) -> Result<Shape> {
        let s = self.ds1.trace(input, t)?;
        let s = self.ds2.trace(s, t)?;
        let s = self.dropout.trace(s, t);
        let s = self.conv.trace(s, t)?;
        Ok(self.upsample.trace(s, out_h, out_w, t))
    }
}

/// Training-only 1×1 classifier on an intermediate feature map.
#[derive(Clone, Debug)]
pub struct AuxHead {
    pub conv: Conv,
    pub upsample: Upsample,
}

impl AuxHead {
    pub fn new(b: &mut ParamBuilder, name: &str, c_in: usize, num_classes: usize) -> Result<Self> {
        Ok(AuxHead {
            conv: Conv::new(b, &format!("{name}.conv"), ConvKind::Pointwise, c_in, num_classes, ConvParams::pointwise())?,
            upsample: Upsample::new(&format!("{name}.upsample")),
        })
    }

    pub fn forward<T: Element>(&self, f: &mut Forward<'_, T>, x: &Var<T>, out_h: usize, out_w: usize) -> Result<Var<T>> {
        let y = self.conv.forward(f, x)?;
        self.upsample.forward(f, &y, out_h, out_w)
    }

    pub fn trace(&self, input: Shape, out_h: usize, out_w: usize, t: &mut Trace) -> Result<Shape> {
        let s = self.conv.trace(input, t)?;
        Ok(self.upsample.trace(s, out_h, out_w, t))
    }
}
