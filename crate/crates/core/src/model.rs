//! The full network: learning-to-downsample stem, global feature extractor,
//! feature fusion and classifier, plus accounting and tracing.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::autograd::Var;
use crate::blocks::{AuxHead, BottleneckGroup, BottleneckSpec, Classifier, ConvBnRelu, DsConv, Ffm, FfmSpec, Ppm, PpmSpec};
use crate::error::{Error, Result};
use crate::layers::{ConvKind, Forward, LayerOp, ParamBuilder, Trace};
use crate::ops::{self, ConvParams};
use crate::params::ParamStore;
use crate::tensor::{Element, LabelMap, Shape, Tensor};

/// Inference output flavour: per-class probabilities or the argmax label map.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Mode {
    Prob,
    #[default]
    Cls,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prob" => Ok(Mode::Prob),
            "cls" => Ok(Mode::Cls),
            other => Err(Error::invalid(format!("unknown mode {other:?}, expected prob or cls"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Prob => "prob",
            Mode::Cls => "cls",
        })
    }
}

/// One group of repeated bottlenecks: expansion, width, repeats, stride.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StageSpec {
    pub t: usize,
    pub c: usize,
    pub n: usize,
    pub s: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub input_h: usize,
    pub input_w: usize,
    /// Output widths of the stem conv and its two DSConvs.
    pub lds_widths: [usize; 3],
    pub stages: Vec<StageSpec>,
    pub ppm: PpmSpec,
    pub ffm_out: usize,
    pub classifier_width: usize,
    pub dropout: f64,
    pub zero_skip: bool,
    pub mode: Mode,
    /// Attach the auxiliary heads.
    pub train: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_classes: 19,
            input_h: 1024,
            input_w: 2048,
            lds_widths: [32, 48, 64],
            stages: vec![StageSpec { t: 6, c: 64, n: 3, s: 2 }, StageSpec { t: 6, c: 96, n: 3, s: 2 }, StageSpec { t: 6, c: 128, n: 3, s: 1 }],
            ppm: PpmSpec::default(),
            ffm_out: 128,
            classifier_width: 128,
            dropout: 0.1,
            zero_skip: false,
            mode: Mode::Cls,
            train: false,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// 128×256 input. The global branch ends at 4×8 there, so the coarsest
    /// pooling bin is 4 instead of 6.
    pub fn desk() -> Self {
        ModelConfig { input_h: 128, input_w: 256, ppm: PpmSpec { bins: vec![1, 2, 3, 4], c_out: 128 }, ..Self::default() }
    }

    const LDS_STRIDE: usize = 8;

    /// Spatial reduction of the global branch relative to the stem output.
    pub fn gfe_stride(&self) -> usize {
        self.stages.iter().map(|s| s.s).product()
    }

    /// Input sizes must be multiples of this.
    pub fn required_divisor(&self) -> usize {
        Self::LDS_STRIDE * self.gfe_stride()
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let d = self.required_divisor();
        if h == 0 || w == 0 || !h.is_multiple_of(d) || !w.is_multiple_of(d) {
            return Err(Error::invalid(format!("input size {h}x{w} must be a positive multiple of {d} in both dimensions")));
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if !(1..=255).contains(&self.num_classes) {
            return Err(Error::invalid(format!("num_classes {} outside 1..=255", self.num_classes)));
        }
        if self.stages.is_empty() {
            return Err(Error::invalid("at least one bottleneck stage is required"));
        }
        if let Some(s) = self.stages.iter().find(|s| s.t == 0 || s.n == 0 || s.s == 0) {
            return Err(Error::invalid(format!("bottleneck stage {s:?}: t, n and s must be >= 1")));
        }
        self.check_input(self.input_h, self.input_w)
    }
}

#[derive(Clone, Debug)]
pub struct Lds {
    pub conv: ConvBnRelu,
    pub ds1: DsConv,
    pub ds2: DsConv,
}

#[derive(Clone, Debug)]
pub struct Gfe {
    pub stages: Vec<BottleneckGroup>,
    pub ppm: Ppm,
}

/// An activation edge between modules.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub from: &'static str,
    pub to: &'static str,
}

const MODULE_ORDER: [&str; 4] = ["lds", "gfe", "ffm", "classifier"];

/// Network outputs of one forward pass.
pub struct Outputs<T: Element> {
    pub logits: Var<T>,
    /// `(stem head, global head)` logits; only in training-mode forwards of
    /// graphs built with aux heads.
    pub aux: Option<(Var<T>, Var<T>)>,
}

#[derive(Clone, Debug)]
pub enum Prediction {
    Prob(Tensor),
    Cls(LabelMap),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamReport {
    pub per_layer: Vec<(String, usize)>,
    /// Deployed network, aux heads excluded.
    pub total: usize,
    pub aux: usize,
}

impl ParamReport {
    pub fn total_with_aux(&self) -> usize {
        self.total + self.aux
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlopReport {
    /// `(layer, MACs, element-wise ops)`
    pub per_layer: Vec<(String, u64, u64)>,
    pub macs: u64,
    pub elementwise: u64,
}

#[derive(Clone, Debug)]
pub struct ModelGraph {
    config: ModelConfig,
    params: ParamStore<f32>,
    pub lds: Lds,
    pub gfe: Gfe,
    pub ffm: Ffm,
    pub classifier: Classifier,
    pub aux: Option<(AuxHead, AuxHead)>,
}

/// Block prefixes whose outputs form the module-boundary shapes.
pub const BOUNDARY_BLOCKS: [&str; 9] =
    ["lds.conv", "lds.dsconv1", "lds.dsconv2", "gfe.bottleneck1", "gfe.bottleneck2", "gfe.bottleneck3", "gfe.ppm", "ffm", "classifier.dsconv2"];

impl ModelGraph {
    pub fn build(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut b = ParamBuilder::new(config.seed);
        let [w0, w1, w2] = config.lds_widths;
        let lds = Lds {
            conv: ConvBnRelu::new(&mut b, "lds.conv", ConvKind::Standard, 3, w0, ConvParams::k3(2))?,
            ds1: DsConv::new(&mut b, "lds.dsconv1", w0, w1, 2)?,
            ds2: DsConv::new(&mut b, "lds.dsconv2", w1, w2, 2)?,
        };
        let mut c = w2;
        let mut stages = Vec::new();
        for (i, st) in config.stages.iter().enumerate() {
            let spec = BottleneckSpec { t: st.t, c_in: c, c_out: st.c, s: st.s };
            stages.push(BottleneckGroup::new(&mut b, &format!("gfe.bottleneck{}", i + 1), spec, st.n)?);
            c = st.c;
        }
        let ppm = Ppm::new(&mut b, "gfe.ppm", c, config.ppm.clone())?;
        let gfe_out = config.ppm.c_out;
        let ffm = Ffm::new(&mut b, "ffm", w2, gfe_out, FfmSpec { x: config.gfe_stride(), c_out: config.ffm_out })?;
        let classifier = Classifier::new(&mut b, "classifier", config.ffm_out, config.classifier_width, config.num_classes, config.dropout)?;
        // aux heads last: the main network's initial values do not depend on them
        let aux = if config.train {
            Some((AuxHead::new(&mut b, "aux.lds", w2, config.num_classes)?, AuxHead::new(&mut b, "aux.gfe", gfe_out, config.num_classes)?))
        } else {
            None
        };
        let graph = ModelGraph { params: b.finish(), lds, gfe: Gfe { stages, ppm }, ffm, classifier, aux, config };
        graph.trace(Shape::new(1, 3, graph.config.input_h, graph.config.input_w))?;
        Ok(graph)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }

    pub fn set_zero_skip(&mut self, on: bool) {
        self.config.zero_skip = on;
    }

    pub fn has_aux(&self) -> bool {
        self.aux.is_some()
    }

    fn check_image(&self, s: Shape) -> Result<()> {
        if s.c != 3 {
            return Err(Error::shape(format!("image {s} must have 3 channels")));
        }
        self.config.check_input(s.h, s.w)
    }

    /// Forward through the network within an existing pass context.
    pub fn forward_with<T: Element>(&self, f: &mut Forward<'_, T>, image: &Var<T>) -> Result<Outputs<T>> {
        let s = image.shape();
        self.check_image(s)?;
        let x = self.lds.conv.forward(f, image)?;
        let x = self.lds.ds1.forward(f, &x)?;
        let lds_out = self.lds.ds2.forward(f, &x)?;
        let mut g = lds_out.clone();
        for stage in &self.gfe.stages {
            g = stage.forward(f, &g)?;
        }
        let gfe_out = self.gfe.ppm.forward(f, &g)?;
        let high = if self.config.zero_skip { Var::constant(Tensor::zeros(lds_out.shape())) } else { lds_out.clone() };
        let fused = self.ffm.forward(f, &high, &gfe_out)?;
        let logits = self.classifier.forward(f, &fused, s.h, s.w)?;
        let aux = match (&self.aux, f.is_training()) {
            (Some((a_lds, a_gfe)), true) => Some((a_lds.forward(f, &lds_out, s.h, s.w)?, a_gfe.forward(f, &gfe_out, s.h, s.w)?)),
            _ => None,
        };
        Ok(Outputs { logits, aux })
    }

    /// Inference logits for a normalized `(n, 3, H, W)` batch.
    pub fn logits(&self, image: &Tensor) -> Result<Tensor> {
        let mut f = Forward::inference(&self.params);
        let out = self.forward_with(&mut f, &Var::constant(image.clone()))?;
        Ok(out.logits.into_value())
    }

    pub fn predict(&self, image: &Tensor, mode: Mode) -> Result<Prediction> {
        let logits = self.logits(image)?;
        Ok(match mode {
            Mode::Prob => Prediction::Prob(ops::channel_softmax(&logits)),
            Mode::Cls => Prediction::Cls(ops::channel_argmax(&logits)),
        })
    }

    /// Activation edges between modules and heads.
    pub fn topology(&self) -> Vec<Edge> {
        let mut edges = vec![
            Edge { from: "lds", to: "gfe" },
            Edge { from: "gfe", to: "ffm" },
            Edge { from: "lds", to: "ffm" },
            Edge { from: "ffm", to: "classifier" },
        ];
        if self.aux.is_some() {
            edges.push(Edge { from: "lds", to: "aux.lds" });
            edges.push(Edge { from: "gfe", to: "aux.gfe" });
        }
        edges
    }

    /// Edges that bypass at least one module of the main path.
    pub fn skip_edges(&self) -> Vec<Edge> {
        let pos = |m: &str| MODULE_ORDER.iter().position(|&x| x == m);
        self.topology().into_iter().filter(|e| matches!((pos(e.from), pos(e.to)), (Some(a), Some(b)) if b > a + 1)).collect()
    }

    /// Symbolic propagation of `input` through every primitive layer.
    /// Aux-head rows are included when the graph has them.
    pub fn trace(&self, input: Shape) -> Result<Trace> {
        self.check_image(input)?;
        let mut t = Trace::new();
        let x = self.lds.conv.trace(input, &mut t)?;
        let x = self.lds.ds1.trace(x, &mut t)?;
        let lds_out = self.lds.ds2.trace(x, &mut t)?;
        let g = self.gfe.stages.iter().try_fold(lds_out, |s, stage| stage.trace(s, &mut t))?;
        let gfe_out = self.gfe.ppm.trace(g, &mut t)?;
        let fused = self.ffm.trace(lds_out, gfe_out, &mut t)?;
        self.classifier.trace(fused, input.h, input.w, &mut t)?;
        if let Some((a_lds, a_gfe)) = &self.aux {
            a_lds.trace(lds_out, input.h, input.w, &mut t)?;
            a_gfe.trace(gfe_out, input.h, input.w, &mut t)?;
        }
        Ok(t)
    }

    fn trace_hw(&self, h: usize, w: usize) -> Result<Trace> {
        self.trace(Shape::new(1, 3, h, w))
    }

    /// `(layer, output shape)` for every primitive layer at batch size 1.
    pub fn shape_trace(&self, h: usize, w: usize) -> Result<Vec<(String, Shape)>> {
        Ok(self.trace_hw(h, w)?.rows.into_iter().map(|r| (r.name, r.output)).collect())
    }

    /// Output shape of each block in [`BOUNDARY_BLOCKS`].
    pub fn boundary_shapes(&self, h: usize, w: usize) -> Result<Vec<(String, Shape)>> {
        let t = self.trace_hw(h, w)?;
        BOUNDARY_BLOCKS
            .iter()
            .map(|&b| {
                let row = t.under(b).last().ok_or_else(|| Error::invalid(format!("no layers under {b}")))?;
                Ok((b.to_string(), row.output))
            })
            .collect()
    }

    pub fn count_params(&self) -> ParamReport {
        let t = self.trace_hw(self.config.input_h, self.config.input_w).expect("graph validated at build");
        let per_layer: Vec<(String, usize)> = t.rows.iter().filter(|r| r.params > 0).map(|r| (r.name.clone(), r.params)).collect();
        let aux = per_layer.iter().filter(|(n, _)| n.starts_with("aux.")).map(|(_, p)| p).sum();
        let all: usize = per_layer.iter().map(|(_, p)| p).sum();
        debug_assert_eq!(all, self.params.trainable_count());
        ParamReport { per_layer, total: all - aux, aux }
    }

    /// Multiply-accumulates and element-wise op counts at `h×w`, batch 1.
    pub fn count_flops(&self, h: usize, w: usize) -> Result<FlopReport> {
        let t = self.trace_hw(h, w)?;
        Ok(FlopReport {
            per_layer: t.rows.iter().map(|r| (r.name.clone(), r.macs, r.elementwise)).collect(),
            macs: t.total_macs(),
            elementwise: t.total_elementwise(),
        })
    }

    /// Fixed-column text report of every layer followed by totals.
    pub fn summary(&self, h: usize, w: usize) -> Result<String> {
        let t = self.trace_hw(h, w)?;
        let mut out = String::new();
        writeln!(out, "{:<36} {:<24} {:<18} {:>10} {:>14}", "layer", "op", "output", "params", "macs").unwrap();
        for r in &t.rows {
            let s = r.output;
            let shape = format!("{}x{}x{}", s.h, s.w, s.c);
            writeln!(out, "{:<36} {:<24} {:<18} {:>10} {:>14}", r.name, r.op.to_string(), shape, r.params, r.macs).unwrap();
        }
        let p = self.count_params();
        let (aux_rows, main_rows): (Vec<_>, Vec<_>) = t.rows.iter().partition(|r| r.name.starts_with("aux."));
        let macs = |rows: &[&crate::layers::TraceRow]| rows.iter().map(|r| r.macs).sum::<u64>();
        writeln!(out, "params_total={} ({:.2}M)", p.total, p.total as f64 / 1e6).unwrap();
        writeln!(out, "params_with_aux={} ({:.2}M)", p.total_with_aux(), p.total_with_aux() as f64 / 1e6).unwrap();
        writeln!(out, "macs_total={} ({:.2}G)", macs(&main_rows), macs(&main_rows) as f64 / 1e9).unwrap();
        writeln!(out, "macs_with_aux={}", macs(&main_rows) + macs(&aux_rows)).unwrap();
        writeln!(out, "elementwise_total={}", t.total_elementwise()).unwrap();
        Ok(out)
    }
}

/// Tags of the layers a block is made of, for structural assertions.
pub fn layer_tags(trace: &Trace, block: &str) -> Vec<&'static str> {
    trace.tags(block)
}

/// Whether a traced layer is a residual add.
pub fn is_residual(op: &LayerOp) -> bool {
    matches!(op, LayerOp::Add { residual: true })
}
