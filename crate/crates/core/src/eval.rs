//! Segmentation metrics and the fps benchmark.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::model::{Mode, ModelGraph};
use crate::tensor::{LabelMap, Tensor, IGNORE_ID};

/// `counts[gt][pred]` over non-ignored pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix { k, counts: vec![0; k * k] }
    }

    /// From row-major `counts[gt][pred]`.
    pub fn from_counts(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::invalid("confusion matrix must be square"));
        }
        Ok(ConfusionMatrix { k, counts: rows.concat() })
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k).map(<[u64]>::to_vec).collect()
    }

    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if pred.dims() != gt.dims() {
            return Err(Error::shape(format!("prediction {:?} vs ground truth {:?}", pred.dims(), gt.dims())));
        }
        let k = self.k;
        for (i, (&p, &g)) in pred.data().iter().zip(gt.data()).enumerate() {
            if g == IGNORE_ID {
                continue;
            }
            if g as usize >= k || p as usize >= k {
                return Err(Error::invalid(format!("pixel {i}: ground truth {g} / prediction {p} outside {k} classes")));
            }
            self.counts[g as usize * k + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::invalid(format!("cannot merge {}-class and {}-class matrices", self.k, other.k)));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Fraction of counted pixels on the diagonal.
    pub fn pixel_accuracy(&self) -> f64 {
        self.trace() as f64 / self.total().max(1) as f64
    }
}

/// Per-class IoU and their mean.
#[derive(Clone, Debug, PartialEq)]
pub struct MiouReport {
    /// `None` where the class is absent from both prediction and ground truth.
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

/// `IoU_k = d_k / (row_k + col_k − d_k)`; classes with a zero denominator are
/// left out of the mean. An empty matrix has mean 0.
pub fn miou(cm: &ConfusionMatrix) -> MiouReport {
    let k = cm.k;
    let per_class: Vec<Option<f64>> = (0..k)
        .map(|c| {
            let d = cm.get(c, c);
            let row: u64 = (0..k).map(|j| cm.get(c, j)).sum();
            let col: u64 = (0..k).map(|i| cm.get(i, c)).sum();
            let denom = row + col - d;
            (denom > 0).then(|| d as f64 / denom as f64)
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = if defined.is_empty() { 0.0 } else { defined.iter().sum::<f64>() / defined.len() as f64 };
    MiouReport { per_class, mean }
}

/// Class → category assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CategoryMap {
    pub names: Vec<String>,
    /// `class_to_category[c]`; `None` marks an unmapped class.
    pub class_to_category: Vec<Option<usize>>,
}

impl CategoryMap {
    /// Cityscapes' seven groups over the 19 evaluation classes.
    pub fn cityscapes() -> Self {
        let names = ["flat", "construction", "object", "nature", "sky", "human", "vehicle"];
        let of = [0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 4, 5, 5, 6, 6, 6, 6, 6, 6];
        CategoryMap { names: names.map(String::from).to_vec(), class_to_category: of.map(Some).to_vec() }
    }

    pub fn identity(k: usize) -> Self {
        CategoryMap { names: (0..k).map(|c| c.to_string()).collect(), class_to_category: (0..k).map(Some).collect() }
    }

    /// Collapse the matrix by summing rows and columns within each category.
    pub fn collapse(&self, cm: &ConfusionMatrix) -> Result<ConfusionMatrix> {
        if self.class_to_category.len() != cm.k {
            return Err(Error::invalid(format!("category map covers {} classes, matrix has {}", self.class_to_category.len(), cm.k)));
        }
        let mut out = ConfusionMatrix::new(self.names.len());
        for g in 0..cm.k {
            for p in 0..cm.k {
                let n = cm.get(g, p);
                if n == 0 {
                    continue;
                }
                let (cg, cp) = match (self.class_to_category[g], self.class_to_category[p]) {
                    (Some(a), Some(b)) => (a, b),
                    _ => {
                        let c = if self.class_to_category[g].is_none() { g } else { p };
                        return Err(Error::invalid(format!("class {c} has no category")));
                    }
                };
                if cg >= out.k || cp >= out.k {
                    return Err(Error::invalid(format!("category index out of range for classes {g}/{p}")));
                }
                out.counts[cg * out.k + cp] += n;
            }
        }
        Ok(out)
    }
}

pub fn category_miou(cm: &ConfusionMatrix, map: &CategoryMap) -> Result<f64> {
    Ok(miou(&map.collapse(cm)?).mean)
}

/// Plain-text table followed by `key=value` summary lines.
pub fn format_report(cm: &ConfusionMatrix, class_names: &[String], category: Option<&CategoryMap>) -> Result<String> {
    let r = miou(cm);
    let mut s = String::new();
    writeln!(s, "{:<16} {:>8}", "class", "iou").expect("string");
    for (c, iou) in r.per_class.iter().enumerate() {
        let name = class_names.get(c).cloned().unwrap_or_else(|| c.to_string());
        match iou {
            Some(v) => writeln!(s, "{name:<16} {v:>8.4}"),
            None => writeln!(s, "{name:<16} {:>8}", "n/a"),
        }
        .expect("string");
    }
    writeln!(s, "miou_class={:.6}", r.mean).expect("string");
    if let Some(map) = category {
        writeln!(s, "miou_category={:.6}", category_miou(cm, map)?).expect("string");
    }
    writeln!(s, "pixel_accuracy={:.6}", cm.pixel_accuracy()).expect("string");
    Ok(s)
}

/// Cityscapes evaluation class names in train-id order.
pub const CITYSCAPES_CLASSES: [&str; 19] = [
    "road",
    "sidewalk",
    "building",
    "wall",
    "fence",
    "pole",
    "traffic light",
    "traffic sign",
    "vegetation",
    "terrain",
    "sky",
    "person",
    "rider",
    "car",
    "truck",
    "bus",
    "train",
    "motorcycle",
    "bicycle",
];

pub const BURN_IN: usize = 100;
pub const MEASURED: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub burn_in: usize,
    pub measured: usize,
    pub latencies: Vec<Duration>,
    pub mean_fps: f64,
}

impl BenchReport {
    pub fn mean_latency(&self) -> Duration {
        self.latencies.iter().sum::<Duration>() / self.latencies.len().max(1) as u32
    }
}

/// Untimed warm-up forwards, then timed ones. Only the forward call (and the
/// softmax or argmax of the chosen mode) is inside the timer.
pub fn bench_fps(graph: &ModelGraph, image: &Tensor, mode: Mode, burn_in: usize, measured: usize) -> Result<BenchReport> {
    if measured == 0 {
        return Err(Error::invalid("measured frame count must be positive"));
    }
    for _ in 0..burn_in {
        std::hint::black_box(graph.predict(image, mode)?);
    }
    let mut latencies = Vec::with_capacity(measured);
    for _ in 0..measured {
        let t = Instant::now();
        let out = graph.predict(image, mode)?;
        latencies.push(t.elapsed());
        drop(std::hint::black_box(out));
    }
    let total: Duration = latencies.iter().sum();
    let mean_fps = measured as f64 / total.as_secs_f64();
    Ok(BenchReport { burn_in, measured, latencies, mean_fps })
}
