//! Training: poly learning-rate schedule, SGD with momentum and selective
//! weight decay, the combined main + auxiliary loss, and the epoch loop.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::augment::{augment, sample_rng, AugmentConfig, Sample};
use crate::error::{Error, Result};
use crate::layers::{apply_bn_updates, Forward};
use crate::model::ModelGraph;
use crate::params::ParamStore;
use crate::tensor::{LabelMap, Tensor, IGNORE_ID};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub power: f64,
    pub momentum: f64,
    /// 12 in the full-scale recipe; the default fits a small machine.
    pub batch_size: usize,
    pub l2: f64,
    pub aux_weight: f64,
    pub epochs: usize,
    pub seed: u64,
    /// `None` trains on the samples as given.
    pub augment: Option<AugmentConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.045,
            power: 0.9,
            momentum: 0.9,
            batch_size: 2,
            l2: 4e-5,
            aux_weight: 0.4,
            epochs: 1000,
            seed: 0,
            augment: Some(AugmentConfig::desk()),
        }
    }
}

impl TrainConfig {
    pub fn iters_per_epoch(&self, dataset_len: usize) -> usize {
        dataset_len.div_ceil(self.batch_size)
    }

    pub fn max_iters(&self, dataset_len: usize) -> usize {
        self.epochs * self.iters_per_epoch(dataset_len)
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch_size and epochs must be >= 1"));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::invalid(format!("base_lr {} must be positive", self.base_lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.l2 < 0.0 || self.aux_weight < 0.0 {
            return Err(Error::invalid("momentum must be in [0,1); l2 and aux_weight must be >= 0"));
        }
        Ok(())
    }
}

/// `base · (1 − iter/max_iter)^power`, clamped at the end of the schedule.
pub fn poly_lr(base: f64, iter: usize, max_iter: usize, power: f64) -> f64 {
    if max_iter == 0 {
        return base;
    }
    let progress = iter.min(max_iter) as f64 / max_iter as f64;
    base * (1.0 - progress).powf(power)
}

/// `main + w·(aux_lds + aux_gfe)`.
pub fn combine_losses(main: f64, aux: Option<(f64, f64)>, weight: f64) -> f64 {
    match aux {
        Some((a, b)) => main + weight * (a + b),
        None => main,
    }
}

/// SGD with momentum. Velocity is kept for every trainable parameter.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub l2: f64,
    velocity: Vec<Option<Tensor>>,
    steps: usize,
}

impl Sgd {
    pub fn new(store: &ParamStore, momentum: f64, l2: f64) -> Self {
        let velocity = store.iter().map(|(_, p)| p.kind().trainable().then(|| Tensor::zeros(p.value().shape()))).collect();
        Sgd { momentum, l2, velocity, steps: 0 }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn velocity(&self, id: crate::params::ParamId) -> Option<&Tensor> {
        self.velocity.get(id.index()).and_then(Option::as_ref)
    }

    /// `g' = g + l2·w` (decaying kinds only), `v = m·v + g'`, `w -= lr·v`.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in &ids {
            if self.velocity[id.index()].is_none() {
                continue;
            }
            let p = store.get(*id);
            let g = p.grad().ok_or_else(|| Error::MissingGradient(p.name().to_string()))?;
            if g.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("non-finite gradient for {}", p.name())));
            }
            let decay = if p.kind().decays() { self.l2 as f32 } else { 0.0 };
            let (m, lr) = (self.momentum as f32, lr as f32);
            let v = self.velocity[id.index()].as_mut().expect("checked above");
            for ((v, &g), &w) in v.data_mut().iter_mut().zip(g.data()).zip(p.value().data()) {
                *v = m * *v + g + decay * w;
            }
            let v = self.velocity[id.index()].as_ref().expect("checked above");
            for (w, &v) in store.value_mut(*id).data_mut().iter_mut().zip(v.data()) {
                *w -= lr * v;
            }
        }
        self.steps += 1;
        Ok(())
    }
}

/// One logged iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub epoch: usize,
    pub loss: f64,
    pub main_loss: f64,
    pub aux_loss: Option<(f64, f64)>,
    pub lr: f64,
}

impl fmt::Display for IterRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "iter={} epoch={} loss={:.6} lr={:.6e}", self.iter, self.epoch, self.loss, self.lr)
    }
}

/// Hooks called by [`train`].
pub trait TrainObserver {
    fn on_iter(&mut self, _record: &IterRecord) -> Result<()> {
        Ok(())
    }

    /// After each epoch; a natural place to save checkpoints or validate.
    fn on_epoch(&mut self, _epoch: usize, _graph: &ModelGraph) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Collects every record in memory.
#[derive(Default, Debug)]
pub struct History(pub Vec<IterRecord>);

impl TrainObserver for History {
    fn on_iter(&mut self, record: &IterRecord) -> Result<()> {
        self.0.push(record.clone());
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub iters: usize,
    pub final_loss: f64,
}

/// One forward/backward pass over a batch. Leaves gradients in the store and
/// returns `(total, main, aux)` losses with the BN updates already applied.
pub fn train_step(graph: &mut ModelGraph, image: &Tensor, label: &LabelMap, aux_weight: f64, seed: u64) -> Result<StepLosses> {
    let mut f = Forward::training(graph.params(), seed);
    let x = f.tape().leaf(image.clone(), false);
    let out = graph.forward_with(&mut f, &x)?;
    let main = f.tape().cross_entropy(&out.logits, label, IGNORE_ID)?;
    let main_v = main.value().data()[0] as f64;
    let (loss, aux) = match &out.aux {
        Some((a, b)) => {
            let la = f.tape().cross_entropy(a, label, IGNORE_ID)?;
            let lb = f.tape().cross_entropy(b, label, IGNORE_ID)?;
            let aux_v = (la.value().data()[0] as f64, lb.value().data()[0] as f64);
            let sum = f.tape().add(&la, &lb)?;
            let weighted = f.tape().scale(&sum, aux_weight);
            (f.tape().add(&main, &weighted)?, Some(aux_v))
        }
        None => (main, None),
    };
    let total = loss.value().data()[0] as f64;
    drop(out);
    drop(x);
    let rec = f.finish();
    if !total.is_finite() {
        return Ok(StepLosses { total, main: main_v, aux });
    }
    let store = graph.params_mut();
    store.zero_grad();
    let updates = rec.backward_into(&loss, store)?;
    drop(loss);
    apply_bn_updates(store, &updates);
    Ok(StepLosses { total, main: main_v, aux })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub main: f64,
    pub aux: Option<(f64, f64)>,
}

fn batch(samples: &[Sample], idx: &[usize], cfg: &TrainConfig, first_index: u64) -> Result<(Tensor, LabelMap)> {
    let mut items = Vec::with_capacity(idx.len());
    for (j, &i) in idx.iter().enumerate() {
        let s = match &cfg.augment {
            Some(a) => augment(&samples[i], a, &mut sample_rng(cfg.seed, first_index + j as u64))?,
            None => samples[i].clone(),
        };
        items.push(s);
    }
    let images: Vec<Tensor> = items.iter().map(|s| s.image.clone()).collect();
    let labels: Vec<LabelMap> = items.into_iter().map(|s| s.label).collect();
    Ok((Tensor::stack(&images)?, LabelMap::stack(&labels)?))
}

/// Train `graph` in place for `cfg.epochs` passes over `samples`.
///
/// Samples are reshuffled every epoch; the last batch of an epoch may be
/// short. A non-finite loss aborts before any parameter is touched.
pub fn train(graph: &mut ModelGraph, samples: &[Sample], cfg: &TrainConfig, observer: &mut dyn TrainObserver) -> Result<TrainSummary> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let per_epoch = cfg.iters_per_epoch(samples.len());
    let max_iters = cfg.max_iters(samples.len());
    let mut opt = Sgd::new(graph.params(), cfg.momentum, cfg.l2);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut final_loss = f64::NAN;
    let mut iter = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for b in 0..per_epoch {
            let idx = &order[b * cfg.batch_size..((b + 1) * cfg.batch_size).min(samples.len())];
            let (image, label) = batch(samples, idx, cfg, (iter * cfg.batch_size) as u64)?;
            let lr = poly_lr(cfg.base_lr, iter, max_iters, cfg.power);
            let losses = train_step(graph, &image, &label, cfg.aux_weight, cfg.seed ^ (iter as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))?;
            if !losses.total.is_finite() {
                return Err(Error::NonFiniteLoss { iter, lr });
            }
            opt.step(graph.params_mut(), lr)?;
            let record = IterRecord { iter, epoch, loss: losses.total, main_loss: losses.main, aux_loss: losses.aux, lr };
            observer.on_iter(&record)?;
            final_loss = losses.total;
            iter += 1;
        }
        observer.on_epoch(epoch, graph)?;
    }
    graph.params_mut().zero_grad();
    Ok(TrainSummary { iters: iter, final_loss })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn poly_schedule_endpoints() {
        assert_eq!(poly_lr(0.045, 0, 100, 0.9), 0.045);
        assert_eq!(poly_lr(0.045, 100, 100, 0.9), 0.0);
        let mid = poly_lr(0.045, 50, 100, 0.9);
        assert!((mid - 0.045 * 0.5f64.powf(0.9)).abs() < 1e-15);
    }

    #[test]
    fn aux_weighting() {
        assert_eq!(combine_losses(1.0, Some((0.5, 0.25)), 0.4), 1.0 + 0.4 * 0.75);
        assert_eq!(combine_losses(1.0, None, 0.4), 1.0);
    }
}
