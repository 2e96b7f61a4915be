//! Reverse-mode differentiation over a recorded tape of primitive ops.
//!
//! A [`Tape`] records one forward pass. Every op evaluates eagerly and, when
//! recording and at least one input is tracked, pushes a node holding its
//! backward closure. [`Tape::backward`] consumes the tape, so a recording
//! is discarded once its gradients have been taken.
//!
//! An inference tape records nothing; intermediate values are then freed as
//! soon as the forward pass drops them.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::{self, BatchStats, ConvParams};
use crate::tensor::{Element, LabelMap, Shape, Tensor};

type Backward<T> = Box<dyn FnOnce(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Element> {
    parents: Vec<Option<usize>>,
    backward: Option<Backward<T>>,
}

/// A value flowing through a forward pass, optionally tracked by a tape.
#[derive(Clone)]
pub struct Var<T: Element = f32> {
    value: Arc<Tensor<T>>,
    node: Option<usize>,
}

impl<T: Element> Var<T> {
    /// Untracked value; receives no gradient.
    pub fn constant(value: Tensor<T>) -> Self {
        Var { value: Arc::new(value), node: None }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> Shape {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// Take the value, copying only if other handles still share it.
    pub fn into_value(self) -> Tensor<T> {
        Arc::try_unwrap(self.value).unwrap_or_else(|shared| (*shared).clone())
    }
}

impl<T: Element> std::fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("shape", &self.shape()).field("node", &self.node).finish()
    }
}

/// Gradients of every tracked leaf after [`Tape::backward`].
pub struct Gradients<T: Element> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    /// Gradient of a leaf; `None` for untracked vars and for leaves the loss
    /// does not depend on.
    pub fn get(&self, var: &Var<T>) -> Option<&Tensor<T>> {
        var.node.and_then(|id| self.grads.get(id)).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: &Var<T>) -> Option<Tensor<T>> {
        var.node.and_then(|id| self.grads.get_mut(id)).and_then(Option::take)
    }
}

pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
    recording: bool,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    /// A tape that records for a later backward pass.
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), recording: true }
    }

    /// A tape that records nothing.
    pub fn inference() -> Self {
        Tape { nodes: Vec::new(), recording: false }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Input or parameter. Tracked only when recording and `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var<T> {
        self.leaf_shared(Arc::new(value), requires_grad)
    }

    pub(crate) fn leaf_shared(&mut self, value: Arc<Tensor<T>>, requires_grad: bool) -> Var<T> {
        if !(self.recording && requires_grad) {
            return Var { value, node: None };
        }
        let id = self.nodes.len();
        self.nodes.push(Node { parents: Vec::new(), backward: None });
        Var { value, node: Some(id) }
    }

    fn record<F>(&mut self, value: Tensor<T>, inputs: &[&Var<T>], backward: F) -> Var<T>
    where
        F: FnOnce(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    {
        let parents: Vec<Option<usize>> = inputs.iter().map(|v| v.node).collect();
        if !self.recording || parents.iter().all(Option::is_none) {
            return Var { value: Arc::new(value), node: None };
        }
        let id = self.nodes.len();
        self.nodes.push(Node { parents, backward: Some(Box::new(backward)) });
        Var { value: Arc::new(value), node: Some(id) }
    }

    /// Propagate from a scalar loss to every tracked leaf.
    pub fn backward(self, loss: &Var<T>) -> Result<Gradients<T>> {
        if loss.shape() != Shape::scalar() {
            return Err(Error::Autograd(format!("backward needs a scalar loss, got shape {}", loss.shape())));
        }
        let mut nodes = self.nodes;
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        let Some(root) = loss.node else {
            return Ok(Gradients { grads });
        };
        grads[root] = Some(Tensor::scalar(T::one()));
        for id in (0..=root).rev() {
            let node = &mut nodes[id];
            // leaves keep their accumulated gradient
            let Some(backward) = node.backward.take() else { continue };
            let Some(grad_out) = grads[id].take() else { continue };
            let needs: Vec<bool> = node.parents.iter().map(Option::is_some).collect();
            let parent_grads = backward(&grad_out, &needs);
            for (parent, g) in node.parents.iter().zip(parent_grads) {
                let (Some(p), Some(g)) = (parent, g) else { continue };
                match &mut grads[*p] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }

    pub fn conv2d(&mut self, x: &Var<T>, w: &Var<T>, p: ConvParams) -> Result<Var<T>> {
        let y = ops::conv2d(x.value(), w.value(), p)?;
        let (xv, wv) = (x.value.clone(), w.value.clone());
        Ok(self.record(y, &[x, w], move |g, needs| {
            let (dx, dw) = ops::conv2d_backward(&xv, &wv, p, g, needs[0]);
            vec![dx, needs[1].then_some(dw)]
        }))
    }

    pub fn depthwise_conv2d(&mut self, x: &Var<T>, w: &Var<T>, p: ConvParams) -> Result<Var<T>> {
        let y = ops::depthwise_conv2d(x.value(), w.value(), p)?;
        let (xv, wv) = (x.value.clone(), w.value.clone());
        Ok(self.record(y, &[x, w], move |g, needs| {
            let (dx, dw) = ops::depthwise_conv2d_backward(&xv, &wv, p, g, needs[0]);
            vec![dx, needs[1].then_some(dw)]
        }))
    }

    /// Batch norm with batch statistics; the statistics are returned so the
    /// caller can update its running averages.
    pub fn batch_norm_train(&mut self, x: &Var<T>, gamma: &Var<T>, beta: &Var<T>, eps: f64) -> Result<(Var<T>, BatchStats)> {
        let (y, stats) = ops::batch_norm_train(x.value(), gamma.value(), beta.value(), eps)?;
        let (xv, gv, st) = (x.value.clone(), gamma.value.clone(), stats.clone());
        let out = self.record(y, &[x, gamma, beta], move |g, _| {
            let (dx, dg, db) = ops::batch_norm_train_backward(&xv, &gv, &st, eps, g);
            vec![Some(dx), Some(dg), Some(db)]
        });
        Ok((out, stats))
    }

    pub fn batch_norm_infer(
        &mut self,
        x: &Var<T>,
        gamma: &Var<T>,
        beta: &Var<T>,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        eps: f64,
    ) -> Result<Var<T>> {
        let y = ops::batch_norm_infer(x.value(), gamma.value(), beta.value(), running_mean, running_var, eps)?;
        if !self.recording {
            return Ok(Var::constant(y));
        }
        let (xv, gv, m, v) = (x.value.clone(), gamma.value.clone(), running_mean.clone(), running_var.clone());
        Ok(self.record(y, &[x, gamma, beta], move |g, _| {
            let (dx, dg, db) = ops::batch_norm_infer_backward(&xv, &gv, &m, &v, eps, g);
            vec![Some(dx), Some(dg), Some(db)]
        }))
    }

    pub fn relu(&mut self, x: &Var<T>) -> Var<T> {
        let y = ops::relu(x.value());
        let xv = x.value.clone();
        self.record(y, &[x], move |g, _| vec![Some(ops::relu_backward(&xv, g))])
    }

    pub fn adaptive_avg_pool(&mut self, x: &Var<T>, bins: (usize, usize)) -> Result<Var<T>> {
        let y = ops::adaptive_avg_pool(x.value(), bins)?;
        let s = x.shape();
        Ok(self.record(y, &[x], move |g, _| vec![Some(ops::adaptive_avg_pool_backward(s, g))]))
    }

    pub fn bilinear_resize(&mut self, x: &Var<T>, out_h: usize, out_w: usize) -> Result<Var<T>> {
        let y = ops::bilinear_resize(x.value(), out_h, out_w)?;
        let s = x.shape();
        Ok(self.record(y, &[x], move |g, _| vec![Some(ops::bilinear_resize_backward(s, g))]))
    }

    /// Inverted dropout when `rng` is given (training); identity otherwise.
    pub fn dropout<R: Rng>(&mut self, x: &Var<T>, p: f64, rng: Option<&mut R>) -> Result<Var<T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid(format!("dropout probability {p} outside [0, 1)")));
        }
        let Some(rng) = rng else { return Ok(x.clone()) };
        if p == 0.0 {
            return Ok(x.clone());
        }
        let mask: Tensor<T> = ops::dropout_mask(x.shape(), p, rng);
        let data = x.value().data().iter().zip(mask.data()).map(|(&a, &m)| a * m).collect();
        let y = Tensor::from_parts(x.shape(), data);
        Ok(self.record(y, &[x], move |g, _| {
            let d = g.data().iter().zip(mask.data()).map(|(&a, &m)| a * m).collect();
            vec![Some(Tensor::from_parts(g.shape(), d))]
        }))
    }

    pub fn channel_softmax(&mut self, x: &Var<T>) -> Var<T> {
        let y = ops::channel_softmax(x.value());
        if !self.recording || x.node.is_none() {
            return Var::constant(y);
        }
        let probs = Arc::new(y);
        let saved = probs.clone();
        let id = self.nodes.len();
        self.nodes.push(Node {
            parents: vec![x.node],
            backward: Some(Box::new(move |g: &Tensor<T>, _: &[bool]| vec![Some(ops::channel_softmax_backward(&saved, g))])),
        });
        Var { value: probs, node: Some(id) }
    }

    pub fn concat_channels(&mut self, parts: &[&Var<T>]) -> Result<Var<T>> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|v| v.value()).collect();
        let y = ops::concat_channels(&values)?;
        let widths: Vec<usize> = parts.iter().map(|v| v.shape().c).collect();
        Ok(self.record(y, parts, move |g, _| ops::split_channels(g, &widths).into_iter().map(Some).collect()))
    }

    pub fn add(&mut self, a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
        let mut y = a.value().clone();
        y.add_assign(b.value())?;
        Ok(self.record(y, &[a, b], |g, needs| vec![needs[0].then(|| g.clone()), needs[1].then(|| g.clone())]))
    }

    pub fn scale(&mut self, a: &Var<T>, k: f64) -> Var<T> {
        let kt = T::of(k);
        let y = a.value().map(|v| v * kt);
        self.record(y, &[a], move |g, _| vec![Some(g.map(|v| v * kt))])
    }

    /// Sum of all elements as a scalar (accumulated in f64).
    pub fn sum(&mut self, a: &Var<T>) -> Var<T> {
        let y = Tensor::scalar(T::of(a.value().sum_f64()));
        let s = a.shape();
        self.record(y, &[a], move |g, _| vec![Some(Tensor::full(s, g.data()[0]))])
    }

    /// `Σ a ⊙ weights` as a scalar; `weights` is a constant.
    pub fn dot(&mut self, a: &Var<T>, weights: &Tensor<T>) -> Result<Var<T>> {
        crate::error::check_same_shape("dot", a.shape(), weights.shape())?;
        let total: f64 = a.value().data().iter().zip(weights.data()).map(|(&x, &w)| x.as_f64() * w.as_f64()).sum();
        let w = weights.clone();
        Ok(self.record(Tensor::scalar(T::of(total)), &[a], move |g, _| {
            let k = g.data()[0];
            vec![Some(w.map(|v| v * k))]
        }))
    }

    /// Mean pixel cross-entropy; pixels labelled `ignore` contribute nothing.
    pub fn cross_entropy(&mut self, logits: &Var<T>, labels: &LabelMap, ignore: u8) -> Result<Var<T>> {
        let (loss, count) = ops::cross_entropy(logits.value(), labels, ignore)?;
        let (lv, labels) = (logits.value.clone(), labels.clone());
        Ok(self.record(Tensor::scalar(T::of(loss)), &[logits], move |g, _| {
            vec![Some(ops::cross_entropy_backward(&lv, &labels, ignore, count, g.data()[0].as_f64()))]
        }))
    }
}
