//! Named parameter registry shared by every layer of a model.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// What a registered tensor is; drives optimizer and serialization policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    StandardConv,
    PointwiseConv,
    DepthwiseConv,
    BnGamma,
    BnBeta,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }

    /// Whether ℓ2 weight decay applies. Depthwise kernels and the batch-norm
    /// affine terms are exempt.
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::StandardConv | ParamKind::PointwiseConv)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter<T: Element> {
    name: String,
    kind: ParamKind,
    dims: Vec<usize>,
    value: Arc<Tensor<T>>,
    grad: Option<Tensor<T>>,
}

impl<T: Element> Parameter<T> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> ParamKind {
        self.kind
    }

    /// Logical dimensions (rank 1 for per-channel vectors, rank 4 for kernels).
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn grad(&self) -> Option<&Tensor<T>> {
        self.grad.as_ref()
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }
}

/// Tensor shape used to store a parameter with the given logical dims.
pub fn storage_shape(dims: &[usize]) -> Result<Shape> {
    match *dims {
        [c] => Ok(Shape::new(1, c, 1, 1)),
        [n, c, h, w] => Ok(Shape::new(n, c, h, w)),
        _ => Err(Error::invalid(format!("unsupported parameter rank {}", dims.len()))),
    }
}

/// Ordered name → tensor registry. Registration order is the iteration,
/// initialization and serialization order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Element = f32> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new(), by_name: HashMap::new() }
    }

    pub fn register(&mut self, name: impl Into<String>, kind: ParamKind, dims: &[usize], value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::invalid(format!("parameter {name} registered twice")));
        }
        let shape = storage_shape(dims)?;
        if value.shape() != shape {
            return Err(Error::shape(format!("parameter {name}: value {} vs dims {dims:?}", value.shape())));
        }
        let id = ParamId(self.params.len());
        self.params.push(Parameter { name: name.clone(), kind, dims: dims.to_vec(), value: Arc::new(value), grad: None });
        self.by_name.insert(name, id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub(crate) fn shared_value(&self, id: ParamId) -> Arc<Tensor<T>> {
        self.params[id.0].value.clone()
    }

    /// Mutable access to a value, unsharing it from any live forward pass.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if value.shape() != p.value.shape() {
            return Err(Error::shape(format!("parameter {}: {} vs {}", p.name, value.shape(), p.value.shape())));
        }
        p.value = Arc::new(value);
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params[id.0].grad.as_ref()
    }

    pub fn set_grad(&mut self, id: ParamId, grad: Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        crate::error::check_same_shape(&p.name, p.value.shape(), grad.shape())?;
        p.grad = Some(grad);
        Ok(())
    }

    /// Add into the stored gradient (creating it if absent).
    pub fn accumulate_grad(&mut self, id: ParamId, grad: &Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        match &mut p.grad {
            Some(acc) => acc.add_assign(grad),
            None => {
                crate::error::check_same_shape(&p.name, p.value.shape(), grad.shape())?;
                p.grad = Some(grad.clone());
                Ok(())
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Number of trainable scalars (running statistics excluded).
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.kind.trainable()).map(|p| p.numel()).sum()
    }

    /// Same registry with values converted to another precision; gradients dropped.
    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter { name: p.name.clone(), kind: p.kind, dims: p.dims.clone(), value: Arc::new(p.value.cast()), grad: None })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}
