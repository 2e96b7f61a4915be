//! Fast-SCNN semantic segmentation on the CPU: tensors and differentiable
//! primitives, the network and its blocks, training, augmentation,
//! evaluation and file formats.

pub mod augment;
pub mod autograd;
pub mod blocks;
pub mod check;
pub mod data_io;
pub mod error;
pub mod eval;
pub mod layers;
pub mod model;
pub mod ops;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result, WeightError};
pub use tensor::{Element, LabelMap, Shape, Tensor, IGNORE_ID};
