//! A self-contained engine for the PDCOVIDNet parallel-dilated convolutional
//! network: tensor primitives, layer forward/backward kernels, the
//! two-branch model graph, Adam training with on-the-fly augmentation,
//! Grad-CAM / Grad-CAM++ saliency maps, and classifier evaluation metrics.

pub mod error;
pub mod layers;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
