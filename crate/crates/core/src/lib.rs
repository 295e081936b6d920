//! Feature-aligned pyramid networks at desk scale.
//!
//! A dense NCHW `f64` tensor type with a reverse-mode tape, the
//! convolutional primitives (standard, deformable, transposed), the
//! feature selection and alignment blocks with the pyramid variants built
//! from them, a synthetic segmentation benchmark with an SGD trainer, and
//! boundary-band segmentation metrics.

pub mod checkpoint;
pub mod checks;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod label;
pub mod metrics;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod pgm;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use label::LabelMap;
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Dims, Tensor};
