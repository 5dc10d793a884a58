//! Binary polyp/normal image classification with small convolutional
//! networks, written from scratch.
//!
//! The crate covers the whole experiment pipeline:
//!
//! * [`tensor`] and [`rng`]: row-major `f64` tensors and a seeded generator.
//! * [`nn`]: convolution, ReLU, max pooling, flatten, dense, dropout and the
//!   sigmoid/softmax heads, each with an explicit backward pass.
//! * [`optim`]: Adam with bias correction.
//! * [`data`]: crop generation from image/mask pairs, resizing, splitting.
//! * [`augment`]: label-preserving image transforms and the batch generator.
//! * [`zoo`]: model builders and the weight container format.
//! * [`train`]: the epoch loop with early stopping and checkpointing.
//! * [`eval`]: confusion matrices, rates, ROC/AUC, CSV tables and SVG plots.
//! * [`experiment`]: config files and end-to-end runs used by the CLI.

pub mod augment;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod zoo;

pub use data::{Label, LabeledDataset, RawPair, Sample, Split};
pub use error::{Error, Result};
pub use nn::{Head, Layer, LayerKind, Mode, Network};
pub use optim::{Adam, AdamConfig};
pub use rng::Rng;
pub use tensor::{Reduction, Tensor};
pub use zoo::{ModelSpec, WeightContainer};
