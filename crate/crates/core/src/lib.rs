//! A small convolutional-network framework for 2-D semantic segmentation.
//!
//! The crate covers the whole experiment loop: layer primitives with
//! hand-written backward passes ([`layers`]), the FCN and U-Net graphs
//! ([`net`]), eight optimizers ([`optim`]), loss and Dice metrics
//! ([`metrics`]), the preprocessing and augmentation pipeline
//! ([`augment`]), dataset handling ([`dataio`]) and the training protocol with
//! plateau LR reduction, early stopping and checkpoints ([`train`],
//! [`checkpoint`]).

pub mod augment;
pub mod checkpoint;
pub mod dataio;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod metrics;
pub mod net;
pub mod optim;
mod par;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use metrics::{LabelMap, MetricsReport};
pub use net::{Arch, Graph, ModelConfig};
pub use optim::{make_optimizer, Optimizer, OptimizerKind, Overrides};
pub use tensor::{Real, Shape4, Tensor4};
