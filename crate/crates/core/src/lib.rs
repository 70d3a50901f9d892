//! A small from-scratch CNN stack for classifying crop-field image patches
//! into broadleaf weeds, grass weeds, soil and soybean.
//!
//! The network has two convolutional branches over the same input: one with
//! ordinary 3×3/5×5 convolutions and one with dilated convolutions. Their
//! flattened features are concatenated and classified by a dense head.
//!
//! Layout conventions: tensors are row-major, images are channel-last
//! `(H, W, C)`, batches put the batch axis first.

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use data::{ClassLabel, SampleSource, NUM_CLASSES};
pub use error::{Error, Result};
pub use graph::{parameter_count, Graph, Parameter};
pub use model::{build, summarize, ArchitectureConfig, Profile};
pub use optim::{adam_step, AdamHyper, AdamState};
pub use rng::SplitMix64;
pub use scalar::{Precision, Scalar};
pub use tensor::{Shape, Tensor};
pub use eval::{evaluate, predict, ConfusionMatrix, Evaluation, Prediction};
pub use train::{run_training, EpochRecord, TrainConfig, TrainHistory, Trainer};
