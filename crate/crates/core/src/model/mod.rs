//! Architecture presets, the layer summary table, and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod summary;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ArchitectureConfig, BranchConfig, BranchShapes, Profile};
pub use summary::{summarize, Summary, SummaryRow};

use crate::error::Result;
use crate::graph::Graph;
use crate::scalar::Scalar;

/// Validates `config` and builds a freshly initialized graph.
pub fn build<T: Scalar>(config: &ArchitectureConfig, init_seed: u64) -> Result<Graph<T>> {
    config.validate()?;
    Graph::new(config, init_seed)
}
