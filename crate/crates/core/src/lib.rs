//! Slice-gated brain tumor segmentation with a small seven-layer network:
//! volumes and phantoms, numeric kernels, the network, the slice gate,
//! refinement, metrics and training.

pub mod config;
pub mod error;
pub mod gate;
pub mod metrics;
pub mod network;
pub mod par;
pub mod refine;
pub mod tensor;
pub mod train;
pub mod volume;

pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use par::Exec;
