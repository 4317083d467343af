//! The 7-layer segmentation network: architecture, state, passes,
//! checkpoints and whole-case prediction.

mod checkpoint;
mod forward;
mod predict;
pub mod spec;
mod state;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint,
    save_checkpoint_with, OptimizerMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use forward::{ForwardTrace, Phase};
pub use predict::{argmax_labels, predict_case};
pub use spec::{
    count_flops, count_flops_with, count_params, Activation, FlopConvention, FlopReport,
    LayerFlops, LayerSpec, NetworkSpec, OutputActivation, ParamReport, PathSpec, SkipSpec,
    FLOP_CONVENTION,
};
pub use state::{ConvId, Gradients, NetworkState, NormId};
