//! Network blocks over the autodiff tape.

mod arch;
mod blocks;
pub mod graph;
mod params;
mod plan;

pub use arch::{BaseArch, CodecArch, CodecSource, CompMode};
pub use blocks::*;
pub use params::{load_params, project_gdn, save_params, Arch, CheckpointError, ModelMeta, ModelParams, CHECKPOINT_VERSION};
pub use plan::{Activation, Bound, Layer, LayerPlan};
