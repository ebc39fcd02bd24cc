//! Three-branch multimodal classifier with per-branch muting.

mod arch;
mod mask;
mod net;

pub use arch::{
    linear_param_count, param_count, ArchSpec, BranchSpec, ConvSpec, InputShape, PoolSpec,
    NUM_CLASSES,
};
pub use mask::{Modality, ModalityMask};
pub use net::{Batch, MultimodalNet, NetOutput};
