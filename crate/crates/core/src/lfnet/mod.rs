//! The staged light field network and its function-preserving transitions.

mod checkpoint;
mod config;
mod network;
mod transition;

pub use checkpoint::{
    checkpoint_precision, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, RngState,
    TrainState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub(crate) use checkpoint::write_atomic;
pub use config::{DepthGrid, StageConfig};
pub use network::{
    forward, init_siren, init_siren_at_stage, LayerLayout, ProLiFNetwork, RadianceSamples, SubnetworkParams,
};
pub use transition::{merge_layer, merge_stage, subdivide_depth, transition, transition_moments};
