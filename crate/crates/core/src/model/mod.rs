//! The segmentation network and its configuration.

mod block;
mod check;
mod config;
mod layers;
mod net;
mod params;

pub use check::check_model;
pub use block::{local_context, Augmented, Block, BlockOutput, Context};
pub use config::{
    Aggregation, AugLoss, Fusion, Level, ModelConfig, OffsetOrder, Sampler, Variant, BLOCK_GRID, DECODER_WIDTH,
    DEFAULT_AUG_WEIGHTS, DEFAULT_DIMS, DEFAULT_DIVISORS, EQUAL_LOSS_WEIGHT, EXTRACTOR_DIM, FUSION_GRID, NETWORK_GRID,
};
pub use layers::{Dense, DenseKind, Fwd};
pub use net::{argmax_rows, ForwardOutput, Geometry, LevelTrace, Model};
pub use params::{glorot, Binder, Param, ParamStore};
