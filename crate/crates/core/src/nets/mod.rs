//! Encoder–decoder restoration networks built from registered blocks.

pub mod blocks;
pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod params;

pub use blocks::{block_registry, Attention, Block, GatedConvBlock, Mixer, TransformerBlock};
pub use checkpoint::Archive;
pub use model::{block_param_count, build_model, build_with_block, ArchVariant, Model};
pub use params::{Bound, Init, ParamStore};
