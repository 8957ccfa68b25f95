//! Model: encoder, geometric interaction layers, action mapper, variants.

pub mod basis;
pub mod checkpoint;
pub mod layers;
pub mod network;

pub use basis::Basis;
pub use network::{action_of, LayerFeatures, Network};
