//! Minimal feed-forward network: layers, cross-entropy, Adam.

pub mod adam;
pub mod layers;
pub mod loss;
pub mod model;

pub use adam::AdamState;
pub use layers::{LayerSpec, Mode};
pub use loss::cross_entropy_loss;
pub use model::{Architecture, ConvBlock, ForwardPass, ModelState};
