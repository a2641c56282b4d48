//! Minimal reverse-mode autodiff on f64 CPU tensors.
//!
//! Everything trainable in this crate (the visual encoder, the recurrent
//! decoders, the GAN stages, the toy classifier) runs on this engine. Graphs
//! are built per forward call from plain parameter arrays held in a
//! [`ParamStore`], so model structs stay `Send + Sync` and checkpointing is
//! a matter of serializing the store.

mod adam;
mod layers;
mod params;
mod tensor;

pub use adam::Adam;
pub use layers::{Conv2d, Embedding, Linear, LstmCell, LstmState};
pub use params::{InitSpec, LeafSet, ParamId, ParamStore};
pub use tensor::{softmax, Tensor};
