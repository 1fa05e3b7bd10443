//! Minimal double-precision neural-network primitives with hand-written
//! backward passes, enough for the slice autoencoder and the diffusion
//! transformer. Parameters live in a flat [`param::ParamStore`] so
//! optimizers, checkpoints, and finite-difference checks all see one
//! contiguous vector.

pub mod adamw;
pub mod attention;
pub mod conv3;
pub mod linear;
pub mod ops;
pub mod param;

pub use adamw::AdamW;
pub use attention::MultiHeadAttention;
pub use conv3::Conv3;
pub use linear::Linear;
pub use param::{GradView, ParamStore, Tensor};
