//! Dense tensors, reverse-mode differentiation, Adam and seeded randomness.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::grad_check;
pub use params::{BoundParams, ParamStore};
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{concat, gelu, layer_norm, matmul, mean, softmax, Tensor};
