//! Dense and attention building blocks with reverse-mode gradients.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod han;
pub mod layers;
pub mod mat;
pub mod params;
pub mod tape;

pub use adam::{Adam, AdamConfig};
pub use han::{han_encode, han_encode_batch, HanConfig, HanParams};
pub use layers::{Linear, Mlp};
pub use mat::Mat;
pub use params::{Grads, ParamId, ParamStore};
pub use tape::{HeadMode, NResult, NeuralError, Tape, Var};
