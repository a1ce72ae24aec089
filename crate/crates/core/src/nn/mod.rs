//! Small neural-network toolkit: a tape-based autodiff, the layers the
//! encoder, decoder and noise network are built from, Adam, and a
//! finite-difference gradient checker.

pub mod encoding;
pub mod gradcheck;
pub mod layers;
pub mod mat;
pub mod optim;
pub mod params;
pub mod tape;
pub mod unet;

pub use encoding::{positional_encoding, positional_table, PatchEmbed, PatchGrid};
pub use layers::{Attention, AttentionDims, Conv1d, CrossAttention, Init, LayerNorm, Linear, Mlp, TransformerBlock};
pub use mat::Mat;
pub use optim::{Adam, LrSchedule};
pub use params::{Graph, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use unet::{UNet1d, UNetConfig};
