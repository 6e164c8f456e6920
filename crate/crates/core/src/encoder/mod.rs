//! Encoder inference: weight files, the convolutional encoder and the
//! mapping from its latent output to block models.

mod format;
mod latent;
mod network;

pub use format::{ArchLine, SmwFile, Tensor, SMW_MAGIC};
pub use latent::{decode_latent, LatentLayout, LATENT_PER_KERNEL};
pub use network::{
    Activation, EncoderArch, EncoderNetwork, LayerSpec, CONV_FILTERS, DENSE_OUTPUTS, LATENT_DIM,
};
