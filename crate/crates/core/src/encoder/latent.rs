use crate::error::{Result, SmoeError};
use crate::model::{BlockModel, SteeredKernel, Steering};

use super::network::LATENT_DIM;

/// Values per kernel in the latent vector: `m, mux, muy, a11, a21, a22`.
pub const LATENT_PER_KERNEL: usize = 6;

/// How the encoder's output vector maps onto kernel parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentLayout {
    /// Per-kernel contiguous groups of six; sigmoid on expert and center,
    /// identity on the steering entries.
    KernelContiguousSigmoid,
}

impl LatentLayout {
    pub fn tag(self) -> &'static str {
        match self {
            LatentLayout::KernelContiguousSigmoid => "kc6-sigmoid",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "kc6-sigmoid" => Some(LatentLayout::KernelContiguousSigmoid),
            _ => None,
        }
    }

    pub fn decode(self, latent: &[f32]) -> Result<BlockModel> {
        match self {
            LatentLayout::KernelContiguousSigmoid => decode_latent(latent),
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Decodes a 24-value latent into a steered K = 4 model.
pub fn decode_latent(latent: &[f32]) -> Result<BlockModel> {
    if latent.len() != LATENT_DIM {
        return Err(SmoeError::DimensionMismatch {
            expected: format!("{LATENT_DIM} latent values"),
            actual: format!("{}", latent.len()),
        });
    }
    let kernels = latent
        .chunks_exact(LATENT_PER_KERNEL)
        .map(|z| {
            let z: Vec<f64> = z.iter().map(|&v| v as f64).collect();
            SteeredKernel::new(
                [sigmoid(z[1]), sigmoid(z[2])],
                Steering::new(z[3], z[4], z[5]),
                sigmoid(z[0]),
            )
        })
        .collect();
    BlockModel::steered(kernels)
}
