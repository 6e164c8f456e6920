use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, SmoeError};
use crate::grid::ImageGrid;

/// Speckle noise `y = clamp(x + x n, 0, 1)` with `n ~ N(0, variance)`.
///
/// The perturbation is added to the signal but scales with it, so black
/// pixels stay black.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub variance: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub const DEFAULT_VARIANCE: f64 = 0.01;

    pub fn new(variance: f64, seed: u64) -> Self {
        Self { variance, seed }
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::new(Self::DEFAULT_VARIANCE, 0)
    }
}

pub fn add_speckle(image: &ImageGrid, spec: &NoiseSpec) -> Result<ImageGrid> {
    if !(spec.variance >= 0.0) || !spec.variance.is_finite() {
        return Err(SmoeError::invalid(format!(
            "noise variance must be finite and non-negative, got {}",
            spec.variance
        )));
    }
    if spec.variance == 0.0 {
        return Ok(image.clone());
    }
    let normal = Normal::new(0.0, spec.variance.sqrt()).expect("std dev is finite and positive");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = image.clone();
    for x in out.pixels_mut() {
        let n: f64 = normal.sample(&mut rng);
        *x = (*x + *x * n).clamp(0.0, 1.0);
    }
    Ok(out)
}
