//! The parameter-free SMoE decoder.
//!
//! A block is modelled over the unit square as a softmax-gated mixture of
//! constant experts. Each gate is driven by a Gaussian kernel whose precision
//! matrix is `A Aᵀ` with `A` lower triangular, so every kernel is positive
//! semidefinite by construction and no matrix inversion is ever needed.
//!
//! Gating is evaluated on log-kernel values with the maximum subtracted
//! before exponentiation; points far from every kernel therefore still get
//! well-defined weights instead of `0 / 0`.

use crate::error::{Result, SmoeError};
use crate::grid::{pixel_lattice, ImageGrid};

/// A point in block-normalized coordinates, `[x, y]` with `x` along columns.
pub type Point = [f64; 2];

/// Lower-triangular steering factor `A = [[a11, 0], [a21, a22]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Steering {
    pub a11: f64,
    pub a21: f64,
    pub a22: f64,
}

impl Steering {
    pub const fn new(a11: f64, a21: f64, a22: f64) -> Self {
        Self { a11, a21, a22 }
    }

    /// `scale * I`.
    pub const fn isotropic(scale: f64) -> Self {
        Self::new(scale, 0.0, scale)
    }

    /// The precision matrix `A Aᵀ`, row-major.
    pub fn precision(&self) -> [[f64; 2]; 2] {
        let Steering { a11, a21, a22 } = *self;
        [[a11 * a11, a11 * a21], [a11 * a21, a21 * a21 + a22 * a22]]
    }

    /// `(x - mu)ᵀ A Aᵀ (x - mu)`, evaluated as `|Aᵀ d|²`.
    #[inline]
    pub fn quadratic_form(&self, d: Point) -> f64 {
        let u = self.a11 * d[0] + self.a21 * d[1];
        let v = self.a22 * d[1];
        u * u + v * v
    }
}

/// One kernel: center, steering factor and constant expert value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteeredKernel {
    pub center: Point,
    pub steering: Steering,
    pub expert: f64,
}

impl SteeredKernel {
    pub const fn new(center: Point, steering: Steering, expert: f64) -> Self {
        Self {
            center,
            steering,
            expert,
        }
    }

    /// Unnormalized Gaussian response `exp(-½ (x-mu)ᵀ A Aᵀ (x-mu))`.
    pub fn value(&self, x: Point) -> f64 {
        self.log_value(x).exp()
    }

    #[inline]
    pub fn log_value(&self, x: Point) -> f64 {
        let d = [x[0] - self.center[0], x[1] - self.center[1]];
        -0.5 * self.steering.quadratic_form(d)
    }
}

/// Free-function form of [`SteeredKernel::value`].
pub fn kernel_value(kernel: &SteeredKernel, x: Point) -> f64 {
    kernel.value(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelKind {
    /// Isotropic kernels sharing one bandwidth; steering factors are ignored.
    Radial,
    /// Full per-kernel steering.
    Steered,
}

impl KernelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            KernelKind::Radial => "radial",
            KernelKind::Steered => "steered",
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = SmoeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "radial" => Ok(KernelKind::Radial),
            "steered" => Ok(KernelKind::Steered),
            other => Err(SmoeError::invalid(format!(
                "unknown kernel kind {other:?} (expected radial or steered)"
            ))),
        }
    }
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const DEFAULT_KERNELS: usize = 4;

/// K kernels modelling one block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockModel {
    kind: KernelKind,
    kernels: Vec<SteeredKernel>,
    bandwidth: f64,
}

impl BlockModel {
    pub fn steered(kernels: Vec<SteeredKernel>) -> Result<Self> {
        if kernels.is_empty() {
            return Err(SmoeError::invalid("a block model needs at least one kernel"));
        }
        Ok(Self {
            kind: KernelKind::Steered,
            kernels,
            bandwidth: 0.0,
        })
    }

    pub fn radial(kernels: Vec<SteeredKernel>, bandwidth: f64) -> Result<Self> {
        if kernels.is_empty() {
            return Err(SmoeError::invalid("a block model needs at least one kernel"));
        }
        check_bandwidth(bandwidth)?;
        Ok(Self {
            kind: KernelKind::Radial,
            kernels,
            bandwidth,
        })
    }

    #[inline]
    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    #[inline]
    pub fn kernels(&self) -> &[SteeredKernel] {
        &self.kernels
    }

    #[inline]
    pub fn kernels_mut(&mut self) -> &mut [SteeredKernel] {
        &mut self.kernels
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    /// Shared bandwidth `B`; only meaningful for radial models.
    #[inline]
    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Log-kernel of kernel `i` at `x` under this model's kind.
    #[inline]
    pub fn log_kernel(&self, i: usize, x: Point) -> f64 {
        let k = &self.kernels[i];
        match self.kind {
            KernelKind::Steered => k.log_value(x),
            KernelKind::Radial => {
                let dx = x[0] - k.center[0];
                let dy = x[1] - k.center[1];
                -self.bandwidth * (dx * dx + dy * dy)
            }
        }
    }

    /// Gating weights at `x`, written into `out` (length K).
    pub fn gating_into(&self, x: Point, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.kernels.len());
        let mut max = f64::NEG_INFINITY;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.log_kernel(i, x);
            max = max.max(*o);
        }
        let mut sum = 0.0;
        for o in out.iter_mut() {
            *o = (*o - max).exp();
            sum += *o;
        }
        for o in out.iter_mut() {
            *o /= sum;
        }
    }

    /// Mixture output `Σ m_i w_i(x)`.
    pub fn evaluate(&self, x: Point) -> f64 {
        let mut max = f64::NEG_INFINITY;
        for i in 0..self.kernels.len() {
            max = max.max(self.log_kernel(i, x));
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, k) in self.kernels.iter().enumerate() {
            let e = (self.log_kernel(i, x) - max).exp();
            num += k.expert * e;
            den += e;
        }
        num / den
    }

    pub fn expert_range(&self) -> (f64, f64) {
        self.kernels
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), k| {
                (lo.min(k.expert), hi.max(k.expert))
            })
    }
}

fn check_bandwidth(bandwidth: f64) -> Result<()> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(SmoeError::invalid(format!(
            "radial bandwidth must be positive and finite, got {bandwidth}"
        )));
    }
    Ok(())
}

/// Softmax gate of every kernel at `x`; sums to one.
pub fn gating_weights(model: &BlockModel, x: Point) -> Vec<f64> {
    let mut out = vec![0.0; model.len()];
    model.gating_into(x, &mut out);
    out
}

pub fn reconstruct(model: &BlockModel, xs: &[Point]) -> Vec<f64> {
    xs.iter().map(|&x| model.evaluate(x)).collect()
}

/// Direct form of the radial mixture, `Σ m_i softmax_i(-B |x - mu_i|²)`.
///
/// Fails unless `model` is radial with a positive bandwidth.
pub fn reconstruct_radial(model: &BlockModel, xs: &[Point]) -> Result<Vec<f64>> {
    if model.kind() != KernelKind::Radial {
        return Err(SmoeError::invalid("reconstruct_radial needs a radial model"));
    }
    let b = model.bandwidth();
    check_bandwidth(b)?;
    let kernels = model.kernels();
    let mut dist = vec![0.0; kernels.len()];
    Ok(xs
        .iter()
        .map(|x| {
            for (d, k) in dist.iter_mut().zip(kernels) {
                *d = (x[0] - k.center[0]).powi(2) + (x[1] - k.center[1]).powi(2);
            }
            let nearest = dist.iter().copied().fold(f64::INFINITY, f64::min);
            let (num, den) = kernels
                .iter()
                .zip(&dist)
                .fold((0.0, 0.0), |(num, den), (k, &d)| {
                    let e = (-b * (d - nearest)).exp();
                    (num + k.expert * e, den + e)
                });
            num / den
        })
        .collect())
}

/// Samples the continuous model on the pixel-center lattice of a
/// `width`x`height` raster covering the unit square.
pub fn resample(model: &BlockModel, width: usize, height: usize) -> Result<ImageGrid> {
    if width == 0 || height == 0 {
        return Err(SmoeError::invalid(format!(
            "resample size must be positive, got {width}x{height}"
        )));
    }
    let values = reconstruct(model, &pixel_lattice(width, height));
    ImageGrid::new(width, height, values)
}
