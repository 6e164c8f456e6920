//! Gradient-descent fitting of block models (the SMoE-GD baseline).
//!
//! The loss is the mean squared error between a block and the model sampled
//! on the block's pixel-center lattice. Gradients are analytic. With
//! `d = x - mu`, `(u, v) = Aᵀ d` and log-kernel `l = -(u² + v²) / 2`:
//!
//! ```text
//! dl/da11 = -u dx     dl/da21 = -u dy     dl/da22 = -v dy
//! dl/dmux = u a11     dl/dmuy = u a21 + v a22
//! dy/dm_i = w_i       dy/dl_i = w_i (m_i - y)
//! ```
//!
//! For radial kernels `l = -B |d|²`, so `dl/dmu = 2 B d`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Result, SmoeError};
use crate::grid::{pixel_center, pixel_lattice, ImageGrid};
use crate::model::{resample, BlockModel, KernelKind, SteeredKernel, Steering};
use crate::pipeline::{partition, reassemble, BlockPartition};

const PARAMS_PER_KERNEL: usize = 6;

/// Steering entries beyond this magnitude are unusual for natural blocks.
const STEERING_SANITY: f64 = 50.0;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Project experts and centers back onto `[0, 1]` after every step.
    pub clamp_mu: bool,
    /// Shared bandwidth used when fitting radial models.
    pub radial_bandwidth: f64,
    /// Uniform perturbation of the initial centers; zero keeps the plain grid.
    pub init_jitter: f64,
    pub seed: u64,
    /// Record the loss every `trace_every` iterations; zero disables tracing.
    pub trace_every: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            learning_rate: 5e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            clamp_mu: true,
            radial_bandwidth: 32.0,
            init_jitter: 0.0,
            seed: 0,
            trace_every: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(SmoeError::invalid("iterations must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(SmoeError::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(SmoeError::invalid("Adam betas must lie in [0, 1)"));
        }
        if !(self.radial_bandwidth > 0.0) {
            return Err(SmoeError::invalid("radial bandwidth must be positive"));
        }
        if !(self.init_jitter >= 0.0) {
            return Err(SmoeError::invalid("init jitter must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub iteration: usize,
    pub loss: f64,
    pub best: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: BlockModel,
    /// Loss of `model` on the fitted block, recomputed with [`loss`].
    pub final_loss: f64,
    /// Iterate the model was taken from (0 = initialization).
    pub best_iteration: usize,
    pub loss_trace: Vec<TracePoint>,
}

/// Analytic partial derivatives for one kernel.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KernelGradient {
    pub expert: f64,
    pub center: [f64; 2],
    pub a11: f64,
    pub a21: f64,
    pub a22: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient {
    pub kernels: Vec<KernelGradient>,
}

/// Mean squared error of `model` against `block` over the pixel-center lattice.
pub fn loss(model: &BlockModel, block: &ImageGrid) -> f64 {
    let (w, h) = (block.width(), block.height());
    let mut sum = 0.0;
    for row in 0..h {
        for col in 0..w {
            let r = block.get(row, col) - model.evaluate(pixel_center(row, col, w, h));
            sum += r * r;
        }
    }
    sum / (w * h) as f64
}

/// Exact gradient of [`loss`]. Radial models report zero steering partials;
/// their bandwidth is a fixed hyperparameter.
pub fn gradient(model: &BlockModel, block: &ImageGrid) -> ModelGradient {
    let objective = Objective::new(block, model.kind(), model.bandwidth());
    let params = pack(model);
    let mut grad = vec![0.0; params.len()];
    let mut scratch = Scratch::new(model.len());
    objective.loss_and_gradient(&params, &mut grad, &mut scratch);
    ModelGradient {
        kernels: grad
            .chunks_exact(PARAMS_PER_KERNEL)
            .map(|g| KernelGradient {
                expert: g[0],
                center: [g[1], g[2]],
                a11: g[3],
                a21: g[4],
                a22: g[5],
            })
            .collect(),
    }
}

/// Grid initialization: centers on a `ceil(sqrt K)` column grid, experts
/// read from the pixel containing each center, isotropic steering `4 g I`
/// for a `g`-column grid (`8 I` at K = 4).
pub fn initial_model(
    block: &ImageGrid,
    kind: KernelKind,
    kernels: usize,
    config: &OptimizerConfig,
) -> Result<BlockModel> {
    if kernels < 1 {
        return Err(SmoeError::invalid("at least one kernel is required"));
    }
    let cols = (kernels as f64).sqrt().ceil() as usize;
    let rows = kernels.div_ceil(cols);
    let scale = 4.0 * cols as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (w, h) = (block.width(), block.height());
    let list = (0..kernels)
        .map(|i| {
            let mut center = [
                ((i % cols) as f64 + 0.5) / cols as f64,
                ((i / cols) as f64 + 0.5) / rows as f64,
            ];
            if config.init_jitter > 0.0 {
                for c in &mut center {
                    *c = (*c + rng.random_range(-config.init_jitter..=config.init_jitter))
                        .clamp(0.0, 1.0);
                }
            }
            let col = ((center[0] * w as f64) as usize).min(w - 1);
            let row = ((center[1] * h as f64) as usize).min(h - 1);
            SteeredKernel::new(center, Steering::isotropic(scale), block.get(row, col))
        })
        .collect();
    match kind {
        KernelKind::Steered => BlockModel::steered(list),
        KernelKind::Radial => BlockModel::radial(list, config.radial_bandwidth),
    }
}

/// Fits one block with Adam from the grid initialization and returns the
/// best iterate seen.
pub fn fit_block(
    block: &ImageGrid,
    kind: KernelKind,
    kernels: usize,
    config: &OptimizerConfig,
) -> Result<FitResult> {
    config.validate()?;
    if block.pixels().is_empty() {
        return Err(SmoeError::invalid("cannot fit an empty block"));
    }
    let init = initial_model(block, kind, kernels, config)?;
    let objective = Objective::new(block, kind, init.bandwidth());

    let mut params = pack(&init);
    let mut grad = vec![0.0; params.len()];
    let mut scratch = Scratch::new(kernels);
    let mut adam = Adam::new(params.len(), config);

    let mut best_loss = f64::INFINITY;
    let mut best_params = params.clone();
    let mut best_iteration = 0;
    let mut trace = Vec::new();

    for iteration in 0..=config.iterations {
        let current = if iteration < config.iterations {
            objective.loss_and_gradient(&params, &mut grad, &mut scratch)
        } else {
            objective.loss(&params, &mut scratch)
        };
        // A NaN loss never compares below the best; keep the last good iterate.
        if current < best_loss {
            best_loss = current;
            best_params.copy_from_slice(&params);
            best_iteration = iteration;
        }
        if config.trace_every > 0
            && (iteration % config.trace_every == 0 || iteration == config.iterations)
        {
            trace.push(TracePoint {
                iteration,
                loss: current,
                best: best_loss,
            });
        }
        if iteration == config.iterations {
            break;
        }
        adam.step(&mut params, &grad);
        if config.clamp_mu {
            for p in params.chunks_exact_mut(PARAMS_PER_KERNEL) {
                for v in &mut p[..3] {
                    *v = v.clamp(0.0, 1.0);
                }
            }
        }
    }

    let model = unpack(&best_params, &init);
    let final_loss = loss(&model, block);
    Ok(FitResult {
        model,
        final_loss,
        best_iteration,
        loss_trace: trace,
    })
}

/// Per-block fits over a partitioned image together with the reassembled
/// reconstruction.
#[derive(Debug, Clone)]
pub struct ImageFit {
    pub fits: Vec<FitResult>,
    pub partition: BlockPartition,
    pub reconstruction: ImageGrid,
}

impl ImageFit {
    pub fn models(&self) -> Vec<BlockModel> {
        self.fits.iter().map(|f| f.model.clone()).collect()
    }
}

/// Center-crops `image` to whole blocks and fits every block independently.
pub fn fit_image(
    image: &ImageGrid,
    block_size: usize,
    kind: KernelKind,
    kernels: usize,
    config: &OptimizerConfig,
) -> Result<ImageFit> {
    config.validate()?;
    let (blocks, partition) = partition(image, block_size)?;
    let fits = blocks
        .par_iter()
        .map(|b| fit_block(b, kind, kernels, config))
        .collect::<Result<Vec<_>>>()?;

    let wild = fits
        .iter()
        .filter(|f| {
            f.model.kernels().iter().any(|k| {
                let s = k.steering;
                s.a11.abs().max(s.a21.abs()).max(s.a22.abs()) > STEERING_SANITY
            })
        })
        .count();
    if kind == KernelKind::Steered && wild > 0 {
        log::warn!(
            "{wild} of {} blocks have steering entries beyond ±{STEERING_SANITY}",
            fits.len()
        );
    }

    let recon = fits
        .iter()
        .map(|f| resample(&f.model, block_size, block_size))
        .collect::<Result<Vec<_>>>()?;
    let reconstruction = reassemble(&recon, &partition)?;
    Ok(ImageFit {
        fits,
        partition,
        reconstruction,
    })
}

fn pack(model: &BlockModel) -> Vec<f64> {
    model
        .kernels()
        .iter()
        .flat_map(|k| {
            [
                k.expert,
                k.center[0],
                k.center[1],
                k.steering.a11,
                k.steering.a21,
                k.steering.a22,
            ]
        })
        .collect()
}

fn unpack(params: &[f64], template: &BlockModel) -> BlockModel {
    let mut model = template.clone();
    for (k, p) in model
        .kernels_mut()
        .iter_mut()
        .zip(params.chunks_exact(PARAMS_PER_KERNEL))
    {
        *k = SteeredKernel::new([p[1], p[2]], Steering::new(p[3], p[4], p[5]), p[0]);
    }
    model
}

struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    lr: f64,
    beta1_t: f64,
    beta2_t: f64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Adam {
    fn new(len: usize, config: &OptimizerConfig) -> Self {
        Self {
            beta1: config.adam_beta1,
            beta2: config.adam_beta2,
            eps: config.adam_eps,
            lr: config.learning_rate,
            beta1_t: 1.0,
            beta2_t: 1.0,
            first: vec![0.0; len],
            second: vec![0.0; len],
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.beta1_t *= self.beta1;
        self.beta2_t *= self.beta2;
        let c1 = 1.0 - self.beta1_t;
        let c2 = 1.0 - self.beta2_t;
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

struct Scratch {
    logits: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl Scratch {
    fn new(kernels: usize) -> Self {
        Self {
            logits: vec![0.0; kernels],
            u: vec![0.0; kernels],
            v: vec![0.0; kernels],
        }
    }
}

/// Precomputed lattice and targets for one block.
struct Objective {
    coords: Vec<[f64; 2]>,
    targets: Vec<f64>,
    kind: KernelKind,
    bandwidth: f64,
}

impl Objective {
    fn new(block: &ImageGrid, kind: KernelKind, bandwidth: f64) -> Self {
        Self {
            coords: pixel_lattice(block.width(), block.height()),
            targets: block.pixels().to_vec(),
            kind,
            bandwidth,
        }
    }

    fn loss(&self, params: &[f64], scratch: &mut Scratch) -> f64 {
        let mut sum = 0.0;
        for (x, &t) in self.coords.iter().zip(&self.targets) {
            let r = self.predict(params, *x, scratch) - t;
            sum += r * r;
        }
        sum / self.targets.len() as f64
    }

    /// Fills `scratch.logits` with normalized gates and returns the output.
    #[inline]
    fn predict(&self, params: &[f64], x: [f64; 2], scratch: &mut Scratch) -> f64 {
        let mut max = f64::NEG_INFINITY;
        let kernels = params.chunks_exact(PARAMS_PER_KERNEL);
        match self.kind {
            KernelKind::Steered => {
                for ((p, l), (u, v)) in kernels
                    .zip(scratch.logits.iter_mut())
                    .zip(scratch.u.iter_mut().zip(scratch.v.iter_mut()))
                {
                    let dx = x[0] - p[1];
                    let dy = x[1] - p[2];
                    *u = p[3] * dx + p[4] * dy;
                    *v = p[5] * dy;
                    *l = -0.5 * (*u * *u + *v * *v);
                    max = max.max(*l);
                }
            }
            KernelKind::Radial => {
                for (p, l) in kernels.zip(scratch.logits.iter_mut()) {
                    let dx = x[0] - p[1];
                    let dy = x[1] - p[2];
                    *l = -self.bandwidth * (dx * dx + dy * dy);
                    max = max.max(*l);
                }
            }
        }
        let mut den = 0.0;
        let mut num = 0.0;
        for (l, p) in scratch
            .logits
            .iter_mut()
            .zip(params.chunks_exact(PARAMS_PER_KERNEL))
        {
            let e = (*l - max).exp();
            *l = e;
            den += e;
            num += e * p[0];
        }
        let inv = 1.0 / den;
        for l in scratch.logits.iter_mut() {
            *l *= inv;
        }
        num * inv
    }

    fn loss_and_gradient(&self, params: &[f64], grad: &mut [f64], scratch: &mut Scratch) -> f64 {
        grad.fill(0.0);
        let scale = 2.0 / self.targets.len() as f64;
        let mut sum = 0.0;
        for (x, &t) in self.coords.iter().zip(&self.targets) {
            let y = self.predict(params, *x, scratch);
            let r = y - t;
            sum += r * r;
            let c = scale * r;
            let kernels = params
                .chunks_exact(PARAMS_PER_KERNEL)
                .zip(grad.chunks_exact_mut(PARAMS_PER_KERNEL))
                .zip(&scratch.logits);
            match self.kind {
                KernelKind::Steered => {
                    for (((p, g), &w), (&u, &v)) in
                        kernels.zip(scratch.u.iter().zip(&scratch.v))
                    {
                        g[0] += c * w;
                        // dL/dl_i
                        let gl = c * w * (p[0] - y);
                        let dx = x[0] - p[1];
                        let dy = x[1] - p[2];
                        let gu = gl * u;
                        g[1] += gu * p[3];
                        g[2] += gu * p[4] + gl * v * p[5];
                        g[3] -= gu * dx;
                        g[4] -= gu * dy;
                        g[5] -= gl * v * dy;
                    }
                }
                KernelKind::Radial => {
                    for ((p, g), &w) in kernels {
                        g[0] += c * w;
                        let s = 2.0 * self.bandwidth * c * w * (p[0] - y);
                        g[1] += s * (x[0] - p[1]);
                        g[2] += s * (x[1] - p[2]);
                    }
                }
            }
        }
        sum / self.targets.len() as f64
    }
}
