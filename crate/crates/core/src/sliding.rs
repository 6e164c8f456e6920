//! Sliding-window multi-hypothesis reconstruction.
//!
//! An `N`x`N` window moves over the image with step `S`. Every window gets
//! its own block model, is reconstructed, and each pixel's output is the
//! plain mean of all window reconstructions ("hypotheses") covering it.
//! There is no padding, so pixels near the border receive fewer hypotheses.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Result, SmoeError};
use crate::estimator::BlockEstimator;
use crate::grid::ImageGrid;
use crate::model::resample;

/// Windows estimated per batch; bounds memory for small steps.
const WINDOWS_PER_BATCH: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlidingConfig {
    pub window: usize,
    pub step: usize,
}

impl Default for SlidingConfig {
    fn default() -> Self {
        Self { window: 8, step: 8 }
    }
}

impl SlidingConfig {
    pub fn new(window: usize, step: usize) -> Self {
        Self { window, step }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(SmoeError::invalid(format!(
                "window must be at least 2, got {}",
                self.window
            )));
        }
        if self.step < 1 || self.step > self.window {
            return Err(SmoeError::invalid(format!(
                "step must satisfy 1 <= step <= window ({}), got {}",
                self.window, self.step
            )));
        }
        Ok(())
    }
}

/// Window positions over the center-cropped region that windows fully cover.
///
/// The covered extent along each axis is `N + S * floor((len - N) / S)`;
/// with `S = N` this is the same crop the block partition uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlidingLayout {
    pub config: SlidingConfig,
    pub positions_x: usize,
    pub positions_y: usize,
    pub origin: (usize, usize),
    pub width: usize,
    pub height: usize,
}

impl SlidingLayout {
    pub fn new(width: usize, height: usize, config: SlidingConfig) -> Result<Self> {
        config.validate()?;
        let SlidingConfig { window, step } = config;
        if width < window || height < window {
            return Err(SmoeError::ImageTooSmall {
                width,
                height,
                min: window,
            });
        }
        let positions_x = (width - window) / step + 1;
        let positions_y = (height - window) / step + 1;
        let covered_w = window + step * (positions_x - 1);
        let covered_h = window + step * (positions_y - 1);
        Ok(Self {
            config,
            positions_x,
            positions_y,
            origin: ((width - covered_w) / 2, (height - covered_h) / 2),
            width: covered_w,
            height: covered_h,
        })
    }

    pub fn window_count(&self) -> usize {
        self.positions_x * self.positions_y
    }

    /// Top-left corner of window `index` in covered-region coordinates.
    pub fn window_origin(&self, index: usize) -> (usize, usize) {
        let step = self.config.step;
        ((index % self.positions_x) * step, (index / self.positions_x) * step)
    }
}

/// Per-pixel running sum and hypothesis count.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisAccumulator {
    width: usize,
    height: usize,
    sum: Vec<f64>,
    count: Vec<u32>,
}

impl HypothesisAccumulator {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            sum: vec![0.0; width * height],
            count: vec![0; width * height],
        }
    }

    /// Adds a window reconstruction whose top-left pixel is (`top`, `left`).
    pub fn add(&mut self, left: usize, top: usize, window: &ImageGrid) {
        let n = window.width();
        for r in 0..window.height() {
            let base = (top + r) * self.width + left;
            let src = &window.pixels()[r * n..(r + 1) * n];
            for ((s, c), v) in self.sum[base..base + n]
                .iter_mut()
                .zip(&mut self.count[base..base + n])
                .zip(src)
            {
                *s += v;
                *c += 1;
            }
        }
    }

    pub fn counts(&self) -> &[u32] {
        &self.count
    }

    /// Averages the hypotheses; pixels without any hypothesis become 0.
    pub fn finish(self) -> ImageGrid {
        let pixels = self
            .sum
            .iter()
            .zip(&self.count)
            .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect();
        ImageGrid::new(self.width, self.height, pixels).expect("accumulator dims are valid")
    }
}

/// Count of hypotheses per pixel of the covered region, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountGrid {
    pub width: usize,
    pub height: usize,
    pub counts: Vec<u32>,
}

impl CountGrid {
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.counts[row * self.width + col]
    }
}

pub fn hypothesis_counts(width: usize, height: usize, config: SlidingConfig) -> Result<CountGrid> {
    let layout = SlidingLayout::new(width, height, config)?;
    let n = config.window;
    let mut acc = HypothesisAccumulator::new(layout.width, layout.height);
    let unit = ImageGrid::filled(n, n, 0.0);
    for i in 0..layout.window_count() {
        let (x, y) = layout.window_origin(i);
        acc.add(x, y, &unit);
    }
    Ok(CountGrid {
        width: layout.width,
        height: layout.height,
        counts: acc.count,
    })
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub image: ImageGrid,
    pub layout: SlidingLayout,
    /// Wall time spent estimating window models.
    pub encode_seconds: f64,
    /// Wall time spent reconstructing and averaging windows.
    pub decode_seconds: f64,
}

/// Runs the sliding-window reconstruction of `image` with `estimator`.
///
/// Windows are estimated in batches (in parallel when possible) but always
/// accumulated in raster order, so the output does not depend on the number
/// of worker threads.
pub fn sweep(
    image: &ImageGrid,
    config: SlidingConfig,
    estimator: &dyn BlockEstimator,
) -> Result<SweepOutput> {
    let layout = SlidingLayout::new(image.width(), image.height(), config)?;
    let n = config.window;
    if let Some(required) = estimator.block_size() {
        if required != n {
            return Err(SmoeError::invalid(format!(
                "estimator {} needs {required}x{required} blocks but the window is {n}x{n}",
                estimator.name()
            )));
        }
    }
    let region = image.crop(layout.origin.0, layout.origin.1, layout.width, layout.height)?;
    let mut acc = HypothesisAccumulator::new(layout.width, layout.height);
    let mut encode = 0.0;
    let mut decode = 0.0;

    let total = layout.window_count();
    let mut start = 0;
    while start < total {
        let end = (start + WINDOWS_PER_BATCH).min(total);
        let windows = (start..end)
            .map(|i| {
                let (x, y) = layout.window_origin(i);
                region.crop(x, y, n, n)
            })
            .collect::<Result<Vec<_>>>()?;

        let t = Instant::now();
        let models = estimator.estimate_batch(&windows);
        encode += t.elapsed().as_secs_f64();

        let t = Instant::now();
        let recon = models
            .into_par_iter()
            .enumerate()
            .map(|(j, m)| {
                let (x, y) = layout.window_origin(start + j);
                m.and_then(|m| resample(&m, n, n))
                    .map_err(|e| SmoeError::Window {
                        x: x + layout.origin.0,
                        y: y + layout.origin.1,
                        source: Box::new(e),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        for (j, r) in recon.iter().enumerate() {
            let (x, y) = layout.window_origin(start + j);
            acc.add(x, y, r);
        }
        decode += t.elapsed().as_secs_f64();
        start = end;
    }

    let t = Instant::now();
    let image = acc.finish();
    decode += t.elapsed().as_secs_f64();
    Ok(SweepOutput {
        image,
        layout,
        encode_seconds: encode,
        decode_seconds: decode,
    })
}
