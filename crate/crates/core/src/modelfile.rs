//! Text serialization of per-block models for a whole image.
//!
//! ```text
//! SMOEM1 <kind> <K> <block_size> <blocks_x> <blocks_y> [B]
//! <m> <mux> <muy> <a11> <a21> <a22>      (K lines per block, blocks in raster order)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Result, SmoeError};
use crate::grid::ImageGrid;
use crate::model::{BlockModel, KernelKind, SteeredKernel, Steering};
use crate::pipeline::BlockPartition;

pub const MODEL_MAGIC: &str = "SMOEM1";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub block_size: usize,
    pub blocks_x: usize,
    pub blocks_y: usize,
    models: Vec<BlockModel>,
}

impl ModelFile {
    /// Checks that all blocks share kind, kernel count and bandwidth and
    /// that there are `blocks_x * blocks_y` of them.
    pub fn new(
        models: Vec<BlockModel>,
        block_size: usize,
        blocks_x: usize,
        blocks_y: usize,
    ) -> Result<Self> {
        if block_size == 0 || blocks_x == 0 || blocks_y == 0 {
            return Err(SmoeError::invalid("model file dimensions must be positive"));
        }
        if models.len() != blocks_x * blocks_y {
            return Err(SmoeError::DimensionMismatch {
                expected: format!("{blocks_x}x{blocks_y} blocks"),
                actual: format!("{} models", models.len()),
            });
        }
        let first = &models[0];
        if let Some(i) = models.iter().position(|m| {
            m.kind() != first.kind() || m.len() != first.len() || m.bandwidth() != first.bandwidth()
        }) {
            return Err(SmoeError::invalid(format!(
                "block {i} differs in kind, kernel count or bandwidth from block 0"
            )));
        }
        Ok(Self {
            block_size,
            blocks_x,
            blocks_y,
            models,
        })
    }

    pub fn from_partition(models: Vec<BlockModel>, partition: &BlockPartition) -> Result<Self> {
        Self::new(
            models,
            partition.block_size,
            partition.blocks_x,
            partition.blocks_y,
        )
    }

    pub fn models(&self) -> &[BlockModel] {
        &self.models
    }

    pub fn into_models(self) -> Vec<BlockModel> {
        self.models
    }

    pub fn kind(&self) -> KernelKind {
        self.models[0].kind()
    }

    pub fn kernels(&self) -> usize {
        self.models[0].len()
    }

    pub fn native_width(&self) -> usize {
        self.block_size * self.blocks_x
    }

    pub fn native_height(&self) -> usize {
        self.block_size * self.blocks_y
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{MODEL_MAGIC} {} {} {} {} {}",
            self.kind(),
            self.kernels(),
            self.block_size,
            self.blocks_x,
            self.blocks_y
        );
        if self.kind() == KernelKind::Radial {
            write!(out, " {:.16e}", self.models[0].bandwidth()).unwrap();
        }
        out.push('\n');
        for k in self.models.iter().flat_map(|m| m.kernels()) {
            writeln!(
                out,
                "{:.16e} {:.16e} {:.16e} {:.16e} {:.16e} {:.16e}",
                k.expert, k.center[0], k.center[1], k.steering.a11, k.steering.a21, k.steering.a22
            )
            .unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let bad = |line: usize, reason: String| SmoeError::ModelFile { line, reason };

        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty model file".into()))?;
        let tokens: Vec<&str> = header.split_ascii_whitespace().collect();
        if tokens.first() != Some(&MODEL_MAGIC) {
            return Err(SmoeError::BadMagic {
                expected: MODEL_MAGIC,
                found: header.chars().take(16).collect(),
            });
        }
        let kind: KernelKind = tokens
            .get(1)
            .ok_or_else(|| bad(1, "missing kernel kind".into()))?
            .parse()
            .map_err(|_| bad(1, format!("unknown kernel kind {:?}", tokens[1])))?;
        let expected_len = if kind == KernelKind::Radial { 7 } else { 6 };
        if tokens.len() != expected_len {
            return Err(bad(
                1,
                format!("{kind} header needs {expected_len} fields, got {}", tokens.len()),
            ));
        }
        let count = |i: usize| -> Result<usize> {
            match tokens[i].parse::<usize>() {
                Ok(v) if v > 0 => Ok(v),
                _ => Err(bad(1, format!("bad count {:?}", tokens[i]))),
            }
        };
        let (k, block_size, blocks_x, blocks_y) = (count(2)?, count(3)?, count(4)?, count(5)?);
        let bandwidth = if kind == KernelKind::Radial {
            Some(
                tokens[6]
                    .parse::<f64>()
                    .map_err(|_| bad(1, format!("bad bandwidth {:?}", tokens[6])))?,
            )
        } else {
            None
        };

        let blocks = blocks_x * blocks_y;
        let mut models = Vec::with_capacity(blocks);
        let mut kernels = Vec::with_capacity(k);
        for (line, text) in lines.by_ref() {
            if models.len() == blocks {
                if text.trim().is_empty() {
                    continue;
                }
                return Err(bad(line, "more kernel lines than the header declares".into()));
            }
            let values = text
                .split_ascii_whitespace()
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad(line, format!("bad number in {text:?}")))?;
            if values.len() != 6 {
                return Err(bad(line, format!("expected 6 values, got {}", values.len())));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(bad(line, "non-finite parameter".into()));
            }
            kernels.push(SteeredKernel::new(
                [values[1], values[2]],
                Steering::new(values[3], values[4], values[5]),
                values[0],
            ));
            if kernels.len() == k {
                let list = std::mem::replace(&mut kernels, Vec::with_capacity(k));
                models.push(match bandwidth {
                    Some(b) => BlockModel::radial(list, b).map_err(|e| bad(1, e.to_string()))?,
                    None => BlockModel::steered(list)?,
                });
            }
        }
        if models.len() != blocks {
            return Err(bad(
                text.lines().count() + 1,
                format!(
                    "expected {} kernel lines, found {}",
                    blocks * k,
                    models.len() * k + kernels.len()
                ),
            ));
        }
        Self::new(models, block_size, blocks_x, blocks_y)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SmoeError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| SmoeError::io(path, e))
    }

    /// Renders the whole model grid at `width`x`height`.
    ///
    /// Each output pixel center is mapped into the continuous block grid and
    /// evaluated by the block it falls in. At the native size this matches
    /// per-block resampling bit for bit.
    pub fn resample(&self, width: usize, height: usize) -> Result<ImageGrid> {
        if width == 0 || height == 0 {
            return Err(SmoeError::invalid(format!(
                "resample size must be positive, got {width}x{height}"
            )));
        }
        let cols: Vec<(usize, f64)> = (0..width).map(|c| locate(c, width, self.blocks_x)).collect();
        let rows: Vec<(usize, f64)> = (0..height).map(|r| locate(r, height, self.blocks_y)).collect();
        let pixels: Vec<f64> = rows
            .par_iter()
            .flat_map_iter(|&(by, y)| {
                cols.iter()
                    .map(move |&(bx, x)| self.models[by * self.blocks_x + bx].evaluate([x, y]))
            })
            .collect();
        ImageGrid::new(width, height, pixels)
    }
}

/// Block index and block-local coordinate of the center of output pixel
/// `i` out of `len`, for `blocks` blocks along that axis.
///
/// With `t = (2i + 1) / (2 len)` in image units, the block is
/// `floor(t * blocks)` and the local coordinate its fractional part, both
/// computed on exact integers before a single rounding division.
fn locate(i: usize, len: usize, blocks: usize) -> (usize, f64) {
    let num = (2 * i + 1) * blocks;
    let den = 2 * len;
    let block = num / den;
    (block, (num - block * den) as f64 / den as f64)
}
