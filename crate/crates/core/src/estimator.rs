//! Block estimators and the name-based registry used to pick one at runtime.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::encoder::EncoderNetwork;
use crate::error::{Result, SmoeError};
use crate::grid::ImageGrid;
use crate::model::{resample, BlockModel, KernelKind, DEFAULT_KERNELS};
use crate::optim::{fit_block, OptimizerConfig};
use crate::pipeline::{partition, reassemble, BlockPartition};

/// Produces a block model for an image block.
pub trait BlockEstimator: Send + Sync {
    fn name(&self) -> &str;

    /// Block size the estimator is restricted to, if any.
    fn block_size(&self) -> Option<usize> {
        None
    }

    fn estimate(&self, block: &ImageGrid) -> Result<BlockModel>;

    /// Estimates many blocks; results are in input order.
    fn estimate_batch(&self, blocks: &[ImageGrid]) -> Vec<Result<BlockModel>> {
        blocks.par_iter().map(|b| self.estimate(b)).collect()
    }
}

/// Per-block gradient descent.
#[derive(Debug, Clone)]
pub struct GdEstimator {
    name: String,
    pub kind: KernelKind,
    pub kernels: usize,
    pub config: OptimizerConfig,
}

impl GdEstimator {
    pub fn new(kind: KernelKind, kernels: usize, config: OptimizerConfig) -> Self {
        Self {
            name: format!("gd-{kind}"),
            kind,
            kernels,
            config,
        }
    }
}

impl BlockEstimator for GdEstimator {
    fn name(&self) -> &str {
        &self.name
    }

    fn estimate(&self, block: &ImageGrid) -> Result<BlockModel> {
        fit_block(block, self.kind, self.kernels, &self.config).map(|f| f.model)
    }
}

/// Forward inference of a trained encoder.
#[derive(Debug, Clone)]
pub struct EncoderEstimator {
    network: Arc<EncoderNetwork>,
}

impl EncoderEstimator {
    pub fn new(network: Arc<EncoderNetwork>) -> Self {
        Self { network }
    }

    pub fn network(&self) -> &EncoderNetwork {
        &self.network
    }
}

impl BlockEstimator for EncoderEstimator {
    fn name(&self) -> &str {
        "encoder"
    }

    fn block_size(&self) -> Option<usize> {
        Some(self.network.block_size())
    }

    fn estimate(&self, block: &ImageGrid) -> Result<BlockModel> {
        self.network.predict_model(block)
    }

    fn estimate_batch(&self, blocks: &[ImageGrid]) -> Vec<Result<BlockModel>> {
        match self.network.predict_batch(blocks) {
            Ok(models) => models.into_iter().map(Ok).collect(),
            // Fall back to per-block calls so each failure is attributed.
            Err(_) => blocks.iter().map(|b| self.estimate(b)).collect(),
        }
    }
}

/// Settings shared by every estimator factory.
#[derive(Debug, Clone)]
pub struct EstimatorOptions {
    pub kernels: usize,
    pub optimizer: OptimizerConfig,
    /// Weight file for encoder-backed estimators.
    pub weights: Option<PathBuf>,
    /// Already-loaded network; takes precedence over `weights`.
    pub network: Option<Arc<EncoderNetwork>>,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            kernels: DEFAULT_KERNELS,
            optimizer: OptimizerConfig::default(),
            weights: None,
            network: None,
        }
    }
}

pub type EstimatorFactory =
    Box<dyn Fn(&EstimatorOptions) -> Result<Box<dyn BlockEstimator>> + Send + Sync>;

/// Maps estimator names to factories.
pub struct EstimatorRegistry {
    factories: BTreeMap<String, EstimatorFactory>,
}

impl EstimatorRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// Registry holding `gd-steered`, `gd-radial`, `gd` (alias of
    /// `gd-steered`) and `encoder`.
    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        for (name, kind) in [
            ("gd", KernelKind::Steered),
            ("gd-steered", KernelKind::Steered),
            ("gd-radial", KernelKind::Radial),
        ] {
            reg.register(name, move |opts: &EstimatorOptions| {
                opts.optimizer.validate()?;
                if opts.kernels < 1 {
                    return Err(SmoeError::invalid("at least one kernel is required"));
                }
                Ok(Box::new(GdEstimator::new(kind, opts.kernels, opts.optimizer.clone()))
                    as Box<dyn BlockEstimator>)
            });
        }
        reg.register("encoder", |opts: &EstimatorOptions| {
            let network = match (&opts.network, &opts.weights) {
                (Some(net), _) => Arc::clone(net),
                (None, Some(path)) => Arc::new(EncoderNetwork::load(path)?),
                (None, None) => {
                    return Err(SmoeError::invalid("the encoder estimator needs a weight file"))
                }
            };
            Ok(Box::new(EncoderEstimator::new(network)) as Box<dyn BlockEstimator>)
        });
        reg
    }

    pub fn register<F>(&mut self, name: impl Into<String>, factory: F)
    where
        F: Fn(&EstimatorOptions) -> Result<Box<dyn BlockEstimator>> + Send + Sync + 'static,
    {
        self.factories.insert(name.into(), Box::new(factory));
    }

    pub fn create(&self, name: &str, options: &EstimatorOptions) -> Result<Box<dyn BlockEstimator>> {
        let factory = self
            .factories
            .get(name)
            .ok_or_else(|| SmoeError::UnknownEstimator(name.to_string()))?;
        factory(options)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }
}

impl Default for EstimatorRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

/// Estimates each block and returns the models in input order.
pub fn estimate_blocks(
    estimator: &dyn BlockEstimator,
    blocks: &[ImageGrid],
) -> Result<Vec<BlockModel>> {
    estimator.estimate_batch(blocks).into_iter().collect()
}

/// Block models for a whole image plus its reconstruction.
#[derive(Debug, Clone)]
pub struct ImageEstimate {
    pub models: Vec<BlockModel>,
    pub partition: BlockPartition,
    pub reconstruction: ImageGrid,
    pub encode_seconds: f64,
    pub decode_seconds: f64,
}

/// Center-crops `image` to whole blocks, estimates every block and
/// reassembles the reconstruction.
pub fn estimate_image(
    estimator: &dyn BlockEstimator,
    image: &ImageGrid,
    block_size: usize,
) -> Result<ImageEstimate> {
    if let Some(required) = estimator.block_size() {
        if required != block_size {
            return Err(SmoeError::invalid(format!(
                "estimator {} works on {required}x{required} blocks, not {block_size}x{block_size}",
                estimator.name()
            )));
        }
    }
    let (blocks, partition) = partition(image, block_size)?;
    let start = Instant::now();
    let models = estimate_blocks(estimator, &blocks)?;
    let encode_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let recon = models
        .par_iter()
        .map(|m| resample(m, block_size, block_size))
        .collect::<Result<Vec<_>>>()?;
    let reconstruction = reassemble(&recon, &partition)?;
    let decode_seconds = start.elapsed().as_secs_f64();
    Ok(ImageEstimate {
        models,
        partition,
        reconstruction,
        encode_seconds,
        decode_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_resolve() {
        let reg = EstimatorRegistry::with_builtins();
        let names: Vec<_> = reg.names().collect();
        assert_eq!(names, vec!["encoder", "gd", "gd-radial", "gd-steered"]);
        let opts = EstimatorOptions {
            optimizer: OptimizerConfig::default().with_iterations(20),
            ..Default::default()
        };
        let est = reg.create("gd-radial", &opts).unwrap();
        assert_eq!(est.name(), "gd-radial");
        let model = est.estimate(&ImageGrid::filled(8, 8, 0.3)).unwrap();
        assert_eq!(model.kind(), KernelKind::Radial);
        assert_eq!(reg.create("gd", &opts).unwrap().name(), "gd-steered");
    }

    #[test]
    fn unknown_and_misconfigured() {
        let reg = EstimatorRegistry::with_builtins();
        assert!(matches!(
            reg.create("em", &EstimatorOptions::default()),
            Err(SmoeError::UnknownEstimator(_))
        ));
        assert!(reg.create("encoder", &EstimatorOptions::default()).is_err());
        let bad = EstimatorOptions {
            kernels: 0,
            ..Default::default()
        };
        assert!(reg.create("gd", &bad).is_err());
    }

    #[test]
    fn custom_registration() {
        struct Flat;
        impl BlockEstimator for Flat {
            fn name(&self) -> &str {
                "flat"
            }
            fn estimate(&self, block: &ImageGrid) -> Result<BlockModel> {
                BlockModel::steered(vec![crate::model::SteeredKernel::new(
                    [0.5, 0.5],
                    crate::model::Steering::isotropic(0.0),
                    block.mean(),
                )])
            }
        }
        let mut reg = EstimatorRegistry::empty();
        reg.register("flat", |_: &EstimatorOptions| Ok(Box::new(Flat) as Box<dyn BlockEstimator>));
        let est = reg.create("flat", &EstimatorOptions::default()).unwrap();
        let blocks = vec![ImageGrid::filled(4, 4, 0.25), ImageGrid::filled(4, 4, 0.5)];
        let models = estimate_blocks(est.as_ref(), &blocks).unwrap();
        assert_eq!(models[1].kernels()[0].expert, 0.5);

        let image = ImageGrid::from_fn(10, 9, |r, c| ((r / 4) * 2 + c.saturating_sub(1) / 4) as f64 / 8.0);
        let est = estimate_image(est.as_ref(), &image, 4).unwrap();
        assert_eq!(est.models.len(), 4);
        assert_eq!(est.reconstruction, image.crop(1, 0, 8, 8).unwrap());
    }
}
