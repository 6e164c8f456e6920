//! Image ingestion, block partitioning, noise and quality metrics.

mod blocks;
mod io;
mod metrics;
mod noise;

pub use blocks::{partition, reassemble, BlockPartition};
pub use io::{encode_png, ingest, ingest_bytes, save_png, to_gray8};
pub use metrics::{format_psnr, mse, psnr, ssim, SSIM_WINDOW};
pub use noise::{add_speckle, NoiseSpec};
