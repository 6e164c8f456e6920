//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smoe::encoder::{EncoderArch, SmwFile, Tensor};
use smoe::pipeline::ingest;
use smoe::{BlockModel, ImageGrid, SteeredKernel, Steering};

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("data")
}

pub fn assets_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("assets")
}

/// Test images in the order used by the suites. `SMOE_TEST_IMAGES` may
/// point at a directory holding other 512x512 images; every PNG/PGM file
/// there is used, sorted by name.
pub fn test_images() -> Vec<(String, PathBuf)> {
    if let Ok(dir) = std::env::var("SMOE_TEST_IMAGES") {
        let mut found: Vec<_> = std::fs::read_dir(&dir)
            .unwrap_or_else(|e| panic!("SMOE_TEST_IMAGES={dir}: {e}"))
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                    Some("png" | "pgm")
                )
            })
            .map(|p| (p.file_stem().unwrap().to_string_lossy().to_lowercase(), p))
            .collect();
        found.sort();
        return found;
    }
    [
        "cameraman", "astronaut", "coffee", "chelsea", "hopper", "moon", "gravel", "brick",
    ]
    .iter()
    .map(|n| (n.to_string(), data_dir().join(format!("{n}.png"))))
    .collect()
}

/// Finds a test image by name, falling back to `fallback` when the
/// configured set lacks it.
pub fn named_image(name: &str, fallback: &str) -> (String, ImageGrid) {
    let images = test_images();
    let (n, path) = images
        .iter()
        .find(|(n, _)| n == name)
        .or_else(|| images.iter().find(|(n, _)| n == fallback))
        .unwrap_or_else(|| panic!("neither {name} nor {fallback} is available"));
    (n.clone(), ingest(path).unwrap())
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add((index + 1).wrapping_mul(GOLDEN));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic He-uniform weights; the same generator lives in
/// `tests/assets/make_encoder_fixtures.py`.
pub fn random_weights(arch: &EncoderArch, seed: u64) -> SmwFile {
    let mut index = 0u64;
    let tensors = arch
        .tensor_shapes()
        .into_iter()
        .map(|(name, dims)| {
            let n: usize = dims.iter().product();
            let scale = if name.ends_with("weight") {
                (6.0 / (n / dims[0]) as f64).sqrt() as f32
            } else {
                0.1f32
            };
            let data = (0..n)
                .map(|_| {
                    let top = splitmix(seed, index) >> 40;
                    index += 1;
                    let u = (top as f64 * 2f64.powi(-23) - 1.0) as f32;
                    u * scale
                })
                .collect();
            Tensor::new(name, dims, data).unwrap()
        })
        .collect();
    SmwFile {
        arch: Some(arch.arch_line()),
        tensors,
    }
}

pub struct FixtureSet {
    pub tag: String,
    pub arch: EncoderArch,
    pub seed: u64,
    pub weights_sha256: String,
    pub inputs: Vec<f32>,
    pub outputs: Vec<f32>,
    pub count: usize,
}

pub fn fixture_sets() -> Vec<FixtureSet> {
    let manifest = std::fs::read_to_string(assets_dir().join("encoder_fixtures.txt")).unwrap();
    manifest
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split_whitespace().collect();
            let block: usize = f[1].parse().unwrap();
            let strides: Vec<usize> = f[2].split(',').map(|s| s.parse().unwrap()).collect();
            let arch = EncoderArch::new(block, strides.try_into().unwrap()).unwrap();
            let file =
                SmwFile::read(assets_dir().join(format!("encoder_{}.fixture.smw", f[0]))).unwrap();
            let inputs = file.tensor("inputs").expect("inputs tensor");
            let outputs = file.tensor("outputs").expect("outputs tensor");
            assert_eq!(inputs.dims[1..], [block, block]);
            assert_eq!(outputs.dims, [inputs.dims[0], 24]);
            FixtureSet {
                tag: f[0].to_string(),
                arch,
                seed: f[3].parse().unwrap(),
                weights_sha256: f[4].to_string(),
                count: inputs.dims[0],
                inputs: inputs.data.clone(),
                outputs: outputs.data.clone(),
            }
        })
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::Digest;
    sha2::Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_kernel(rng: &mut ChaCha8Rng) -> SteeredKernel {
    SteeredKernel::new(
        [rng.random::<f64>(), rng.random::<f64>()],
        Steering::new(
            rng.random_range(1.0..15.0),
            rng.random_range(-8.0..8.0),
            rng.random_range(1.0..15.0),
        ),
        rng.random::<f64>(),
    )
}

pub fn random_steered(rng: &mut ChaCha8Rng, kernels: usize) -> BlockModel {
    BlockModel::steered((0..kernels).map(|_| random_kernel(rng)).collect()).unwrap()
}

pub fn random_block(rng: &mut ChaCha8Rng, n: usize) -> ImageGrid {
    ImageGrid::from_fn(n, n, |_, _| rng.random::<f64>())
}

/// Reference mixture output: precision matrix form of the gate exponent
/// and an unshifted softmax.
pub fn reference_output(params: &[[f64; 6]], x: [f64; 2]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for &[m, mx, my, a11, a21, a22] in params {
        let (dx, dy) = (x[0] - mx, x[1] - my);
        let q = a11 * a11 * dx * dx + 2.0 * a11 * a21 * dx * dy + (a21 * a21 + a22 * a22) * dy * dy;
        let e = (-0.5 * q).exp();
        num += m * e;
        den += e;
    }
    num / den
}

/// Mean squared error of [`reference_output`] over the pixel centers.
pub fn reference_loss(params: &[[f64; 6]], block: &ImageGrid) -> f64 {
    let (w, h) = (block.width(), block.height());
    let mut sum = 0.0;
    for r in 0..h {
        for c in 0..w {
            let x = [(c as f64 + 0.5) / w as f64, (r as f64 + 0.5) / h as f64];
            let d = reference_output(params, x) - block.get(r, c);
            sum += d * d;
        }
    }
    sum / (w * h) as f64
}

pub fn params_of(model: &BlockModel) -> Vec<[f64; 6]> {
    model
        .kernels()
        .iter()
        .map(|k| [k.expert, k.center[0], k.center[1], k.steering.a11, k.steering.a21, k.steering.a22])
        .collect()
}

/// Pairs of (analytic partial, central difference of the reference loss
/// with step `h`) for every parameter of `model`.
pub fn gradient_check(model: &BlockModel, block: &ImageGrid, h: f64) -> Vec<(f64, f64)> {
    let analytic = smoe::optim::gradient(model, block);
    let base = params_of(model);
    let mut out = Vec::new();
    for (i, g) in analytic.kernels.iter().enumerate() {
        let a = [g.expert, g.center[0], g.center[1], g.a11, g.a21, g.a22];
        for j in 0..6 {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[i][j] += h;
            minus[i][j] -= h;
            let fd = (reference_loss(&plus, block) - reference_loss(&minus, block)) / (2.0 * h);
            out.push((a[j], fd));
        }
    }
    out
}

pub fn partial_ok(analytic: f64, fd: f64, rel: f64, abs: f64) -> bool {
    let diff = (analytic - fd).abs();
    diff <= abs || diff <= rel * analytic.abs().max(fd.abs())
}
