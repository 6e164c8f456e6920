use std::path::Path;

use rayon::prelude::*;

use crate::error::{Result, SmoeError};
use crate::grid::ImageGrid;
use crate::model::BlockModel;

use super::format::{ArchLine, SmwFile, Tensor};
use super::latent::LatentLayout;

pub const CONV_FILTERS: [usize; 7] = [16, 32, 64, 128, 256, 512, 1024];
pub const DENSE_OUTPUTS: [usize; 6] = [1024, 512, 256, 128, 64, 24];
pub const LATENT_DIM: usize = 24;
const KERNEL: usize = 3;
/// Blocks per forward call in [`EncoderNetwork::predict_batch`].
const BATCH: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// 3x3 convolution with "same" padding.
    Conv {
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        in_size: usize,
        out_size: usize,
        activation: Activation,
    },
    Dense {
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
    },
}

/// Shape of the encoder: block size, per-conv strides and latent layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderArch {
    pub block_size: usize,
    pub strides: [usize; 7],
    pub layout: LatentLayout,
}

impl EncoderArch {
    pub fn new(block_size: usize, strides: [usize; 7]) -> Result<Self> {
        if block_size < 2 {
            return Err(SmoeError::invalid(format!(
                "encoder block size must be at least 2, got {block_size}"
            )));
        }
        if strides.iter().any(|&s| s == 0 || s > KERNEL) {
            return Err(SmoeError::invalid(format!(
                "conv strides must lie in 1..={KERNEL}, got {strides:?}"
            )));
        }
        Ok(Self {
            block_size,
            strides,
            layout: LatentLayout::KernelContiguousSigmoid,
        })
    }

    /// Stride 2 on the leading convolutions until the map is 1x1, stride 1
    /// afterwards (four stride-2 layers for 16x16, three for 8x8).
    pub fn strided(block_size: usize) -> Result<Self> {
        let mut strides = [1; 7];
        let mut size = block_size;
        for s in strides.iter_mut() {
            if size <= 1 {
                break;
            }
            *s = 2;
            size = size.div_ceil(2);
        }
        Self::new(block_size, strides)
    }

    /// Stride 1 everywhere; the flatten layer then sees the full block.
    pub fn full_resolution(block_size: usize) -> Result<Self> {
        Self::new(block_size, [1; 7])
    }

    pub fn from_arch_line(line: &ArchLine) -> Result<Self> {
        let strides: [usize; 7] = line.strides.as_slice().try_into().map_err(|_| {
            SmoeError::MalformedHeader {
                line: 2,
                reason: format!("expected 7 conv strides, got {}", line.strides.len()),
            }
        })?;
        let layout = LatentLayout::from_tag(&line.layout).ok_or_else(|| SmoeError::MalformedHeader {
            line: 2,
            reason: format!("unknown latent layout {:?}", line.layout),
        })?;
        let mut arch = Self::new(line.block_size, strides)?;
        arch.layout = layout;
        Ok(arch)
    }

    pub fn arch_line(&self) -> ArchLine {
        ArchLine {
            block_size: self.block_size,
            strides: self.strides.to_vec(),
            layout: self.layout.tag().to_string(),
        }
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut layers = Vec::with_capacity(13);
        let mut size = self.block_size;
        let mut channels = 1;
        for (&out_channels, &stride) in CONV_FILTERS.iter().zip(&self.strides) {
            let out_size = size.div_ceil(stride);
            layers.push(LayerSpec::Conv {
                in_channels: channels,
                out_channels,
                stride,
                in_size: size,
                out_size,
                activation: Activation::Relu,
            });
            size = out_size;
            channels = out_channels;
        }
        let mut dim = size * size * channels;
        for (i, &out_dim) in DENSE_OUTPUTS.iter().enumerate() {
            let activation = if i + 1 == DENSE_OUTPUTS.len() {
                Activation::Linear
            } else {
                Activation::Relu
            };
            layers.push(LayerSpec::Dense {
                in_dim: dim,
                out_dim,
                activation,
            });
            dim = out_dim;
        }
        layers
    }

    /// Tensor names and shapes in file order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut shapes = Vec::with_capacity(26);
        let (mut conv, mut dense) = (0, 0);
        for layer in self.layers() {
            match layer {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    ..
                } => {
                    conv += 1;
                    shapes.push((
                        format!("conv{conv}.weight"),
                        vec![out_channels, in_channels, KERNEL, KERNEL],
                    ));
                    shapes.push((format!("conv{conv}.bias"), vec![out_channels]));
                }
                LayerSpec::Dense { in_dim, out_dim, .. } => {
                    dense += 1;
                    shapes.push((format!("dense{dense}.weight"), vec![out_dim, in_dim]));
                    shapes.push((format!("dense{dense}.bias"), vec![out_dim]));
                }
            }
        }
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.tensor_shapes()
            .iter()
            .map(|(_, d)| d.iter().product::<usize>())
            .sum()
    }
}

#[derive(Debug, Clone)]
struct ConvLayer {
    in_channels: usize,
    out_channels: usize,
    stride: usize,
    in_size: usize,
    out_size: usize,
    pad: usize,
    /// Kernel taps `(ky, kx)` that hit the input for at least one output.
    taps: Vec<(usize, usize)>,
    /// `[out, in * taps]`, column `c * taps + t`.
    packed: Vec<f32>,
    weight: Vec<f32>,
    bias: Vec<f32>,
}

impl ConvLayer {
    fn new(spec: LayerSpec, weight: Vec<f32>, bias: Vec<f32>) -> Self {
        let LayerSpec::Conv {
            in_channels,
            out_channels,
            stride,
            in_size,
            out_size,
            ..
        } = spec
        else {
            unreachable!("conv spec expected")
        };
        let pad_total = ((out_size - 1) * stride + KERNEL).saturating_sub(in_size);
        let pad = pad_total / 2;
        let hits = |k: usize| (0..out_size).any(|o| (o * stride + k).checked_sub(pad).is_some_and(|i| i < in_size));
        let taps: Vec<(usize, usize)> = (0..KERNEL)
            .flat_map(|ky| (0..KERNEL).map(move |kx| (ky, kx)))
            .filter(|&(ky, kx)| hits(ky) && hits(kx))
            .collect();
        let t = taps.len();
        let mut packed = vec![0.0; out_channels * in_channels * t];
        for o in 0..out_channels {
            for c in 0..in_channels {
                for (j, &(ky, kx)) in taps.iter().enumerate() {
                    packed[(o * in_channels + c) * t + j] =
                        weight[((o * in_channels + c) * KERNEL + ky) * KERNEL + kx];
                }
            }
        }
        Self {
            in_channels,
            out_channels,
            stride,
            in_size,
            out_size,
            pad,
            taps,
            packed,
            weight,
            bias,
        }
    }

    /// `input` is `[batch, in_size, in_size, in_channels]`; the result is
    /// `[batch, out_size, out_size, out_channels]` after ReLU.
    fn forward(&self, input: &[f32], batch: usize) -> Vec<f32> {
        let (h, c, ho) = (self.in_size, self.in_channels, self.out_size);
        let t = self.taps.len();
        let k = c * t;
        let rows = batch * ho * ho;
        let mut cols = vec![0.0f32; rows * k];
        for b in 0..batch {
            for oy in 0..ho {
                for ox in 0..ho {
                    let row = &mut cols[((b * ho + oy) * ho + ox) * k..][..k];
                    for (j, &(ky, kx)) in self.taps.iter().enumerate() {
                        let iy = (oy * self.stride + ky).wrapping_sub(self.pad);
                        let ix = (ox * self.stride + kx).wrapping_sub(self.pad);
                        if iy >= h || ix >= h {
                            continue;
                        }
                        let src = &input[((b * h + iy) * h + ix) * c..][..c];
                        for (ch, &v) in src.iter().enumerate() {
                            row[ch * t + j] = v;
                        }
                    }
                }
            }
        }
        let n = self.out_channels;
        let mut out = vec![0.0f32; rows * n];
        gemm(&cols, rows, k, &self.packed, n, &mut out);
        bias_activate(&mut out, &self.bias, true);
        out
    }
}

#[derive(Debug, Clone)]
struct DenseLayer {
    in_dim: usize,
    out_dim: usize,
    weight: Vec<f32>,
    bias: Vec<f32>,
    relu: bool,
}

impl DenseLayer {
    fn forward(&self, input: &[f32], batch: usize) -> Vec<f32> {
        let mut out = vec![0.0f32; batch * self.out_dim];
        gemm(input, batch, self.in_dim, &self.weight, self.out_dim, &mut out);
        bias_activate(&mut out, &self.bias, self.relu);
        out
    }
}

/// `out[m, n] = sum_k a[m, k] * w[n, k]`.
fn gemm(a: &[f32], m: usize, k: usize, w: &[f32], n: usize, out: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(w.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    // SAFETY: the slices cover exactly the m x k, k x n and m x n extents
    // described by the strides below.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            w.as_ptr(),
            1,
            k as isize,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn bias_activate(out: &mut [f32], bias: &[f32], relu: bool) {
    for row in out.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
            if relu && *v < 0.0 {
                *v = 0.0;
            }
        }
    }
}

/// A loaded encoder ready for inference.
#[derive(Debug, Clone)]
pub struct EncoderNetwork {
    arch: EncoderArch,
    convs: Vec<ConvLayer>,
    denses: Vec<DenseLayer>,
}

impl EncoderNetwork {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_smw(&SmwFile::read(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_smw(&SmwFile::parse(bytes)?)
    }

    /// Builds the network from a parsed weight file. Files without an
    /// `ARCH` line are read as the strided 16x16 encoder.
    pub fn from_smw(file: &SmwFile) -> Result<Self> {
        let arch = match &file.arch {
            Some(line) => EncoderArch::from_arch_line(line)?,
            None => EncoderArch::strided(16)?,
        };
        let shapes = arch.tensor_shapes();
        for t in &file.tensors {
            if !shapes.iter().any(|(name, _)| *name == t.name) {
                return Err(SmoeError::UnexpectedTensor(t.name.clone()));
            }
        }
        let take = |name: &str, dims: &[usize]| -> Result<Vec<f32>> {
            let t = file
                .tensor(name)
                .ok_or_else(|| SmoeError::MissingTensor(name.to_string()))?;
            if t.dims != dims {
                return Err(SmoeError::ShapeMismatch {
                    name: name.to_string(),
                    expected: dims.to_vec(),
                    found: t.dims.clone(),
                });
            }
            if let Some(index) = t.data.iter().position(|v| !v.is_finite()) {
                return Err(SmoeError::NonFinite {
                    name: name.to_string(),
                    index,
                });
            }
            Ok(t.data.clone())
        };

        let mut convs = Vec::new();
        let mut denses = Vec::new();
        let mut shape_iter = shapes.chunks_exact(2);
        for spec in arch.layers() {
            let pair = shape_iter.next().expect("two tensors per layer");
            let weight = take(&pair[0].0, &pair[0].1)?;
            let bias = take(&pair[1].0, &pair[1].1)?;
            match spec {
                LayerSpec::Conv { .. } => convs.push(ConvLayer::new(spec, weight, bias)),
                LayerSpec::Dense {
                    in_dim,
                    out_dim,
                    activation,
                } => denses.push(DenseLayer {
                    in_dim,
                    out_dim,
                    weight,
                    bias,
                    relu: activation == Activation::Relu,
                }),
            }
        }
        Ok(Self {
            arch,
            convs,
            denses,
        })
    }

    pub fn to_smw(&self) -> SmwFile {
        let mut tensors = Vec::with_capacity(26);
        let shapes = self.arch.tensor_shapes();
        let data = self
            .convs
            .iter()
            .flat_map(|c| [&c.weight, &c.bias])
            .chain(self.denses.iter().flat_map(|d| [&d.weight, &d.bias]));
        for ((name, dims), values) in shapes.into_iter().zip(data) {
            tensors.push(Tensor {
                name,
                dims,
                data: values.clone(),
            });
        }
        SmwFile {
            arch: Some(self.arch.arch_line()),
            tensors,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_smw().write(path)
    }

    pub fn arch(&self) -> &EncoderArch {
        &self.arch
    }

    pub fn block_size(&self) -> usize {
        self.arch.block_size
    }

    /// Runs `batch` blocks stored back to back as row-major `N x N` f32.
    pub fn forward_batch(&self, inputs: &[f32], batch: usize) -> Result<Vec<[f32; LATENT_DIM]>> {
        let n = self.block_size();
        if inputs.len() != batch * n * n {
            return Err(SmoeError::DimensionMismatch {
                expected: format!("{batch} blocks of {n}x{n}"),
                actual: format!("{} values", inputs.len()),
            });
        }
        if batch == 0 {
            return Ok(Vec::new());
        }
        let mut act = inputs.to_vec();
        for conv in &self.convs {
            act = conv.forward(&act, batch);
        }
        let last = self.convs.last().expect("seven convolutions");
        let (hw, c) = (last.out_size * last.out_size, last.out_channels);
        if hw > 1 {
            // Flatten in channel-major order.
            let mut flat = vec![0.0f32; act.len()];
            for b in 0..batch {
                for p in 0..hw {
                    for ch in 0..c {
                        flat[b * hw * c + ch * hw + p] = act[(b * hw + p) * c + ch];
                    }
                }
            }
            act = flat;
        }
        for dense in &self.denses {
            act = dense.forward(&act, batch);
        }
        Ok(act
            .chunks_exact(LATENT_DIM)
            .map(|c| c.try_into().expect("latent width"))
            .collect())
    }

    pub fn forward(&self, block: &ImageGrid) -> Result<[f32; LATENT_DIM]> {
        let input = self.block_input(block)?;
        Ok(self.forward_batch(&input, 1)?[0])
    }

    pub fn predict_model(&self, block: &ImageGrid) -> Result<BlockModel> {
        self.arch.layout.decode(&self.forward(block)?)
    }

    pub fn predict_batch(&self, blocks: &[ImageGrid]) -> Result<Vec<BlockModel>> {
        let chunks: Vec<Result<Vec<BlockModel>>> = blocks
            .par_chunks(BATCH)
            .map(|chunk| {
                let mut input = Vec::with_capacity(chunk.len() * self.block_size().pow(2));
                for block in chunk {
                    input.extend(self.block_input(block)?);
                }
                self.forward_batch(&input, chunk.len())?
                    .iter()
                    .map(|z| self.arch.layout.decode(z))
                    .collect()
            })
            .collect();
        let mut models = Vec::with_capacity(blocks.len());
        for chunk in chunks {
            models.extend(chunk?);
        }
        Ok(models)
    }

    fn block_input(&self, block: &ImageGrid) -> Result<Vec<f32>> {
        let n = self.block_size();
        if block.width() != n || block.height() != n {
            return Err(SmoeError::DimensionMismatch {
                expected: format!("{n}x{n} block"),
                actual: format!("{}x{}", block.width(), block.height()),
            });
        }
        Ok(block.pixels().iter().map(|&v| v as f32).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strided_schedules() {
        assert_eq!(EncoderArch::strided(16).unwrap().strides, [2, 2, 2, 2, 1, 1, 1]);
        assert_eq!(EncoderArch::strided(8).unwrap().strides, [2, 2, 2, 1, 1, 1, 1]);
        assert!(EncoderArch::new(1, [1; 7]).is_err());
        assert!(EncoderArch::new(8, [0, 1, 1, 1, 1, 1, 1]).is_err());
    }

    #[test]
    fn layer_shapes() {
        let arch = EncoderArch::strided(16).unwrap();
        let layers = arch.layers();
        assert_eq!(layers.len(), 13);
        assert_eq!(
            layers[3],
            LayerSpec::Conv {
                in_channels: 64,
                out_channels: 128,
                stride: 2,
                in_size: 2,
                out_size: 1,
                activation: Activation::Relu
            }
        );
        assert_eq!(
            layers[7],
            LayerSpec::Dense {
                in_dim: 1024,
                out_dim: 1024,
                activation: Activation::Relu
            }
        );
        assert_eq!(
            layers[12],
            LayerSpec::Dense {
                in_dim: 64,
                out_dim: 24,
                activation: Activation::Linear
            }
        );
        let names: Vec<_> = arch.tensor_shapes().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "conv1.weight");
        assert_eq!(names[13], "conv7.bias");
        assert_eq!(names[25], "dense6.bias");
    }

    #[test]
    fn padding_and_taps() {
        let spec = |stride, in_size: usize| LayerSpec::Conv {
            in_channels: 1,
            out_channels: 1,
            stride,
            in_size,
            out_size: in_size.div_ceil(stride),
            activation: Activation::Relu,
        };
        let conv = ConvLayer::new(spec(2, 16), vec![0.0; 9], vec![0.0]);
        assert_eq!((conv.out_size, conv.pad, conv.taps.len()), (8, 0, 9));
        let conv = ConvLayer::new(spec(1, 8), vec![0.0; 9], vec![0.0]);
        assert_eq!((conv.pad, conv.taps.len()), (1, 9));
        let conv = ConvLayer::new(spec(1, 1), vec![0.0; 9], vec![0.0]);
        assert_eq!((conv.pad, conv.taps.clone()), (1, vec![(1, 1)]));
        let conv = ConvLayer::new(spec(2, 2), vec![0.0; 9], vec![0.0]);
        assert_eq!((conv.out_size, conv.pad), (1, 0));
        assert_eq!(conv.taps, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    }

    fn constant_network(arch: EncoderArch, value: f32) -> EncoderNetwork {
        let tensors = arch
            .tensor_shapes()
            .into_iter()
            .map(|(name, dims)| {
                let n = dims.iter().product();
                let v = if name.ends_with("bias") { 0.0 } else { value };
                Tensor::new(name, dims, vec![v; n]).unwrap()
            })
            .collect();
        EncoderNetwork::from_smw(&SmwFile {
            arch: Some(arch.arch_line()),
            tensors,
        })
        .unwrap()
    }

    #[test]
    fn zero_weights_give_neutral_model() {
        let net = constant_network(EncoderArch::strided(8).unwrap(), 0.0);
        let z = net.forward(&ImageGrid::filled(8, 8, 0.7)).unwrap();
        assert_eq!(z, [0.0; 24]);
        let model = net.predict_model(&ImageGrid::filled(8, 8, 0.7)).unwrap();
        assert_eq!(model.kernels()[2].expert, 0.5);
    }

    #[test]
    fn batch_matches_single() {
        let arch = EncoderArch::strided(8).unwrap();
        let mut file = constant_network(arch, 0.0).to_smw();
        let mut state = 1u32;
        for t in &mut file.tensors {
            let fan_in = t.data.len() / t.dims[0];
            let scale = (3.0 / fan_in as f32).sqrt();
            for v in &mut t.data {
                state = state.wrapping_mul(1664525).wrapping_add(1013904223);
                *v = ((state >> 8) as f32 / (1u32 << 24) as f32 * 2.0 - 1.0) * scale;
            }
        }
        let net = EncoderNetwork::from_smw(&file).unwrap();
        let blocks: Vec<_> = (0..5)
            .map(|i| ImageGrid::from_fn(8, 8, |r, c| ((r * 3 + c * (i + 1)) % 7) as f64 / 7.0))
            .collect();
        let batch = net.predict_batch(&blocks).unwrap();
        for (block, model) in blocks.iter().zip(&batch) {
            assert_eq!(net.predict_model(block).unwrap(), *model);
        }
        assert_eq!(net.to_smw(), file);
    }

    #[test]
    fn load_errors() {
        let arch = EncoderArch::strided(8).unwrap();
        let good = constant_network(arch, 0.1).to_smw();

        let mut missing = good.clone();
        missing.tensors.remove(4);
        assert!(matches!(
            EncoderNetwork::from_smw(&missing),
            Err(SmoeError::MissingTensor(name)) if name == "conv3.weight"
        ));

        let mut wrong = good.clone();
        wrong.tensors[14].dims = vec![512, 2048];
        assert!(matches!(
            EncoderNetwork::from_smw(&wrong),
            Err(SmoeError::ShapeMismatch { name, .. }) if name == "dense1.weight"
        ));

        let mut nan = good.clone();
        nan.tensors[1].data[3] = f32::NAN;
        assert!(matches!(
            EncoderNetwork::from_smw(&nan),
            Err(SmoeError::NonFinite { index: 3, .. })
        ));

        let mut extra = good.clone();
        extra.tensors.push(Tensor::new("dense7.bias", vec![1], vec![0.0]).unwrap());
        assert!(matches!(
            EncoderNetwork::from_smw(&extra),
            Err(SmoeError::UnexpectedTensor(_))
        ));

        let net = EncoderNetwork::from_smw(&good).unwrap();
        assert!(net.forward(&ImageGrid::filled(16, 16, 0.0)).is_err());
    }
}
