use crate::error::{Result, SmoeError};

/// Grayscale raster with row-major samples, nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(SmoeError::invalid(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(SmoeError::DimensionMismatch {
                expected: format!("{} samples", width * height),
                actual: format!("{} samples", pixels.len()),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut pixels = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                pixels.push(f(row, col));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.pixels[row * self.width + col] = value;
    }

    pub fn same_dims(&self, other: &ImageGrid) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Copies the `width`x`height` region whose top-left pixel is (`top`, `left`).
    pub fn crop(&self, left: usize, top: usize, width: usize, height: usize) -> Result<ImageGrid> {
        if width == 0 || height == 0 || left + width > self.width || top + height > self.height {
            return Err(SmoeError::invalid(format!(
                "crop {width}x{height}+{left}+{top} exceeds {}x{} image",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(width * height);
        for row in top..top + height {
            let start = row * self.width + left;
            pixels.extend_from_slice(&self.pixels[start..start + width]);
        }
        Ok(ImageGrid {
            width,
            height,
            pixels,
        })
    }

    /// Center crop to `width`x`height`; odd margins leave the extra pixel on
    /// the right/bottom.
    pub fn center_crop(&self, width: usize, height: usize) -> Result<ImageGrid> {
        if width > self.width || height > self.height {
            return Err(SmoeError::invalid(format!(
                "center crop {width}x{height} exceeds {}x{} image",
                self.width, self.height
            )));
        }
        self.crop(
            (self.width - width) / 2,
            (self.height - height) / 2,
            width,
            height,
        )
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageGrid {
        ImageGrid {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }
}

/// Block-normalized coordinate of the center of pixel (`row`, `col`) in an
/// `width`x`height` lattice over `[0, 1]^2`: `((col + 0.5) / width, (row + 0.5) / height)`.
#[inline]
pub fn pixel_center(row: usize, col: usize, width: usize, height: usize) -> [f64; 2] {
    [
        (col as f64 + 0.5) / width as f64,
        (row as f64 + 0.5) / height as f64,
    ]
}

/// All pixel-center coordinates of a `width`x`height` lattice in row-major order.
pub fn pixel_lattice(width: usize, height: usize) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(width * height);
    for row in 0..height {
        for col in 0..width {
            out.push(pixel_center(row, col, width, height));
        }
    }
    out
}
