use std::path::Path;

use image::{DynamicImage, ImageFormat};

use crate::error::{Result, SmoeError};
use crate::grid::ImageGrid;

const LUMA_R: f64 = 0.299;
const LUMA_G: f64 = 0.587;
const LUMA_B: f64 = 0.114;

/// Reads a PNG or PNM raster and converts it to normalized BT.601 luma.
pub fn ingest(path: impl AsRef<Path>) -> Result<ImageGrid> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| SmoeError::io(path, e))?;
    ingest_bytes(&bytes)
}

pub fn ingest_bytes(bytes: &[u8]) -> Result<ImageGrid> {
    let format = image::guess_format(bytes)
        .map_err(|_| SmoeError::UnsupportedFormat("unrecognized file signature".into()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Pnm) {
        return Err(SmoeError::UnsupportedFormat(format!("{format:?}")));
    }
    let decoded = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| SmoeError::CorruptImage(e.to_string()))?;
    to_grid(&decoded)
}

fn luma(r: f64, g: f64, b: f64) -> f64 {
    if r == g && g == b {
        r
    } else {
        LUMA_R * r + LUMA_G * g + LUMA_B * b
    }
}

fn to_grid(img: &DynamicImage) -> Result<ImageGrid> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    const S8: f64 = 255.0;
    const S16: f64 = 65535.0;
    let pixels: Vec<f64> = match img {
        DynamicImage::ImageLuma8(b) => b.pixels().map(|p| p.0[0] as f64 / S8).collect(),
        DynamicImage::ImageLumaA8(b) => b.pixels().map(|p| p.0[0] as f64 / S8).collect(),
        DynamicImage::ImageLuma16(b) => b.pixels().map(|p| p.0[0] as f64 / S16).collect(),
        DynamicImage::ImageLumaA16(b) => b.pixels().map(|p| p.0[0] as f64 / S16).collect(),
        DynamicImage::ImageRgb8(b) => b
            .pixels()
            .map(|p| luma(p.0[0] as f64, p.0[1] as f64, p.0[2] as f64) / S8)
            .collect(),
        DynamicImage::ImageRgba8(b) => b
            .pixels()
            .map(|p| luma(p.0[0] as f64, p.0[1] as f64, p.0[2] as f64) / S8)
            .collect(),
        DynamicImage::ImageRgb16(b) => b
            .pixels()
            .map(|p| luma(p.0[0] as f64, p.0[1] as f64, p.0[2] as f64) / S16)
            .collect(),
        DynamicImage::ImageRgba16(b) => b
            .pixels()
            .map(|p| luma(p.0[0] as f64, p.0[1] as f64, p.0[2] as f64) / S16)
            .collect(),
        other => {
            return Err(SmoeError::UnsupportedFormat(format!(
                "sample type {:?}",
                other.color()
            )))
        }
    };
    ImageGrid::new(w, h, pixels)
}

/// Quantizes to 8 bits as `round(clamp(x, 0, 1) * 255)`.
pub fn to_gray8(image: &ImageGrid) -> Vec<u8> {
    image
        .pixels()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

pub fn encode_png(image: &ImageGrid) -> Result<Vec<u8>> {
    let buf = image::GrayImage::from_raw(
        image.width() as u32,
        image.height() as u32,
        to_gray8(image),
    )
    .expect("buffer length matches dimensions");
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| SmoeError::invalid(format!("PNG encoding failed: {e}")))?;
    Ok(out.into_inner())
}

pub fn save_png(image: &ImageGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(image)?;
    std::fs::write(path, bytes).map_err(|e| SmoeError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{ImageBuffer, Luma, Rgb};

    fn png_bytes(img: DynamicImage) -> Vec<u8> {
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png).unwrap();
        out.into_inner()
    }

    #[test]
    fn white_is_one() {
        let img = ImageBuffer::from_pixel(2, 2, Rgb([255u8, 255, 255]));
        let grid = ingest_bytes(&png_bytes(DynamicImage::ImageRgb8(img))).unwrap();
        assert_eq!(grid.pixels(), &[1.0; 4]);
    }

    #[test]
    fn eight_bit_normalization() {
        let img = ImageBuffer::from_pixel(3, 1, Luma([128u8]));
        let grid = ingest_bytes(&png_bytes(DynamicImage::ImageLuma8(img))).unwrap();
        assert_eq!(grid.get(0, 0), 128.0 / 255.0);
    }

    #[test]
    fn sixteen_bit_normalization() {
        let img = ImageBuffer::from_pixel(1, 1, Luma([32768u16]));
        let grid = ingest_bytes(&png_bytes(DynamicImage::ImageLuma16(img))).unwrap();
        assert_eq!(grid.get(0, 0), 32768.0 / 65535.0);
    }

    #[test]
    fn gray_rgb_is_unchanged_and_color_uses_bt601() {
        let mut img = ImageBuffer::from_pixel(2, 1, Rgb([77u8, 77, 77]));
        img.put_pixel(1, 0, Rgb([200, 100, 50]));
        let grid = ingest_bytes(&png_bytes(DynamicImage::ImageRgb8(img))).unwrap();
        assert_eq!(grid.get(0, 0), 77.0 / 255.0);
        let expect = (0.299 * 200.0 + 0.587 * 100.0 + 0.114 * 50.0) / 255.0;
        assert!((grid.get(0, 1) - expect).abs() < 1e-15);
    }

    #[test]
    fn binary_pgm() {
        let mut bytes = b"P5\n3 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 51, 102, 153, 204, 255]);
        let grid = ingest_bytes(&bytes).unwrap();
        assert_eq!((grid.width(), grid.height()), (3, 2));
        assert_eq!(grid.get(1, 2), 1.0);
        assert_eq!(grid.get(0, 1), 0.2);

        let mut wide = b"P5\n2 1\n65535\n".to_vec();
        wide.extend_from_slice(&[0xff, 0xff, 0x80, 0x00]);
        let grid = ingest_bytes(&wide).unwrap();
        assert_eq!(grid.get(0, 0), 1.0);
        assert_eq!(grid.get(0, 1), 32768.0 / 65535.0);
    }

    #[test]
    fn rejects_unsupported_and_corrupt() {
        assert!(matches!(
            ingest_bytes(b"GIF89a\x01\x00\x01\x00"),
            Err(SmoeError::UnsupportedFormat(_))
        ));
        assert!(matches!(
            ingest_bytes(b"hello world"),
            Err(SmoeError::UnsupportedFormat(_))
        ));
        let mut png = png_bytes(DynamicImage::ImageLuma8(ImageBuffer::from_pixel(
            8,
            8,
            Luma([3u8]),
        )));
        png.truncate(png.len() / 2);
        assert!(matches!(ingest_bytes(&png), Err(SmoeError::CorruptImage(_))));
    }

    #[test]
    fn png_round_trip_quantizes() {
        let grid = ImageGrid::new(3, 1, vec![-0.2, 0.5, 1.7]).unwrap();
        assert_eq!(to_gray8(&grid), vec![0, 128, 255]);
        let back = ingest_bytes(&encode_png(&grid).unwrap()).unwrap();
        assert_eq!(back.pixels(), &[0.0, 128.0 / 255.0, 1.0]);
    }
}
