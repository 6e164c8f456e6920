use crate::error::{Result, SmoeError};
use crate::grid::ImageGrid;

/// Layout of the non-overlapping blocks cut from a center-cropped image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockPartition {
    pub block_size: usize,
    pub blocks_x: usize,
    pub blocks_y: usize,
    /// Top-left corner of the cropped region in the source image.
    pub origin: (usize, usize),
}

impl BlockPartition {
    /// Center crop of a `width`x`height` image to whole blocks.
    pub fn for_dims(width: usize, height: usize, block_size: usize) -> Result<Self> {
        if block_size < 2 {
            return Err(SmoeError::invalid(format!(
                "block size must be at least 2, got {block_size}"
            )));
        }
        if width < block_size || height < block_size {
            return Err(SmoeError::ImageTooSmall {
                width,
                height,
                min: block_size,
            });
        }
        let blocks_x = width / block_size;
        let blocks_y = height / block_size;
        Ok(Self {
            block_size,
            blocks_x,
            blocks_y,
            origin: (
                (width - blocks_x * block_size) / 2,
                (height - blocks_y * block_size) / 2,
            ),
        })
    }

    pub fn cropped_width(&self) -> usize {
        self.blocks_x * self.block_size
    }

    pub fn cropped_height(&self) -> usize {
        self.blocks_y * self.block_size
    }

    pub fn block_count(&self) -> usize {
        self.blocks_x * self.blocks_y
    }

    pub fn crop(&self, image: &ImageGrid) -> Result<ImageGrid> {
        image.crop(
            self.origin.0,
            self.origin.1,
            self.cropped_width(),
            self.cropped_height(),
        )
    }
}

/// Cuts `image` into row-major `block_size` blocks after center-cropping to
/// the largest multiple of the block size.
pub fn partition(image: &ImageGrid, block_size: usize) -> Result<(Vec<ImageGrid>, BlockPartition)> {
    let layout = BlockPartition::for_dims(image.width(), image.height(), block_size)?;
    let (ox, oy) = layout.origin;
    let mut blocks = Vec::with_capacity(layout.block_count());
    for by in 0..layout.blocks_y {
        for bx in 0..layout.blocks_x {
            blocks.push(image.crop(
                ox + bx * block_size,
                oy + by * block_size,
                block_size,
                block_size,
            )?);
        }
    }
    Ok((blocks, layout))
}

/// Inverse of [`partition`] on the cropped region.
pub fn reassemble(blocks: &[ImageGrid], layout: &BlockPartition) -> Result<ImageGrid> {
    if blocks.len() != layout.block_count() {
        return Err(SmoeError::DimensionMismatch {
            expected: format!("{} blocks", layout.block_count()),
            actual: format!("{} blocks", blocks.len()),
        });
    }
    let n = layout.block_size;
    if let Some(bad) = blocks.iter().find(|b| b.width() != n || b.height() != n) {
        return Err(SmoeError::DimensionMismatch {
            expected: format!("{n}x{n} blocks"),
            actual: format!("a {}x{} block", bad.width(), bad.height()),
        });
    }
    let width = layout.cropped_width();
    let mut out = ImageGrid::filled(width, layout.cropped_height(), 0.0);
    let dst = out.pixels_mut();
    for (i, block) in blocks.iter().enumerate() {
        let (bx, by) = (i % layout.blocks_x, i / layout.blocks_x);
        for r in 0..n {
            let start = (by * n + r) * width + bx * n;
            dst[start..start + n].copy_from_slice(&block.pixels()[r * n..(r + 1) * n]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn block_counts() {
        let img = ImageGrid::filled(512, 512, 0.5);
        assert_eq!(partition(&img, 16).unwrap().0.len(), 1024);
        assert_eq!(partition(&img, 8).unwrap().0.len(), 4096);
    }

    #[test]
    fn crop_margins() {
        let img = ImageGrid::from_fn(17, 17, |r, c| (r * 17 + c) as f64);
        let (blocks, layout) = partition(&img, 16).unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(layout.origin, (0, 0));
        let img = ImageGrid::from_fn(19, 21, |r, c| (r * 19 + c) as f64);
        let (_, layout) = partition(&img, 8).unwrap();
        assert_eq!(layout.origin, (1, 2));
        assert_eq!((layout.blocks_x, layout.blocks_y), (2, 2));
    }

    #[test]
    fn too_small_and_bad_sizes() {
        let img = ImageGrid::filled(7, 30, 0.0);
        assert!(matches!(
            partition(&img, 8),
            Err(SmoeError::ImageTooSmall { .. })
        ));
        assert!(partition(&img, 1).is_err());
    }

    #[test]
    fn single_block_identity() {
        let img = ImageGrid::from_fn(8, 8, |r, c| (r + 2 * c) as f64 / 30.0);
        let (blocks, layout) = partition(&img, 8).unwrap();
        assert_eq!(reassemble(&blocks, &layout).unwrap(), img);
    }

    #[test]
    fn reassemble_guards_shape() {
        let img = ImageGrid::from_fn(32, 16, |r, c| (r * c) as f64);
        let (mut blocks, layout) = partition(&img, 8).unwrap();
        blocks.pop();
        assert!(reassemble(&blocks, &layout).is_err());
        blocks.push(ImageGrid::filled(4, 4, 0.0));
        assert!(reassemble(&blocks, &layout).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(w in 8usize..60, h in 8usize..60, n in 2usize..9, seed in any::<u64>()) {
            let img = ImageGrid::from_fn(w, h, |r, c| ((r as u64 * 31 + c as u64 * 17) ^ seed) as f64 / u64::MAX as f64);
            let (blocks, layout) = partition(&img, n).unwrap();
            let back = reassemble(&blocks, &layout).unwrap();
            prop_assert_eq!(back, layout.crop(&img).unwrap());
        }
    }
}
