//! 2×2 anchored composites: two ground-truth tiles on top, two novel renders
//! below, with the inpainting mask restricted to the novel tiles' holes.

use thiserror::Error;

use crate::coverage::detect_holes;
use crate::image::{Mask, RgbImage};
use crate::raster::RenderOutput;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("tile or composite dimensions do not match: {0}")]
    DimensionMismatch(&'static str),
    #[error("cycle {cycle} outside 1..={cycles}")]
    OutOfRange { cycle: usize, cycles: usize },
    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(&'static str),
}

/// Where each tile of the composite comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TileSource {
    GroundTruthA,
    GroundTruthB,
    NovelA,
    NovelB,
}

impl TileSource {
    pub fn is_anchor(&self) -> bool {
        matches!(self, Self::GroundTruthA | Self::GroundTruthB)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridLayout {
    pub tile_width: usize,
    pub tile_height: usize,
}

impl GridLayout {
    /// Tiles in row-major order: top-left, top-right, bottom-left, bottom-right.
    pub const ORDER: [TileSource; 4] = [
        TileSource::GroundTruthA,
        TileSource::GroundTruthB,
        TileSource::NovelA,
        TileSource::NovelB,
    ];

    /// Top-left pixel of `source`'s tile.
    pub fn origin(&self, source: TileSource) -> (usize, usize) {
        match source {
            TileSource::GroundTruthA => (0, 0),
            TileSource::GroundTruthB => (self.tile_width, 0),
            TileSource::NovelA => (0, self.tile_height),
            TileSource::NovelB => (self.tile_width, self.tile_height),
        }
    }

    pub fn composite_dims(&self) -> (usize, usize) {
        (2 * self.tile_width, 2 * self.tile_height)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridComposite {
    pub image: RgbImage,
    pub mask: Mask,
    pub layout: GridLayout,
}

pub fn assemble_grid(
    gt_a: &RgbImage,
    gt_b: &RgbImage,
    novel_a: &RenderOutput,
    novel_b: &RenderOutput,
    alpha_threshold: f64,
) -> Result<GridComposite, GridError> {
    let dims = gt_a.dims();
    if gt_b.dims() != dims || novel_a.rgb.dims() != dims || novel_b.rgb.dims() != dims {
        return Err(GridError::DimensionMismatch("all four tiles must share one size"));
    }
    let layout = GridLayout {
        tile_width: dims.0,
        tile_height: dims.1,
    };
    let (cw, ch) = layout.composite_dims();
    let mut image = RgbImage::filled(cw, ch, [0.0; 3]);
    let mut mask = Mask::filled(cw, ch, false);
    let (mask_a, _) = detect_holes(novel_a, alpha_threshold);
    let (mask_b, _) = detect_holes(novel_b, alpha_threshold);
    let tiles = [
        (gt_a, None),
        (gt_b, None),
        (&novel_a.rgb, Some(&mask_a)),
        (&novel_b.rgb, Some(&mask_b)),
    ];
    for (source, (img, m)) in GridLayout::ORDER.into_iter().zip(tiles) {
        let (x0, y0) = layout.origin(source);
        image.paste(img, x0, y0);
        if let Some(m) = m {
            mask.paste(m, x0, y0);
        }
    }
    Ok(GridComposite {
        image,
        mask,
        layout,
    })
}

/// Splits a composite back into its four tiles, in [`GridLayout::ORDER`].
pub fn disassemble_grid(composite: &RgbImage, layout: &GridLayout) -> Result<[RgbImage; 4], GridError> {
    let (w, h) = composite.dims();
    if w % 2 != 0 || h % 2 != 0 {
        return Err(GridError::DimensionMismatch("composite dimensions must be even"));
    }
    if (w, h) != layout.composite_dims() {
        return Err(GridError::DimensionMismatch("composite does not match layout"));
    }
    Ok(GridLayout::ORDER.map(|source| {
        let (x0, y0) = layout.origin(source);
        composite.crop(x0, y0, layout.tile_width, layout.tile_height)
    }))
}

/// Starting noise level per refinement cycle, annealed linearly from `start`
/// at cycle 1 to `end` at the last cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSchedule {
    pub cycles: usize,
    pub start: f64,
    pub end: f64,
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<(), GridError> {
        if self.cycles == 0 {
            return Err(GridError::InvalidSchedule("cycles must be at least 1"));
        }
        if !(0.0 <= self.end && self.end <= self.start && self.start <= 1.0) {
            return Err(GridError::InvalidSchedule("need 0 ≤ end ≤ start ≤ 1"));
        }
        Ok(())
    }

    pub fn level(&self, cycle: usize) -> Result<f64, GridError> {
        if cycle == 0 || cycle > self.cycles {
            return Err(GridError::OutOfRange {
                cycle,
                cycles: self.cycles,
            });
        }
        if self.cycles == 1 {
            return Ok(self.start);
        }
        let f = (cycle - 1) as f64 / (self.cycles - 1) as f64;
        Ok(self.start * (1.0 - f) + self.end * f)
    }
}
