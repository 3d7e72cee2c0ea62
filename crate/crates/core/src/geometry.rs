//! Pixel boxes and the region grid that tiles a frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default region (and patch) side in pixels.
pub const DEFAULT_REGION_SIZE: usize = 16;

/// Axis-aligned pixel box, half-open on both axes: pixels `x1..x2` by `y1..y2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[i64; 4]", into = "[i64; 4]")]
pub struct BBox {
    pub x1: usize,
    pub y1: usize,
    pub x2: usize,
    pub y2: usize,
}

impl BBox {
    pub fn new(x1: usize, y1: usize, x2: usize, y2: usize) -> Result<Self> {
        if x1 >= x2 || y1 >= y2 {
            return Err(Error::InvalidConfig(format!(
                "degenerate box ({x1},{y1},{x2},{y2})"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> usize {
        self.x2 - self.x1
    }

    pub fn height(&self) -> usize {
        self.y2 - self.y1
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.x1 < self.x2 && self.y1 < self.y2 && self.x2 <= width && self.y2 <= height
    }

    /// Overlap area with another box (0 when disjoint).
    pub fn intersection_area(&self, other: &BBox) -> usize {
        let w = self.x2.min(other.x2).saturating_sub(self.x1.max(other.x1));
        let h = self.y2.min(other.y2).saturating_sub(self.y1.max(other.y1));
        w * h
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.intersection_area(other) > 0
    }

    pub fn as_array(&self) -> [i64; 4] {
        [
            self.x1 as i64,
            self.y1 as i64,
            self.x2 as i64,
            self.y2 as i64,
        ]
    }
}

impl TryFrom<[i64; 4]> for BBox {
    type Error = String;

    fn try_from(v: [i64; 4]) -> std::result::Result<Self, String> {
        if v.iter().any(|&c| c < 0) {
            return Err(format!("negative box coordinate in {v:?}"));
        }
        if v[0] >= v[2] || v[1] >= v[3] {
            return Err(format!("degenerate box {v:?}"));
        }
        Ok(BBox {
            x1: v[0] as usize,
            y1: v[1] as usize,
            x2: v[2] as usize,
            y2: v[3] as usize,
        })
    }
}

impl From<BBox> for [i64; 4] {
    fn from(b: BBox) -> Self {
        b.as_array()
    }
}

/// Tiling of a `height × width` frame into square regions of `region_size`
/// pixels. One region is one token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridSpec {
    pub frame_height: usize,
    pub frame_width: usize,
    pub region_size: usize,
}

impl GridSpec {
    pub fn new(frame_height: usize, frame_width: usize, region_size: usize) -> Result<Self> {
        if region_size == 0 || frame_height == 0 || frame_width == 0 {
            return Err(Error::InvalidConfig(
                "frame and region sizes must be positive".into(),
            ));
        }
        if frame_height % region_size != 0 || frame_width % region_size != 0 {
            return Err(Error::InvalidConfig(format!(
                "{frame_height}x{frame_width} frame is not a multiple of region size {region_size}"
            )));
        }
        Ok(Self {
            frame_height,
            frame_width,
            region_size,
        })
    }

    /// Grid for a frame after bottom/right padding up to a multiple of the region size.
    pub fn padded(frame_height: usize, frame_width: usize, region_size: usize) -> Result<Self> {
        if region_size == 0 {
            return Err(Error::InvalidConfig("region size must be positive".into()));
        }
        Self::new(
            frame_height.div_ceil(region_size) * region_size,
            frame_width.div_ceil(region_size) * region_size,
            region_size,
        )
    }

    /// Grid with the given number of region rows and columns.
    pub fn from_regions(rows: usize, cols: usize, region_size: usize) -> Result<Self> {
        Self::new(rows * region_size, cols * region_size, region_size)
    }

    pub fn rows(&self) -> usize {
        self.frame_height / self.region_size
    }

    pub fn cols(&self) -> usize {
        self.frame_width / self.region_size
    }

    /// Token count `N = rows · cols`.
    pub fn num_tokens(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols() + col
    }

    pub fn row_col(&self, index: usize) -> (usize, usize) {
        (index / self.cols(), index % self.cols())
    }

    /// Pixel block covered by region `(row, col)`.
    pub fn region_box(&self, row: usize, col: usize) -> BBox {
        let s = self.region_size;
        BBox {
            x1: col * s,
            y1: row * s,
            x2: (col + 1) * s,
            y2: (row + 1) * s,
        }
    }
}
