//! Static, dynamic and combined region masks, and the full-frame refresh schedule.
//!
//! The static mask keeps the `floor(k_s · N)` regions that objects covered most
//! often in a set of training annotations. The dynamic mask keeps every region
//! touched by a box detected in the previous frame. Masked frames process the
//! union; every `P`-th frame is processed without a mask.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, GridSpec};

/// Ground-truth annotations for one sequence (or a pooled training set).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSet {
    /// `[H, W]` in pixels.
    pub frame_size: [usize; 2],
    pub frames: Vec<FrameAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub index: usize,
    pub boxes: Vec<BBox>,
    /// Optional class id per box; absent in hand-written files.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<u32>,
}

impl AnnotationSet {
    pub fn from_json(text: &str) -> Result<Self> {
        let set: AnnotationSet = serde_json::from_str(text)?;
        set.validate()?;
        Ok(set)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Box lists in frame order.
    pub fn boxes(&self) -> Vec<Vec<BBox>> {
        self.frames.iter().map(|f| f.boxes.clone()).collect()
    }

    pub fn height(&self) -> usize {
        self.frame_size[0]
    }

    pub fn width(&self) -> usize {
        self.frame_size[1]
    }

    /// Checks every box against `frame_size`; reports the first offender by
    /// its running index across all frames.
    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        let mut index = 0;
        for frame in &self.frames {
            if !frame.classes.is_empty() && frame.classes.len() != frame.boxes.len() {
                return Err(Error::Format(format!(
                    "frame {} has {} boxes but {} classes",
                    frame.index,
                    frame.boxes.len(),
                    frame.classes.len()
                )));
            }
            for b in &frame.boxes {
                if !b.fits(h, w) {
                    return Err(Error::BoxOutOfBounds {
                        index,
                        bbox: b.as_array(),
                        height: h,
                        width: w,
                    });
                }
                index += 1;
            }
        }
        Ok(())
    }
}

/// Per-pixel count of training boxes covering each pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Heatmap {
    height: usize,
    width: usize,
    values: Vec<u32>,
}

impl Heatmap {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.values[y * self.width + x]
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn from_values(height: usize, width: usize, values: Vec<u32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} heatmap values for {height}x{width}",
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    /// Binary PGM, linearly scaled so the maximum count maps to 255.
    pub fn write_pgm<W: Write>(&self, out: &mut W) -> Result<()> {
        let max = self.values.iter().copied().max().unwrap_or(0).max(1) as u64;
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .values
            .iter()
            .map(|&v| ((v as u64 * 255) / max) as u8)
            .collect();
        out.write_all(&bytes)?;
        Ok(())
    }
}

/// Accumulates box coverage over all frames: `H[y1..y2, x1..x2] += 1` per box.
///
/// The heatmap covers the grid's (padded) frame. Boxes are validated first;
/// the error names the running index of the first out-of-bounds box.
pub fn accumulate_heatmap<'a, I>(frames: I, grid: &GridSpec) -> Result<Heatmap>
where
    I: IntoIterator<Item = &'a [BBox]>,
{
    let (h, w) = (grid.frame_height, grid.frame_width);
    // 2-D difference array; one prefix-sum pass recovers the counts.
    let mut diff = vec![0i64; (h + 1) * (w + 1)];
    let stride = w + 1;
    let mut index = 0;
    for boxes in frames {
        for b in boxes {
            if !b.fits(h, w) {
                return Err(Error::BoxOutOfBounds {
                    index,
                    bbox: b.as_array(),
                    height: h,
                    width: w,
                });
            }
            diff[b.y1 * stride + b.x1] += 1;
            diff[b.y1 * stride + b.x2] -= 1;
            diff[b.y2 * stride + b.x1] -= 1;
            diff[b.y2 * stride + b.x2] += 1;
            index += 1;
        }
    }
    for y in 0..=h {
        for x in 1..=w {
            diff[y * stride + x] += diff[y * stride + x - 1];
        }
    }
    for y in 1..=h {
        for x in 0..=w {
            diff[y * stride + x] += diff[(y - 1) * stride + x];
        }
    }
    let mut values = Vec::with_capacity(h * w);
    for y in 0..h {
        values.extend(diff[y * stride..y * stride + w].iter().map(|&v| v as u32));
    }
    Ok(Heatmap {
        height: h,
        width: w,
        values,
    })
}

/// Heatmap mass per region, row-major over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionScores {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl RegionScores {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.num_tokens() {
            return Err(Error::DimensionMismatch(format!(
                "{} scores for {} regions",
                values.len(),
                grid.num_tokens()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[self.grid.index(row, col)]
    }
}

/// Sums heatmap counts over each `region_size × region_size` block.
pub fn region_scores(heatmap: &Heatmap, grid: &GridSpec) -> Result<RegionScores> {
    if heatmap.height != grid.frame_height || heatmap.width != grid.frame_width {
        return Err(Error::DimensionMismatch(format!(
            "heatmap is {}x{}, grid expects {}x{}",
            heatmap.height, heatmap.width, grid.frame_height, grid.frame_width
        )));
    }
    let s = grid.region_size;
    let mut values = vec![0.0; grid.num_tokens()];
    for y in 0..heatmap.height {
        let row_base = (y / s) * grid.cols();
        for (x, &v) in heatmap.values[y * heatmap.width..(y + 1) * heatmap.width]
            .iter()
            .enumerate()
        {
            values[row_base + x / s] += v as f64;
        }
    }
    RegionScores::new(*grid, values)
}

/// Boolean keep/skip decision per region.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RegionMask {
    grid: GridSpec,
    cells: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct MaskJson {
    frame_size: [usize; 2],
    region_size: usize,
    rows: usize,
    cols: usize,
    keep_count: usize,
    mask: Vec<Vec<bool>>,
}

impl RegionMask {
    pub fn none(grid: GridSpec) -> Self {
        Self {
            cells: vec![false; grid.num_tokens()],
            grid,
        }
    }

    pub fn all(grid: GridSpec) -> Self {
        Self {
            cells: vec![true; grid.num_tokens()],
            grid,
        }
    }

    pub fn from_cells(grid: GridSpec, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != grid.num_tokens() {
            return Err(Error::DimensionMismatch(format!(
                "{} mask cells for {} regions",
                cells.len(),
                grid.num_tokens()
            )));
        }
        Ok(Self { grid, cells })
    }

    pub fn from_locations(grid: GridSpec, locations: &[usize]) -> Result<Self> {
        let mut mask = Self::none(grid);
        for &loc in locations {
            if loc >= mask.cells.len() {
                return Err(Error::LocationOutOfRange {
                    location: loc,
                    len: mask.cells.len(),
                });
            }
            mask.cells[loc] = true;
        }
        Ok(mask)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[self.grid.index(row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        let i = self.grid.index(row, col);
        self.cells[i] = value;
    }

    pub fn keep_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn keep_rate(&self) -> f64 {
        self.keep_count() as f64 / self.cells.len() as f64
    }

    /// Row-major indices of kept regions, strictly increasing.
    pub fn locations(&self) -> Vec<usize> {
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(i, &c)| c.then_some(i))
            .collect()
    }

    pub fn union(&self, other: &RegionMask) -> Result<RegionMask> {
        combined_mask(self, other)
    }

    pub fn is_superset_of(&self, other: &RegionMask) -> bool {
        self.grid == other.grid && self.cells.iter().zip(&other.cells).all(|(&a, &b)| a || !b)
    }

    pub fn to_json(&self) -> Result<String> {
        let cols = self.grid.cols();
        let doc = MaskJson {
            frame_size: [self.grid.frame_height, self.grid.frame_width],
            region_size: self.grid.region_size,
            rows: self.grid.rows(),
            cols,
            keep_count: self.keep_count(),
            mask: self.cells.chunks(cols).map(<[bool]>::to_vec).collect(),
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MaskJson = serde_json::from_str(text)?;
        let grid = GridSpec::new(doc.frame_size[0], doc.frame_size[1], doc.region_size)?;
        if doc.rows != grid.rows()
            || doc.cols != grid.cols()
            || doc.mask.len() != doc.rows
            || doc.mask.iter().any(|r| r.len() != doc.cols)
        {
            return Err(Error::Format(
                "mask grid shape disagrees with header".into(),
            ));
        }
        Self::from_cells(grid, doc.mask.into_iter().flatten().collect())
    }

    /// Binary PGM with one `scale × scale` pixel block per region (255 = kept).
    pub fn write_pgm<W: Write>(&self, out: &mut W, scale: usize) -> Result<()> {
        let scale = scale.max(1);
        let (rows, cols) = (self.grid.rows(), self.grid.cols());
        write!(out, "P5\n{} {}\n255\n", cols * scale, rows * scale)?;
        let mut line = Vec::with_capacity(cols * scale);
        for r in 0..rows {
            line.clear();
            for c in 0..cols {
                let v = if self.get(r, c) { 255u8 } else { 0 };
                line.extend(std::iter::repeat_n(v, scale));
            }
            for _ in 0..scale {
                out.write_all(&line)?;
            }
        }
        Ok(())
    }
}

/// Number of regions kept by a static keep rate: `floor(k_s · N)`.
pub fn static_keep_count(static_keep_rate: f64, num_tokens: usize) -> usize {
    ((static_keep_rate * num_tokens as f64).floor() as usize).min(num_tokens)
}

/// Keeps the `floor(k_s · N)` highest-scoring regions; equal scores favour
/// the smaller row-major index.
pub fn static_mask(scores: &RegionScores, static_keep_rate: f64) -> RegionMask {
    let n = scores.values.len();
    let k = static_keep_count(static_keep_rate.clamp(0.0, 1.0), n);
    let mut mask = RegionMask::none(scores.grid);
    if k == 0 {
        return mask;
    }
    let mut order: Vec<usize> = (0..n).collect();
    let by_rank = |&a: &usize, &b: &usize| {
        scores.values[b]
            .partial_cmp(&scores.values[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    };
    if k < n {
        order.select_nth_unstable_by(k - 1, by_rank);
    }
    for &i in &order[..k] {
        mask.cells[i] = true;
    }
    mask
}

/// Marks every region whose pixel block intersects a box, then grows the
/// result by `dilation` regions in Chebyshev distance.
///
/// Boxes are clipped to the grid's frame; boxes entirely outside it are ignored.
pub fn dynamic_mask(boxes: &[BBox], grid: &GridSpec, dilation: usize) -> RegionMask {
    let mut mask = RegionMask::none(*grid);
    let s = grid.region_size;
    let (rows, cols) = (grid.rows(), grid.cols());
    for b in boxes {
        let x2 = b.x2.min(grid.frame_width);
        let y2 = b.y2.min(grid.frame_height);
        if b.x1 >= x2 || b.y1 >= y2 {
            continue;
        }
        // Half-open: the last covered pixel is x2 - 1.
        for r in b.y1 / s..=(y2 - 1) / s {
            for c in b.x1 / s..=(x2 - 1) / s {
                mask.cells[r * cols + c] = true;
            }
        }
    }
    if dilation == 0 {
        return mask;
    }
    let mut grown = RegionMask::none(*grid);
    for r in 0..rows {
        for c in 0..cols {
            if !mask.cells[r * cols + c] {
                continue;
            }
            for rr in r.saturating_sub(dilation)..=(r + dilation).min(rows - 1) {
                for cc in c.saturating_sub(dilation)..=(c + dilation).min(cols - 1) {
                    grown.cells[rr * cols + cc] = true;
                }
            }
        }
    }
    grown
}

/// Cell-wise OR of two masks on the same grid.
pub fn combined_mask(a: &RegionMask, b: &RegionMask) -> Result<RegionMask> {
    if a.grid != b.grid {
        return Err(Error::DimensionMismatch(format!(
            "mask grids differ: {:?} vs {:?}",
            a.grid, b.grid
        )));
    }
    Ok(RegionMask {
        grid: a.grid,
        cells: a
            .cells
            .iter()
            .zip(&b.cells)
            .map(|(&x, &y)| x || y)
            .collect(),
    })
}

/// Refresh period and static-mask parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSchedule {
    pub period: usize,
    pub static_keep_rate: f64,
    #[serde(default)]
    pub dilation: usize,
}

impl MaskSchedule {
    pub fn new(period: usize, static_keep_rate: f64, dilation: usize) -> Result<Self> {
        let s = Self {
            period,
            static_keep_rate,
            dilation,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.period == 0 {
            return Err(Error::InvalidConfig("period must be ≥ 1".into()));
        }
        if !(0.0..=1.0).contains(&self.static_keep_rate) {
            return Err(Error::InvalidConfig(format!(
                "static keep rate {} outside [0, 1]",
                self.static_keep_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameKind {
    FullFrame,
    Masked,
}

/// The first frame of every window of `P` frames is processed in full.
pub fn schedule_frame(t: usize, schedule: &MaskSchedule) -> FrameKind {
    if t % schedule.period.max(1) == 0 {
        FrameKind::FullFrame
    } else {
        FrameKind::Masked
    }
}
