use crate::error::{Error, Result};
use crate::geometry::GridSpec;

/// 8-bit RGB frame, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl Frame {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width * 3],
        }
    }

    pub fn from_raw(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::DimensionMismatch(format!(
                "{} bytes for a {height}x{width} RGB frame",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Zero-pads on the bottom and right so both sides are multiples of `region_size`.
    pub fn pad_to_grid(&self, region_size: usize) -> Result<(Frame, GridSpec)> {
        let grid = GridSpec::padded(self.height, self.width, region_size)?;
        if grid.frame_height == self.height && grid.frame_width == self.width {
            return Ok((self.clone(), grid));
        }
        let mut out = Frame::new(grid.frame_height, grid.frame_width);
        let row_bytes = self.width * 3;
        for y in 0..self.height {
            let dst = y * grid.frame_width * 3;
            out.data[dst..dst + row_bytes]
                .copy_from_slice(&self.data[y * row_bytes..(y + 1) * row_bytes]);
        }
        Ok((out, grid))
    }

    pub fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        if self.height != grid.frame_height || self.width != grid.frame_width {
            return Err(Error::DimensionMismatch(format!(
                "frame is {}x{}, grid expects {}x{}",
                self.height, self.width, grid.frame_height, grid.frame_width
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_keeps_content_and_zero_fills() {
        let mut f = Frame::new(3, 5);
        f.set_pixel(2, 4, [9, 8, 7]);
        let (p, grid) = f.pad_to_grid(4).unwrap();
        assert_eq!((p.height(), p.width()), (4, 8));
        assert_eq!((grid.rows(), grid.cols()), (1, 2));
        assert_eq!(p.pixel(2, 4), [9, 8, 7]);
        assert_eq!(p.pixel(3, 7), [0, 0, 0]);
        assert_eq!(p.pixel(2, 5), [0, 0, 0]);
    }
}
