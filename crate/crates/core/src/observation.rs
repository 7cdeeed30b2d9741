//! Fixed-size RGB frame buffer.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub type Rgb = [u8; 3];

/// Row-major 8-bit RGB image seen by controllers and the world model.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Observation {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub time_index: usize,
    /// Set when some rendered object extended past the frame edge.
    pub clipped: bool,
}

impl Observation {
    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        let mut pixels = vec![0u8; width * height * 3];
        for px in pixels.chunks_exact_mut(3) {
            px.copy_from_slice(&color);
        }
        Self { width, height, pixels, time_index: 0, clipped: false }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::InvalidParams(alloc::format!(
                "pixel buffer has {} bytes, expected {}",
                pixels.len(),
                width * height * 3
            )));
        }
        Ok(Self { width, height, pixels, time_index: 0, clipped: false })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Rgb {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, color: Rgb) {
        let i = (row * self.width + col) * 3;
        self.pixels[i..i + 3].copy_from_slice(&color);
    }

    pub fn swap(&mut self, a: (usize, usize), b: (usize, usize)) {
        let ca = self.get(a.0, a.1);
        let cb = self.get(b.0, b.1);
        self.set(a.0, a.1, cb);
        self.set(b.0, b.1, ca);
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn same_dims(&self, other: &Observation) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch { expected: self.dims(), found: other.dims() });
        }
        Ok(())
    }
}
