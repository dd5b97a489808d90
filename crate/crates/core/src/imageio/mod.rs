//! Grayscale image type, PGM codec, geometry normalization and dataset ingestion.

mod dataset;
mod pgm;
mod resample;

pub use dataset::{ingest, DatasetManifest, Layout, SubjectSamples};
pub use pgm::{decode_pgm, encode_pgm, load_pgm, write_pgm, PgmEncoding};
pub use resample::resample;

use crate::error::{Error, Result};

/// Width of the working resolution shared by both modalities.
pub const WORKING_WIDTH: usize = 92;
/// Height of the working resolution shared by both modalities.
pub const WORKING_HEIGHT: usize = 112;

/// Integer-intensity raster, row-major with a top-left origin.
///
/// Every intensity lies in `[0, levels - 1]`; `levels` may be as large as
/// 65536 (16-bit PGM).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    levels: u32,
    pixels: Vec<u16>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, levels: u32, pixels: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if !(2..=65536).contains(&levels) {
            return Err(Error::InvalidImage(format!(
                "gray level count must be in [2, 65536], got {levels}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "expected {} pixels for {width}x{height}, got {}",
                width * height,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|&&p| u32::from(p) >= levels) {
            return Err(Error::InvalidImage(format!(
                "intensity {bad} outside [0, {}]",
                levels - 1
            )));
        }
        Ok(GrayImage {
            width,
            height,
            levels,
            pixels,
        })
    }

    /// Constant image, mostly useful in tests.
    pub fn filled(width: usize, height: usize, levels: u32, value: u16) -> Result<Self> {
        Self::new(width, height, levels, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn max_value(&self) -> u16 {
        (self.levels - 1) as u16
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u16 {
        self.pixels[y * self.width + x]
    }

    /// Pixel intensities as reals, row-major.
    pub fn to_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| f64::from(p)).collect()
    }

    /// Replaces every pixel by `lut[pixel]`. The table must cover all levels
    /// and stay within range.
    pub(crate) fn map_levels(&self, lut: &[u16]) -> GrayImage {
        debug_assert_eq!(lut.len(), self.levels as usize);
        GrayImage {
            width: self.width,
            height: self.height,
            levels: self.levels,
            pixels: self.pixels.iter().map(|&p| lut[p as usize]).collect(),
        }
    }
}
