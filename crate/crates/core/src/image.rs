//! Grayscale frame raster and its binary PGM (P5) interchange format.
//!
//! Every module exchanges images as `FrameImage`: a row-major grid of
//! intensities in `[0.0, 1.0]`, where 0.0 is black and 1.0 is white. On disk
//! an image is an 8-bit binary PGM with maxval 255 and
//! `intensity = round(pixel * 255)`.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

/// Errors raised by image construction and PGM I/O.
#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions must be positive, got {width}x{height}")]
    EmptyDimensions { width: usize, height: usize },
    #[error("pixel buffer has {got} values, expected {expected}")]
    PixelCount { got: usize, expected: usize },
    #[error("pixel intensity {value} outside [0, 1]")]
    IntensityRange { value: f32 },
    #[error("not a binary PGM: {reason}")]
    Format { reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A W×H grayscale raster with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl FrameImage {
    /// Creates an image filled with a constant intensity.
    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyDimensions { width, height });
        }
        if !(0.0..=1.0).contains(&value) {
            return Err(ImageError::IntensityRange { value });
        }
        Ok(Self { width, height, pixels: vec![value; width * height] })
    }

    /// Creates an all-white image (intensity 1.0).
    pub fn white(width: usize, height: usize) -> Result<Self, ImageError> {
        Self::filled(width, height, 1.0)
    }

    /// Wraps a row-major pixel buffer, validating range and length.
    pub fn from_pixels(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyDimensions { width, height });
        }
        if pixels.len() != width * height {
            return Err(ImageError::PixelCount { got: pixels.len(), expected: width * height });
        }
        if let Some(&bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p) || p.is_nan()) {
            return Err(ImageError::IntensityRange { value: bad });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f32) {
        self.pixels[y * self.width + x] = value;
    }

    /// One image row as a slice.
    #[inline]
    pub fn row(&self, y: usize) -> &[f32] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }

    /// Paints an axis-aligned rectangle `[x0, x0+w) x [y0, y0+h)`.
    pub fn fill_rect(&mut self, x0: usize, y0: usize, w: usize, h: usize, value: f32) {
        for y in y0..(y0 + h).min(self.height) {
            let row = &mut self.pixels[y * self.width..(y + 1) * self.width];
            for p in &mut row[x0..(x0 + w).min(self.width)] {
                *p = value;
            }
        }
    }

    /// Mean absolute pixel difference between two equally sized images.
    pub fn mean_abs_diff(&self, other: &FrameImage) -> f32 {
        assert_eq!(
            (self.width, self.height),
            (other.width, other.height),
            "mean_abs_diff requires equal dimensions"
        );
        let sum: f64 = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        (sum / self.pixels.len() as f64) as f32
    }

    /// Pixelwise L1 distance (sum of absolute differences).
    pub fn l1_distance(&self, other: &FrameImage) -> f64 {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum()
    }

    /// Convex combination `alpha * self + (1 - alpha) * other`, clamped to [0, 1].
    pub fn blend(&self, other: &FrameImage, alpha: f32) -> FrameImage {
        assert_eq!(
            (self.width, self.height),
            (other.width, other.height),
            "blend requires equal dimensions"
        );
        let pixels = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (alpha * a + (1.0 - alpha) * b).clamp(0.0, 1.0))
            .collect();
        FrameImage { width: self.width, height: self.height, pixels }
    }

    /// Serializes as binary PGM (P5, maxval 255).
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<(), ImageError> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.pixels.iter().map(|p| (p * 255.0).round() as u8).collect();
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.pixels.len() + 32);
        self.write_pgm(&mut buf).expect("writing to Vec cannot fail");
        buf
    }

    pub fn save_pgm(&self, path: &Path) -> Result<(), ImageError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_pgm(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Parses a binary PGM (P5, maxval 255). Comments and arbitrary header
    /// whitespace are accepted; other netpbm flavors are not.
    pub fn read_pgm<R: Read>(mut r: R) -> Result<Self, ImageError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_pgm_bytes(&bytes)
    }

    pub fn from_pgm_bytes(bytes: &[u8]) -> Result<Self, ImageError> {
        if !bytes.starts_with(b"P5") {
            return Err(ImageError::Format { reason: "missing P5 magic".into() });
        }
        let mut pos = 2;
        let mut fields = [0usize; 3];
        for field in &mut fields {
            *field = read_header_int(bytes, &mut pos)?;
        }
        let (width, height, maxval) = (fields[0], fields[1], fields[2]);
        if maxval != 255 {
            return Err(ImageError::Format { reason: format!("maxval {maxval}, expected 255") });
        }
        // Exactly one whitespace byte separates the header from raster data.
        pos += 1;
        let expected = width
            .checked_mul(height)
            .ok_or_else(|| ImageError::Format { reason: "dimension overflow".into() })?;
        let raster = bytes.get(pos..pos + expected).ok_or_else(|| ImageError::Format {
            reason: format!("raster truncated: need {expected} bytes"),
        })?;
        let pixels = raster.iter().map(|&b| b as f32 / 255.0).collect();
        FrameImage::from_pixels(width, height, pixels)
    }

    pub fn load_pgm(path: &Path) -> Result<Self, ImageError> {
        Self::read_pgm(BufReader::new(File::open(path)?))
    }
}

fn read_header_int(bytes: &[u8], pos: &mut usize) -> Result<usize, ImageError> {
    // Skip whitespace and '#' comment lines.
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while let Some(b) = bytes.get(*pos) {
                    *pos += 1;
                    if *b == b'\n' {
                        break;
                    }
                }
            }
            Some(_) => break,
            None => return Err(ImageError::Format { reason: "header truncated".into() }),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| b.is_ascii_digit()) {
        *pos += 1;
    }
    if start == *pos {
        return Err(ImageError::Format { reason: "expected integer in header".into() });
    }
    std::str::from_utf8(&bytes[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ImageError::Format { reason: "bad integer in header".into() })
}
