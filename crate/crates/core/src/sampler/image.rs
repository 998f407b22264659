use std::io::Cursor;

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};

/// Interleaved 8-bit RGB pixels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Parameter(format!("image size {width}x{height} is empty")));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::shape("rgb buffer", &[height, width, 3], &[pixels.len()]));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Cursor::new(Vec::new());
        PngEncoder::new(&mut out)
            .write_image(
                &self.pixels,
                self.width as u32,
                self.height as u32,
                ExtendedColorType::Rgb8,
            )
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        Ok(out.into_inner())
    }

    /// Tiles equally sized images left to right, top to bottom.
    pub fn grid(images: &[RgbImage], columns: usize) -> Result<RgbImage> {
        let first = images
            .first()
            .ok_or_else(|| Error::Parameter("grid needs at least one image".into()))?;
        let (w, h) = (first.width, first.height);
        if let Some(bad) = images.iter().find(|i| (i.width, i.height) != (w, h)) {
            return Err(Error::shape("grid tile", &[h, w], &[bad.height, bad.width]));
        }
        let columns = columns.clamp(1, images.len());
        let rows = images.len().div_ceil(columns);
        let (gw, gh) = (w * columns, h * rows);
        let mut pixels = vec![0u8; gw * gh * 3];
        for (k, img) in images.iter().enumerate() {
            let (ox, oy) = ((k % columns) * w, (k / columns) * h);
            for y in 0..h {
                let src = &img.pixels[y * w * 3..(y + 1) * w * 3];
                let start = ((oy + y) * gw + ox) * 3;
                pixels[start..start + w * 3].copy_from_slice(src);
            }
        }
        RgbImage::new(gw, gh, pixels)
    }
}
