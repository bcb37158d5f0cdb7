//! Single-channel intensity images and their PGM/PNG encodings.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::Path;

use image::codecs::pnm::{PnmDecoder, PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ImageBuffer, ImageFormat, Luma};

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// Grayscale image with 8- or 16-bit samples, stored row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SonarImage {
    width: u32,
    height: u32,
    max_value: u16,
    pixels: Vec<u16>,
}

impl SonarImage {
    /// `max_value` must be 255 or 65535.
    pub fn new(width: u32, height: u32, max_value: u16, pixels: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidInput(
                "image dimensions must be positive".into(),
            ));
        }
        if max_value != 255 && max_value != u16::MAX {
            return Err(Error::InvalidInput(format!(
                "max value must be 255 or 65535, got {max_value}"
            )));
        }
        if pixels.len() != width as usize * height as usize {
            return Err(Error::InvalidInput(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width as usize * height as usize,
                pixels.len()
            )));
        }
        if let Some(p) = pixels.iter().find(|&&p| p > max_value) {
            return Err(Error::InvalidInput(format!(
                "pixel value {p} exceeds max value {max_value}"
            )));
        }
        Ok(SonarImage {
            width,
            height,
            max_value,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, max_value: u16, value: u16) -> Result<Self> {
        Self::new(
            width,
            height,
            max_value,
            vec![value.min(max_value); width as usize * height as usize],
        )
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn max_value(&self) -> u16 {
        self.max_value
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: u16) {
        let w = self.width as usize;
        self.pixels[y as usize * w + x as usize] = v.min(self.max_value);
    }

    /// Pixels of `window` divided by the max value. The window must lie
    /// inside the image.
    pub fn normalized_crop(&self, window: &BoundingBox) -> Result<Vec<f32>> {
        if !window.fits_within(self.width, self.height) {
            return Err(Error::InvalidInput(format!(
                "window {window:?} exceeds {}x{} image",
                self.width, self.height
            )));
        }
        let max = self.max_value as f32;
        let mut out = Vec::with_capacity(window.area() as usize);
        for y in window.y as usize..window.bottom() as usize {
            let row = y * self.width as usize;
            out.extend(
                self.pixels[row + window.x as usize..row + window.right() as usize]
                    .iter()
                    .map(|&p| p as f32 / max),
            );
        }
        Ok(out)
    }

    /// Writes a binary (P5) PGM.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        if self.max_value == 255 {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            let encoder = PnmEncoder::new(BufWriter::new(file))
                .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary));
            let bytes: Vec<u8> = self.pixels.iter().map(|&p| p as u8).collect();
            return ImageBuffer::<Luma<u8>, _>::from_raw(self.width, self.height, bytes)
                .expect("buffer size checked at construction")
                .write_with_encoder(encoder)
                .map_err(|e| image_err(path, e));
        }
        // the pnm encoder only emits 8-bit graymaps; 16-bit samples are big-endian
        let mut out =
            format!("P5\n{} {}\n{}\n", self.width, self.height, self.max_value).into_bytes();
        out.reserve(self.pixels.len() * 2);
        for p in &self.pixels {
            out.extend_from_slice(&p.to_be_bytes());
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Reads a binary (P5) PGM with 8- or 16-bit samples.
    pub fn read_pgm(path: &Path) -> Result<Self> {
        let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut magic = [0u8; 2];
        file.read_exact(&mut magic)
            .map_err(|e| Error::io(path, e))?;
        if &magic != b"P5" {
            return Err(Error::Image {
                path: path.to_path_buf(),
                message: "not a binary P5 PGM".into(),
            });
        }
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let decoder = PnmDecoder::new(BufReader::new(file)).map_err(|e| image_err(path, e))?;
        let img = DynamicImage::from_decoder(decoder).map_err(|e| image_err(path, e))?;
        let (w, h) = (img.width(), img.height());
        match img {
            DynamicImage::ImageLuma8(buf) => Self::new(
                w,
                h,
                255,
                buf.into_raw().into_iter().map(u16::from).collect(),
            ),
            DynamicImage::ImageLuma16(buf) => Self::new(w, h, u16::MAX, buf.into_raw()),
            other => Err(Error::Image {
                path: path.to_path_buf(),
                message: format!("unsupported sample layout {:?}", other.color()),
            }),
        }
    }

    /// Writes an 8-bit PNG, rescaling 16-bit data.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = if self.max_value == 255 {
            self.pixels.iter().map(|&p| p as u8).collect()
        } else {
            self.pixels.iter().map(|&p| (p >> 8) as u8).collect()
        };
        ImageBuffer::<Luma<u8>, _>::from_raw(self.width, self.height, bytes)
            .expect("buffer size checked at construction")
            .save_with_format(path, ImageFormat::Png)
            .map_err(|e| image_err(path, e))
    }

    /// Draws a one-pixel rectangle outline, clipped to the image.
    pub fn draw_rect(&mut self, b: &BoundingBox, value: u16) {
        let (w, h) = (self.width as i64, self.height as i64);
        let (x0, y0, x1, y1) = (b.x as i64, b.y as i64, b.right() - 1, b.bottom() - 1);
        let mut put = |x: i64, y: i64| {
            if (0..w).contains(&x) && (0..h).contains(&y) {
                self.set(x as u32, y as u32, value);
            }
        };
        for x in x0..=x1 {
            put(x, y0);
            put(x, y1);
        }
        for y in y0..=y1 {
            put(x0, y);
            put(x1, y);
        }
    }
}

fn image_err(path: &Path, e: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_8_and_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        let p8 = dir.path().join("a.pgm");
        let img = SonarImage::new(3, 2, 255, vec![0, 1, 2, 128, 254, 255]).unwrap();
        img.write_pgm(&p8).unwrap();
        assert_eq!(SonarImage::read_pgm(&p8).unwrap(), img);
        let raw = std::fs::read(&p8).unwrap();
        assert!(raw.starts_with(b"P5"));

        let p16 = dir.path().join("b.pgm");
        let img = SonarImage::new(2, 2, 65535, vec![0, 300, 65535, 4096]).unwrap();
        img.write_pgm(&p16).unwrap();
        assert_eq!(SonarImage::read_pgm(&p16).unwrap(), img);
    }

    #[test]
    fn rejects_ascii_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        std::fs::write(&p, b"P2\n2 1\n255\n0 1\n").unwrap();
        assert!(SonarImage::read_pgm(&p).is_err());
    }

    #[test]
    fn crop_normalizes() {
        let img = SonarImage::new(3, 3, 255, (0..9).map(|v| v * 10).collect()).unwrap();
        let c = img
            .normalized_crop(&BoundingBox {
                x: 1,
                y: 1,
                w: 2,
                h: 2,
            })
            .unwrap();
        assert_eq!(
            c,
            vec![40.0 / 255.0, 50.0 / 255.0, 70.0 / 255.0, 80.0 / 255.0]
        );
        assert!(img
            .normalized_crop(&BoundingBox {
                x: 2,
                y: 2,
                w: 2,
                h: 2
            })
            .is_err());
    }

    #[test]
    fn validates_construction() {
        assert!(SonarImage::new(2, 2, 100, vec![0; 4]).is_err());
        assert!(SonarImage::new(2, 2, 255, vec![0; 3]).is_err());
        assert!(SonarImage::new(2, 2, 255, vec![0, 0, 0, 256]).is_err());
    }
}
