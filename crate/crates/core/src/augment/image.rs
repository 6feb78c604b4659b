//! Grayscale image container and 8-bit PGM/PNG codecs.

use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use crate::error::{Error, Result};

/// Single-channel image with values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::Shape { expected: width * height, actual: data.len() });
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Builds an image from arbitrary samples, clamping into `[0, 1]`.
    pub(crate) fn from_clamped(width: usize, height: usize, data: impl IntoIterator<Item = f64>) -> Self {
        let data: Vec<f64> = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        debug_assert_eq!(data.len(), width * height);
        GrayImage { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(width, height, bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }

    /// Quantizes each value to `round(v · 255)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v * 255.0).round() as u8).collect()
    }

    /// Encodes as binary PGM (P5, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.to_bytes());
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let mut reader = BufReader::new(bytes);
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            let mut line = String::new();
            if reader.read_line(&mut line)? == 0 {
                return Err(Error::Format("truncated PGM header".into()));
            }
            let line = line.split('#').next().unwrap_or("");
            fields.extend(line.split_whitespace().map(str::to_owned));
        }
        if fields[0] != "P5" {
            return Err(Error::Format(format!("unsupported PGM magic {:?}", fields[0])));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM field {s:?}")));
        let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
        }
        let mut raster = vec![0u8; width * height];
        reader.read_exact(&mut raster).map_err(|_| Error::Format("truncated PGM raster".into()))?;
        Self::new(width, height, raster.iter().map(|&b| b as f64 / maxval as f64).collect())
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.to_bytes())
            .ok_or_else(|| Error::Format("image buffer size mismatch".into()))?;
        let mut out = std::io::Cursor::new(Vec::new());
        buf.write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_luma8();
        let (w, h) = img.dimensions();
        Self::from_bytes(w as usize, h as usize, img.as_raw())
    }

    /// Loads a `.pgm` or `.png` file (chosen by extension).
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        match ImageFormat::from_path(path)? {
            ImageFormat::Pgm => Self::from_pgm(&bytes),
            ImageFormat::Png => Self::from_png(&bytes),
        }
    }

    /// Encodes in the format implied by `path`'s extension.
    pub fn encode_for(&self, path: &Path) -> Result<Vec<u8>> {
        match ImageFormat::from_path(path)? {
            ImageFormat::Pgm => Ok(self.to_pgm()),
            ImageFormat::Png => self.to_png(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Png,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("pgm") => Ok(ImageFormat::Pgm),
            Some("png") => Ok(ImageFormat::Png),
            _ => Err(Error::Format(format!("unsupported image extension: {}", path.display()))),
        }
    }
}
