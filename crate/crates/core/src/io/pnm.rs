//! Binary Netpbm images: PGM ("P5") and PPM ("P6"), 8-bit (maxval 255) only.
//!
//! Writers emit the header `P5\n<width> <height>\n255\n` (or `P6`) followed by
//! the raw raster. Readers accept `#` comments and any whitespace between
//! header tokens, and exactly one whitespace byte before the raster.

use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{Frame, LabelMap, Mask2D};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pnm {
    pub height: usize,
    pub width: usize,
    /// 1 for PGM, 3 for PPM.
    pub channels: usize,
    pub samples: Vec<u8>,
}

impl Pnm {
    pub fn gray(height: usize, width: usize, samples: Vec<u8>) -> Self {
        debug_assert_eq!(samples.len(), height * width);
        Self { height, width, channels: 1, samples }
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.samples);
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let channels = match bytes.get(..2) {
            Some(b"P5") => 1,
            Some(b"P6") => 3,
            _ => return Err(Error::format(path, "bad magic bytes (expected P5 or P6)")),
        };
        let mut pos = 2;
        let mut fields = [0usize; 3];
        for field in fields.iter_mut() {
            // Skip whitespace and comments.
            loop {
                match bytes.get(pos) {
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(b'#') => {
                        while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                            pos += 1;
                        }
                    }
                    _ => break,
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
                pos += 1;
            }
            if start == pos {
                return Err(Error::format(path, "truncated or malformed header"));
            }
            *field = std::str::from_utf8(&bytes[start..pos])
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::format(path, "header value out of range"))?;
        }
        let [width, height, maxval] = fields;
        if maxval != 255 {
            return Err(Error::format(path, format!("maxval {maxval} unsupported (must be 255)")));
        }
        if width == 0 || height == 0 {
            return Err(Error::format(path, "zero image dimension"));
        }
        if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
            return Err(Error::format(path, "missing whitespace after header"));
        }
        pos += 1;
        let expected = width * height * channels;
        let raster = &bytes[pos..];
        if raster.len() != expected {
            return Err(Error::format(
                path,
                format!("raster has {} bytes, expected {expected}", raster.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            samples: raster.to_vec(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn to_frame(&self, path: &Path) -> Result<Frame> {
        Frame::from_u8(self.height, self.width, self.channels, &self.samples)
            .map_err(|e| Error::format(path, e.to_string()))
    }

    /// Nonzero samples are foreground.
    pub fn to_mask(&self, path: &Path) -> Result<Mask2D> {
        if self.channels != 1 {
            return Err(Error::format(path, "masks must be PGM (P5)"));
        }
        Mask2D::new(self.height, self.width, self.samples.iter().map(|&v| v != 0).collect())
            .map_err(|e| Error::format(path, e.to_string()))
    }

    /// Gray level is the class id.
    pub fn to_label_map(&self, path: &Path, num_classes: u32) -> Result<LabelMap> {
        if self.channels != 1 {
            return Err(Error::format(path, "label maps must be PGM (P5)"));
        }
        LabelMap::new(
            self.height,
            self.width,
            self.samples.iter().map(|&v| v as u32).collect(),
            num_classes,
        )
        .map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn from_frame(frame: &Frame) -> Self {
        Self {
            height: frame.height(),
            width: frame.width(),
            channels: frame.channels(),
            samples: frame.to_u8(),
        }
    }

    /// Foreground as 255, background as 0.
    pub fn from_mask(mask: &Mask2D) -> Self {
        Self::gray(
            mask.height(),
            mask.width(),
            mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect(),
        )
    }

    pub fn from_label_map(map: &LabelMap) -> Result<Self> {
        let samples = map
            .labels()
            .iter()
            .map(|&l| u8::try_from(l).map_err(|_| Error::InvalidArgument(format!("class id {l} exceeds 255"))))
            .collect::<Result<Vec<u8>>>()?;
        Ok(Self::gray(map.height(), map.width(), samples))
    }
}

pub fn read_mask(path: &Path) -> Result<Mask2D> {
    Pnm::read(path)?.to_mask(path)
}

pub fn write_mask(path: &Path, mask: &Mask2D) -> Result<()> {
    Pnm::from_mask(mask).write(path)
}

pub fn read_frame(path: &Path) -> Result<Frame> {
    Pnm::read(path)?.to_frame(path)
}

pub fn write_frame(path: &Path, frame: &Frame) -> Result<()> {
    Pnm::from_frame(frame).write(path)
}
