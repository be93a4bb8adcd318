//! Binary netpbm images: PGM (`P5`, grayscale) and PPM (`P6`, RGB).
//!
//! The reader accepts any maxval in 1..=65535 (two big-endian bytes per
//! sample above 255) and `#` comments in the header; the writer always emits
//! maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PnmKind {
    /// `P5`, one sample per pixel.
    Gray,
    /// `P6`, three samples per pixel.
    Rgb,
}

impl PnmKind {
    pub fn channels(self) -> usize {
        match self {
            PnmKind::Gray => 1,
            PnmKind::Rgb => 3,
        }
    }
}

/// A decoded image with raw integer samples in row-major, interleaved order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PnmImage {
    pub kind: PnmKind,
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

impl PnmImage {
    /// Samples divided by maxval.
    pub fn to_unit(&self) -> Vec<f64> {
        let m = f64::from(self.maxval);
        self.samples.iter().map(|&s| f64::from(s) / m).collect()
    }
}

/// Maps `v ∈ [0,1]` to the nearest 8-bit level; out-of-range values clamp.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(start as u64, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format(start as u64, format!("{what} out of range")))
    }
}

/// Parses a `P5` or `P6` image.
pub fn decode(bytes: &[u8]) -> Result<PnmImage> {
    let kind = match bytes.get(..2) {
        Some(b"P5") => PnmKind::Gray,
        Some(b"P6") => PnmKind::Rgb,
        _ => return Err(Error::format(0, "not a binary PGM/PPM (expected P5 or P6)")),
    };
    let mut h = Header { bytes, pos: 2 };
    if !bytes.get(2).is_some_and(|b| b.is_ascii_whitespace() || *b == b'#') {
        return Err(Error::format(2, "expected whitespace after magic"));
    }
    let width = h.number("width")? as usize;
    let height = h.number("height")? as usize;
    let maxval_at = h.pos;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::format(
            maxval_at as u64,
            format!("degenerate size {width}×{height}"),
        ));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(
            maxval_at as u64,
            format!("maxval {maxval} outside 1..=65535"),
        ));
    }
    if !bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::format(
            h.pos as u64,
            "expected a single whitespace before the raster",
        ));
    }
    let start = h.pos + 1;
    let count = width * height * kind.channels();
    let wide = maxval > 255;
    let need = count * if wide { 2 } else { 1 };
    let raster = bytes.get(start..start + need).ok_or_else(|| {
        Error::format(
            bytes.len() as u64,
            format!("raster truncated: need {need} bytes from offset {start}"),
        )
    })?;
    let samples: Vec<u16> = if wide {
        raster
            .chunks_exact(2)
            .map(|p| u16::from_be_bytes([p[0], p[1]]))
            .collect()
    } else {
        raster.iter().map(|&b| u16::from(b)).collect()
    };
    if let Some(i) = samples.iter().position(|&s| u32::from(s) > maxval) {
        let offset = start + i * if wide { 2 } else { 1 };
        return Err(Error::format(offset as u64, format!("sample exceeds maxval {maxval}")));
    }
    Ok(PnmImage {
        kind,
        width,
        height,
        maxval: maxval as u16,
        samples,
    })
}

pub fn read(path: &Path) -> Result<PnmImage> {
    decode(&fs::read(path)?)
}

fn encode(magic: &str, width: usize, height: usize, channels: usize, data: &[u8]) -> Result<Vec<u8>> {
    if width == 0 || height == 0 || data.len() != width * height * channels {
        return Err(Error::shape(format!(
            "{magic} raster of {} bytes does not match {width}×{height}×{channels}",
            data.len()
        )));
    }
    let mut out = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    Ok(out)
}

/// `P5`, maxval 255.
pub fn encode_pgm(width: usize, height: usize, data: &[u8]) -> Result<Vec<u8>> {
    encode("P5", width, height, 1, data)
}

/// `P6`, maxval 255, interleaved RGB.
pub fn encode_ppm(width: usize, height: usize, rgb: &[u8]) -> Result<Vec<u8>> {
    encode("P6", width, height, 3, rgb)
}

pub fn write_pgm(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    fs::write(path, encode_pgm(width, height, data)?)?;
    Ok(())
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    fs::write(path, encode_ppm(width, height, rgb)?)?;
    Ok(())
}
