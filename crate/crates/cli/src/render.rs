//! Heatmap image export: grayscale input, heatmap and binary mask as PGM,
//! and a red-channel overlay as PPM.

use std::path::Path;

use gradfaith::faithfulness::BinaryMask;
use gradfaith::pnm::{quantize, write_pgm, write_ppm};
use gradfaith::Tensor;

use crate::error::{CliError, CliResult};

/// Weight of the heatmap in the overlay's red channel.
pub const OVERLAY_BETA: f64 = 0.5;

/// Interleaved RGB overlay: red = `(1−β)·gray + β·heat`, green = blue =
/// `(1−β)·gray`, each rounded to 8 bits.
pub fn overlay(gray: &[f64], heat: &[f64]) -> Vec<u8> {
    let b = OVERLAY_BETA;
    gray.iter()
        .zip(heat)
        .flat_map(|(&g, &h)| {
            let base = quantize((1.0 - b) * g);
            [quantize((1.0 - b) * g + b * h), base, base]
        })
        .collect()
}

pub fn gray_levels(values: &[f64]) -> Vec<u8> {
    values.iter().map(|&v| quantize(v)).collect()
}

pub fn mask_levels(mask: &BinaryMask) -> Vec<u8> {
    mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect()
}

/// The first channel of a `C×H×W` image.
pub fn first_channel(image: &Tensor) -> CliResult<(usize, usize, &[f64])> {
    match image.shape() {
        &[_, h, w] => Ok((h, w, &image.data()[..h * w])),
        other => Err(CliError::Usage(format!("expected a C×H×W image, got shape {other:?}"))),
    }
}

pub fn save_pgm(path: &Path, width: usize, height: usize, levels: &[u8]) -> CliResult<()> {
    write_pgm(path, width, height, levels).map_err(CliError::file(path))
}

pub fn save_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> CliResult<()> {
    write_ppm(path, width, height, rgb).map_err(CliError::file(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_heat_leaves_a_darkened_gray_image() {
        let gray = [0.0, 0.3, 0.8, 1.0];
        let rgb = overlay(&gray, &[0.0; 4]);
        for (px, &g) in rgb.chunks(3).zip(&gray) {
            let base = quantize(0.5 * g);
            assert_eq!(px, [base, base, base]);
        }
    }

    #[test]
    fn full_heat_adds_half_to_red() {
        let rgb = overlay(&[0.2], &[1.0]);
        assert_eq!(rgb, vec![quantize(0.6), quantize(0.1), quantize(0.1)]);
    }
}
