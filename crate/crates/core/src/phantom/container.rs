//! `GFDS` dataset container.
//!
//! All integers little-endian:
//!
//! ```text
//! "GFDS"                      magic
//! u32                         version (1)
//! u32, u32                    image height H, width W
//! u32                         sample count
//! per sample:
//!   u64                       id
//!   u8                        label (0 normal, 1 benign, 2 malignant)
//!   f64 × H·W                 pixels, row-major
//!   u32                       mask run count
//!   u32 × runs                run lengths, alternating, starting with unset pixels
//! u32                         CRC-32 of everything above
//! ```

use std::path::Path;

use super::{Dataset, Label, Sample};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::faithfulness::BinaryMask;
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 4] = b"GFDS";
pub const DATASET_VERSION: u32 = 1;

pub fn encode_dataset(dataset: &Dataset) -> Result<Vec<u8>> {
    let mut w = Writer::new();
    w.bytes(DATASET_MAGIC);
    w.u32(DATASET_VERSION);
    w.len_u32(dataset.height())?;
    w.len_u32(dataset.width())?;
    w.len_u32(dataset.len())?;
    for s in dataset.samples() {
        w.u64(s.id);
        w.u8(s.label.index() as u8);
        for &v in s.image.data() {
            w.f64(v);
        }
        let runs = s.mask.runs();
        w.len_u32(runs.len())?;
        for r in runs {
            w.u32(r);
        }
    }
    Ok(w.finish_with_crc())
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    r.magic(DATASET_MAGIC)?;
    let version_at = r.offset();
    let version = r.u32("version")?;
    if version != DATASET_VERSION {
        return Err(Error::format(
            version_at,
            format!("unsupported dataset version {version}"),
        ));
    }
    let dims_at = r.offset();
    let height = r.u32("height")? as usize;
    let width = r.u32("width")? as usize;
    if height == 0 || width == 0 {
        return Err(Error::format(
            dims_at,
            format!("image size {height}×{width} has a zero dimension"),
        ));
    }
    let count = r.u32("sample count")? as usize;
    let mut samples = Vec::new();
    for _ in 0..count {
        let id = r.u64("sample id")?;
        let label_at = r.offset();
        let label =
            Label::from_index(r.u8("label")? as usize).ok_or_else(|| Error::format(label_at, "label outside 0..=2"))?;
        let pixels = r.f64s(height * width, "pixels")?;
        let runs_at = r.offset();
        let n_runs = r.u32("mask run count")? as usize;
        let runs = (0..n_runs).map(|_| r.u32("mask run")).collect::<Result<Vec<_>>>()?;
        let mask = BinaryMask::from_runs(height, width, &runs)
            .map_err(|e| Error::format(runs_at, format!("sample {id}: {e}")))?;
        samples.push(Sample {
            id,
            label,
            image: Tensor::new([1, height, width], pixels)?,
            mask,
        });
    }
    let end = r.offset();
    r.finish()?;
    Dataset::new(height, width, samples).map_err(|e| Error::format(end, e.to_string()))
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, encode_dataset(dataset)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate, PhantomConfig};

    fn data() -> Dataset {
        generate(
            &PhantomConfig {
                size: 32,
                per_class: 2,
                benign_radius: (2.0, 3.0),
                malignant_radius: (4.0, 5.0),
                ..Default::default()
            },
            9,
        )
        .unwrap()
    }

    #[test]
    fn round_trips_bitwise() {
        let d = data();
        let bytes = encode_dataset(&d).unwrap();
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(back, d);
        assert_eq!(encode_dataset(&back).unwrap(), bytes);
    }

    #[test]
    fn empty_dataset_round_trips() {
        let d = Dataset::new(4, 5, vec![]).unwrap();
        let back = decode_dataset(&encode_dataset(&d).unwrap()).unwrap();
        assert_eq!((back.height(), back.width(), back.len()), (4, 5, 0));
    }

    #[test]
    fn corruption_is_a_format_error() {
        let bytes = encode_dataset(&data()).unwrap();
        match decode_dataset(&bytes[..bytes.len() / 2]) {
            Err(Error::Format { offset, .. }) => assert!(offset > 0 && offset <= bytes.len() as u64 / 2),
            other => panic!("{other:?}"),
        }
        let mut flipped = bytes.clone();
        flipped[100] ^= 1;
        assert!(matches!(decode_dataset(&flipped), Err(Error::Format { .. })));
        assert!(matches!(
            decode_dataset(b"GFCK\x01\0\0\0"),
            Err(Error::Format { offset: 0, .. })
        ));
    }
}
