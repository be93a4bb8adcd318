//! `GFCK` checkpoint container.
//!
//! All integers little-endian:
//!
//! ```text
//! "GFCK"                      magic
//! u32                         version (1)
//! u64                         config fingerprint (FNV-1a of the descriptor)
//! u64                         model seed
//! u32 len, bytes              config descriptor (JSON)
//! u32                         tensor count
//! per tensor:
//!   u32 len, bytes            qualified name, e.g. "conv1.weight"
//!   u32                       rank
//!   u32 × rank                dims
//!   f64 × product(dims)       values, row-major
//! u32                         CRC-32 of everything above
//! ```

use std::path::Path;

use super::config::ModelConfig;
use super::params::{fnv1a64, ModelParams};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_params(params: &ModelParams) -> Result<Vec<u8>> {
    let descriptor = params.config().descriptor();
    let mut w = Writer::new();
    w.bytes(CHECKPOINT_MAGIC);
    w.u32(CHECKPOINT_VERSION);
    w.u64(fnv1a64(descriptor.as_bytes()));
    w.u64(params.seed());
    w.len_u32(descriptor.len())?;
    w.bytes(descriptor.as_bytes());
    let tensors = params.named_tensors();
    w.len_u32(tensors.len())?;
    for (name, t) in tensors {
        w.len_u32(name.len())?;
        w.bytes(name.as_bytes());
        w.len_u32(t.rank())?;
        for &d in t.shape() {
            w.len_u32(d)?;
        }
        for &v in t.data() {
            w.f64(v);
        }
    }
    Ok(w.finish_with_crc())
}

pub fn decode_params(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let version_at = r.offset();
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(
            version_at,
            format!("unsupported checkpoint version {version}"),
        ));
    }
    let fingerprint_at = r.offset();
    let fingerprint = r.u64("config fingerprint")?;
    let seed = r.u64("seed")?;
    let descriptor = r.string("config descriptor")?;
    if fnv1a64(descriptor.as_bytes()) != fingerprint {
        return Err(Error::format(
            fingerprint_at,
            "config fingerprint does not match descriptor",
        ));
    }
    let config = ModelConfig::from_descriptor(&descriptor)?;
    let expected = ModelParams::expected_shapes(&config)?;

    let count_at = r.offset();
    let count = r.u32("tensor count")? as usize;
    let total: usize = expected.iter().map(Vec::len).sum();
    if count != total {
        return Err(Error::format(count_at, format!("{count} tensors, model needs {total}")));
    }
    let mut layers = Vec::with_capacity(expected.len());
    for group in &expected {
        let mut tensors = Vec::with_capacity(group.len());
        for (want_name, want_shape) in group {
            let at = r.offset();
            let name = r.string("tensor name")?;
            if &name != want_name {
                return Err(Error::format(
                    at,
                    format!("expected tensor {want_name:?}, found {name:?}"),
                ));
            }
            let rank = r.u32("rank")? as usize;
            let dims_at = r.offset();
            let dims = (0..rank)
                .map(|_| r.u32("dimension").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            if &dims != want_shape {
                return Err(Error::format(
                    dims_at,
                    format!("tensor {name:?} has shape {dims:?}, expected {want_shape:?}"),
                ));
            }
            let n = dims.iter().product();
            let values = r.f64s(n, "tensor values")?;
            tensors.push(Tensor::new(dims, values)?);
        }
        layers.push(tensors);
    }
    r.finish()?;
    ModelParams::from_tensors(&config, seed, layers)
}

pub fn save_params(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_params(params)?)?;
    Ok(())
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ModelParams> {
    decode_params(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::PRESETS;

    #[test]
    fn round_trip_is_bitwise() {
        for name in PRESETS {
            let c = ModelConfig::preset(name, 16).unwrap();
            let p = ModelParams::init(&c, 42).unwrap();
            let bytes = encode_params(&p).unwrap();
            assert_eq!(&bytes[..4], b"GFCK");
            let q = decode_params(&bytes).unwrap();
            assert_eq!(p, q);
            assert_eq!(encode_params(&q).unwrap(), bytes);
        }
    }

    #[test]
    fn truncation_reports_offset() {
        let c = ModelConfig::preset("cnn-a", 16).unwrap();
        let bytes = encode_params(&ModelParams::init(&c, 1).unwrap()).unwrap();
        let cut = &bytes[..bytes.len() / 2];
        match decode_params(cut) {
            Err(Error::Format { offset, .. }) => assert!(offset > 0 && offset <= cut.len() as u64),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bit_flip_fails_checksum() {
        let c = ModelConfig::preset("cnn-a", 16).unwrap();
        let mut bytes = encode_params(&ModelParams::init(&c, 1).unwrap()).unwrap();
        let n = bytes.len();
        bytes[n - 20] ^= 0x01;
        let err = decode_params(&bytes).unwrap_err();
        assert!(err.to_string().contains("CRC-32"), "{err}");
    }

    #[test]
    fn bad_magic() {
        let err = decode_params(b"NOPE\0\0\0\0\0\0\0\0").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }));
    }
}
