//! Little-endian binary helpers for the checkpoint and dataset containers.

use crate::error::{Error, Result};

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn len_u32(&mut self, n: usize) -> Result<()> {
        let v = u32::try_from(n).map_err(|_| Error::input(format!("length {n} exceeds u32")))?;
        self.u32(v);
        Ok(())
    }

    /// Appends the CRC-32 of everything written so far.
    pub fn finish_with_crc(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.u32(crc);
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Reader over a buffer whose last four bytes are a CRC-32 trailer.
    /// Structural parsing happens before the checksum is compared (in
    /// [`Reader::finish`]) so a truncated file reports where the data ran out.
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        // The last four bytes are the checksum, never payload.
        let body_end = self.buf.len().saturating_sub(4);
        if self.pos + n > body_end {
            return Err(Error::format(
                self.pos as u64,
                format!("unexpected end of data reading {what} ({n} bytes needed)"),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(Error::format(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        Ok(())
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.saturating_mul(8), what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn string(&mut self, what: &str) -> Result<String> {
        let start = self.offset();
        let n = self.u32(what)? as usize;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::format(start, format!("{what} is not UTF-8")))
    }

    /// Checks that the body is fully consumed and the CRC-32 trailer matches.
    pub fn finish(self) -> Result<()> {
        let body_end = self.buf.len().saturating_sub(4);
        if self.buf.len() < 4 {
            return Err(Error::format(self.pos as u64, "missing CRC-32 trailer"));
        }
        if self.pos != body_end {
            return Err(Error::format(
                self.pos as u64,
                format!("{} unexpected trailing bytes", body_end - self.pos),
            ));
        }
        let stored = u32::from_le_bytes(self.buf[body_end..].try_into().unwrap());
        let actual = crc32fast::hash(&self.buf[..body_end]);
        if stored != actual {
            return Err(Error::format(
                body_end as u64,
                format!("CRC-32 mismatch: stored {stored:08x}, computed {actual:08x}"),
            ));
        }
        Ok(())
    }
}
