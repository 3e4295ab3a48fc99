//! Binary artifact formats. All integers and floats are little-endian.
//!
//! | magic   | contents                        |
//! |---------|---------------------------------|
//! | `GEOB1` | embedding container             |
//! | `GEOS1` | shape bank / knowledge base     |
//! | `GEOU1` | one client's statistics upload  |
//! | `GEOW1` | classifier checkpoint           |

pub mod geob;
pub mod geos;
pub mod geou;
pub mod geow;

use std::fs;
use std::path::Path;

use crate::error::{GeocalError, Result};

pub use geob::{load_container, save_container, Container, LoadOptions};
pub use geos::{decode_bank, encode_bank, load_bank, save_bank};
pub use geou::{decode_upload, encode_upload, load_upload, save_upload};
pub use geow::{decode_params, encode_params, load_params, save_params};

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| GeocalError::io(path, e))
}

/// Writes `bytes`, creating parent directories as needed.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| GeocalError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| GeocalError::io(path, e))
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(GeocalError::TruncatedFile {
            expected: self.pos.saturating_add(n),
            found: self.buf.len(),
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub(crate) fn magic(&mut self, magic: &'static str) -> Result<()> {
        match self.buf.get(..magic.len()) {
            Some(m) if m == magic.as_bytes() => {
                self.pos = magic.len();
                Ok(())
            }
            _ => Err(GeocalError::BadMagic { expected: magic }),
        }
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn usize32(&mut self) -> Result<usize> {
        self.u32().map(|v| v as usize)
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| GeocalError::Header("length overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    /// Errors unless every byte was consumed.
    pub(crate) fn finish(self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(GeocalError::DimensionMismatch { expected: self.pos, found: self.buf.len() })
        }
    }
}

#[derive(Default)]
pub(crate) struct Writer(pub(crate) Vec<u8>);

impl Writer {
    pub(crate) fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }

    pub(crate) fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    pub(crate) fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("value fits in u32");
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}
