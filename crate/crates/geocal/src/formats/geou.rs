//! `GEOU1` client uploads.
//!
//! Layout: magic, version byte, `u32` client id, C, P; per class `u64`
//! count, `P` mean and `P·P` covariance (`f64`, row-major); then `u32`
//! domain.

use std::path::Path;

use geocal_core::{ClassStats, ClientUpload, Matrix};

use super::{read_file, write_file, Reader, Writer};
use crate::error::{GeocalError, Result};

pub const MAGIC: &str = "GEOU1";
pub const VERSION: u8 = 1;

pub fn encode_upload(upload: &ClientUpload) -> Vec<u8> {
    let p = upload.dim().unwrap_or(0);
    let mut w = Writer::default();
    w.bytes(MAGIC.as_bytes());
    w.u8(VERSION);
    w.u32(upload.client_id as usize);
    w.u32(upload.num_classes());
    w.u32(p);
    for s in &upload.classes {
        w.u64(s.count);
        w.f64s(&s.mean);
        w.f64s(s.covariance.as_slice());
    }
    w.u32(upload.domain);
    w.0
}

pub fn decode_upload(bytes: &[u8]) -> Result<ClientUpload> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u8()?;
    if version != VERSION {
        return Err(GeocalError::UnsupportedVersion { format: MAGIC, version });
    }
    let client_id = r.u32()?;
    let c = r.usize32()?;
    let p = r.usize32()?;
    let mut classes = Vec::with_capacity(c.min(1 << 16));
    for _ in 0..c {
        let count = r.u64()?;
        let mean = r.f64s(p)?;
        let covariance = Matrix::from_vec(p, p, r.f64s(p * p)?);
        if !mean.iter().all(|v| v.is_finite()) || !covariance.is_finite() {
            return Err(geocal_core::Error::NonFinite.into());
        }
        classes.push(ClassStats { count, mean, covariance });
    }
    let domain = r.usize32()?;
    r.finish()?;
    Ok(ClientUpload::new(client_id, domain, classes)?)
}

pub fn load_upload(path: impl AsRef<Path>) -> Result<ClientUpload> {
    decode_upload(&read_file(path.as_ref())?)
}

pub fn save_upload(upload: &ClientUpload, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_upload(upload))
}
