//! `GEOS1` shape banks. Knowledge bases use the same layout, with each
//! entry's mean equal to the class prototype.
//!
//! Layout: magic, version byte, `u32` C, P, m; per class `m·P` eigenvector
//! entries (row per direction), `P` eigenvalues, `P` mean; then `C` `u64`
//! counts; `u32` prototype count followed by, per prototype, `u32` class,
//! `u32` domain (`u32::MAX` when none) and `P` values. Floats are `f64`.

use std::path::Path;

use geocal_core::aggregate::BankEntry;
use geocal_core::{GeometricShape, Prototype, ShapeBank};

use super::{read_file, write_file, Reader, Writer};
use crate::error::{GeocalError, Result};

pub const MAGIC: &str = "GEOS1";
pub const VERSION: u8 = 1;
const NO_DOMAIN: u32 = u32::MAX;

pub fn encode_bank(bank: &ShapeBank) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(MAGIC.as_bytes());
    w.u8(VERSION);
    w.u32(bank.num_classes());
    w.u32(bank.dim());
    w.u32(bank.m());
    for e in bank.entries() {
        w.f64s(e.shape.eigenvectors_flat());
        w.f64s(e.shape.eigenvalues());
        w.f64s(&e.mean);
    }
    for e in bank.entries() {
        w.u64(e.count);
    }
    let protos = bank.prototypes().unwrap_or(&[]);
    w.u32(protos.len());
    for p in protos {
        w.u32(p.class);
        w.0.extend_from_slice(&p.domain.map_or(NO_DOMAIN, |d| d as u32).to_le_bytes());
        w.f64s(&p.vector);
    }
    w.0
}

/// Decodes a bank. A zero prototype count decodes as a bank without
/// prototypes.
pub fn decode_bank(bytes: &[u8]) -> Result<ShapeBank> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u8()?;
    if version != VERSION {
        return Err(GeocalError::UnsupportedVersion { format: MAGIC, version });
    }
    let c = r.usize32()?;
    let p = r.usize32()?;
    let m = r.usize32()?;
    if p == 0 || m > p {
        return Err(GeocalError::Header(format!("invalid dimensions P={p}, m={m}")));
    }
    let mut parts = Vec::with_capacity(c.min(1 << 16));
    for _ in 0..c {
        let vectors = r.f64s(m * p)?;
        let values = r.f64s(p)?;
        let mean = r.f64s(p)?;
        parts.push((GeometricShape::from_parts(p, vectors, values)?, mean));
    }
    let mut entries = Vec::with_capacity(parts.len());
    for (shape, mean) in parts {
        entries.push(BankEntry { shape, mean, count: r.u64()? });
    }
    let k = r.usize32()?;
    let mut protos = Vec::with_capacity(k.min(1 << 16));
    for _ in 0..k {
        let class = r.usize32()?;
        let domain = r.u32()?;
        let mut proto = Prototype::new(class, r.f64s(p)?);
        if domain != NO_DOMAIN {
            proto = proto.with_domain(domain as usize);
        }
        protos.push(proto);
    }
    r.finish()?;
    Ok(ShapeBank::new(p, m, entries, (!protos.is_empty()).then_some(protos))?)
}

pub fn load_bank(path: impl AsRef<Path>) -> Result<ShapeBank> {
    decode_bank(&read_file(path.as_ref())?)
}

pub fn save_bank(bank: &ShapeBank, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_bank(bank))
}
