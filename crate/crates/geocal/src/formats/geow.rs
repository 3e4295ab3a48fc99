//! `GEOW1` classifier checkpoints.
//!
//! Layout: magic, version byte, `u32` input dim, hidden dim (0 for a linear
//! head), classes; then every parameter as `f64`, layer by layer, weight
//! (row-major, `out × in`) before bias.

use std::path::Path;

use geocal_core::{Architecture, ClassifierParams};

use super::{read_file, write_file, Reader, Writer};
use crate::error::{GeocalError, Result};

pub const MAGIC: &str = "GEOW1";
pub const VERSION: u8 = 1;

pub fn encode_params(params: &ClassifierParams) -> Vec<u8> {
    let arch = params.arch();
    let mut w = Writer::default();
    w.bytes(MAGIC.as_bytes());
    w.u8(VERSION);
    w.u32(arch.input_dim);
    w.u32(arch.hidden_dim);
    w.u32(arch.num_classes);
    w.f64s(&params.flatten());
    w.0
}

pub fn decode_params(bytes: &[u8]) -> Result<ClassifierParams> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u8()?;
    if version != VERSION {
        return Err(GeocalError::UnsupportedVersion { format: MAGIC, version });
    }
    let arch = Architecture { input_dim: r.usize32()?, hidden_dim: r.usize32()?, num_classes: r.usize32()? };
    let flat = r.f64s(arch.num_params())?;
    r.finish()?;
    Ok(ClassifierParams::from_flat(arch, &flat)?)
}

pub fn load_params(path: impl AsRef<Path>) -> Result<ClassifierParams> {
    decode_params(&read_file(path.as_ref())?)
}

pub fn save_params(params: &ClassifierParams, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_params(params))
}
