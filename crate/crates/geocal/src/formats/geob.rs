//! `GEOB1` embedding containers.
//!
//! Layout: magic `GEOB1`, version byte `1`, `u32` header length, UTF-8 JSON
//! header, `n·p` `f32` (row-major), `n` `u16` labels, `n` `u16` domains.
//!
//! Header keys: `n`, `p`, `c`, `d` (required), `class_names`, `domain_names`
//! and `row_origin` (optional). `row_origin` holds one code per row:
//! 0 observed, 1 perturbed around an observed row, 2 generated around the
//! prototype identified by the row's (label, domain). Unknown keys are
//! preserved.

use std::path::Path;

use geocal_core::{EmbeddingSet, RowOrigin};
use serde_json::{Map, Value};

use super::{read_file, write_file, Reader, Writer};
use crate::error::{GeocalError, Result};

pub const MAGIC: &str = "GEOB1";
pub const VERSION: u8 = 1;

const KNOWN_KEYS: [&str; 7] = ["n", "p", "c", "d", "class_names", "domain_names", "row_origin"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Scale every row to unit L2 norm after loading.
    pub l2_normalize: bool,
}

/// An embedding set plus any extra header fields it was stored with.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    set: EmbeddingSet,
    extras: Map<String, Value>,
    /// Header bytes as read, reused on save while still equivalent so that
    /// re-saving a loaded file reproduces it exactly.
    raw_header: Option<Vec<u8>>,
}

impl Container {
    pub fn new(set: EmbeddingSet) -> Self {
        Self { set, extras: Map::new(), raw_header: None }
    }

    /// Adds an extra header field. Reserved keys are ignored.
    pub fn with_extra(mut self, key: &str, value: Value) -> Self {
        if !KNOWN_KEYS.contains(&key) {
            self.extras.insert(key.to_owned(), value);
        }
        self
    }

    pub fn set(&self) -> &EmbeddingSet {
        &self.set
    }

    pub fn into_set(self) -> EmbeddingSet {
        self.set
    }

    pub fn extras(&self) -> &Map<String, Value> {
        &self.extras
    }

    fn header(&self) -> Value {
        let s = &self.set;
        let mut h = self.extras.clone();
        h.insert("n".into(), s.len().into());
        h.insert("p".into(), s.dim().into());
        h.insert("c".into(), s.num_classes().into());
        h.insert("d".into(), s.num_domains().into());
        if let Some(names) = s.class_names() {
            h.insert("class_names".into(), names.into());
        }
        if let Some(names) = s.domain_names() {
            h.insert("domain_names".into(), names.into());
        }
        if let Some(origins) = s.origins() {
            h.insert("row_origin".into(), origins.iter().map(|o| o.code()).collect::<Vec<_>>().into());
        }
        Value::Object(h)
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = self.header();
        let raw = match &self.raw_header {
            Some(raw) if serde_json::from_slice::<Value>(raw).ok().as_ref() == Some(&header) => raw.clone(),
            _ => serde_json::to_vec(&header).expect("JSON value serializes"),
        };
        let s = &self.set;
        let mut w = Writer(Vec::with_capacity(10 + raw.len() + s.len() * (4 * s.dim() + 4)));
        w.bytes(MAGIC.as_bytes());
        w.u8(VERSION);
        w.u32(raw.len());
        w.bytes(&raw);
        for v in s.data() {
            w.bytes(&v.to_le_bytes());
        }
        for v in s.labels().iter().chain(s.domains()) {
            w.bytes(&v.to_le_bytes());
        }
        w.0
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        let version = r.u8()?;
        if version != VERSION {
            return Err(GeocalError::UnsupportedVersion { format: MAGIC, version });
        }
        let len = r.usize32()?;
        let raw = r.take(len)?;
        let mut extras: Map<String, Value> =
            serde_json::from_slice(raw).map_err(|e| GeocalError::Header(e.to_string()))?;
        let n = take_count(&mut extras, "n")?;
        let p = take_count(&mut extras, "p")?;
        let c = take_count(&mut extras, "c")?;
        let d = take_count(&mut extras, "d")?;
        let class_names = take_names(&mut extras, "class_names", c)?;
        let domain_names = take_names(&mut extras, "domain_names", d)?;
        let origins = take_origins(&mut extras, n)?;

        let floats = n.checked_mul(p).ok_or_else(|| GeocalError::Header("n·p overflows".into()))?;
        let payload = floats
            .checked_mul(4)
            .and_then(|b| b.checked_add(n.checked_mul(4)?))
            .ok_or_else(|| GeocalError::Header("payload size overflows".into()))?;
        let rest = &bytes[10 + len..];
        if rest.len() < payload {
            return Err(GeocalError::TruncatedFile { expected: 10 + len + payload, found: bytes.len() });
        }
        if rest.len() > payload {
            return Err(GeocalError::DimensionMismatch { expected: 10 + len + payload, found: bytes.len() });
        }
        let (data, tail) = rest.split_at(floats * 4);
        let (labels, domains) = tail.split_at(n * 2);
        let data = data.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
        let u16s = |b: &[u8]| b.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect::<Vec<_>>();

        let mut set = EmbeddingSet::new(p, data, u16s(labels), u16s(domains), c, d)?;
        if let Some(names) = class_names {
            set = set.with_class_names(names)?;
        }
        if let Some(names) = domain_names {
            set = set.with_domain_names(names)?;
        }
        if let Some(origins) = origins {
            set = set.with_origins(origins)?;
        }
        Ok(Self { set, extras, raw_header: Some(raw.to_vec()) })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&read_file(path.as_ref())?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.encode())
    }
}

fn take_count(h: &mut Map<String, Value>, key: &str) -> Result<usize> {
    h.remove(key)
        .and_then(|v| v.as_u64())
        .and_then(|v| usize::try_from(v).ok())
        .ok_or_else(|| GeocalError::Header(format!("missing or invalid `{key}`")))
}

fn take_names(h: &mut Map<String, Value>, key: &str, len: usize) -> Result<Option<Vec<String>>> {
    let Some(v) = h.remove(key) else { return Ok(None) };
    let names: Vec<String> = serde_json::from_value(v).map_err(|e| GeocalError::Header(format!("`{key}`: {e}")))?;
    if names.len() != len {
        return Err(GeocalError::Header(format!("`{key}` has {} entries, expected {len}", names.len())));
    }
    Ok(Some(names))
}

fn take_origins(h: &mut Map<String, Value>, n: usize) -> Result<Option<Vec<RowOrigin>>> {
    let Some(v) = h.remove("row_origin") else { return Ok(None) };
    let codes: Vec<u8> = serde_json::from_value(v).map_err(|e| GeocalError::Header(format!("`row_origin`: {e}")))?;
    if codes.len() != n {
        return Err(GeocalError::Header(format!("`row_origin` has {} entries, expected {n}", codes.len())));
    }
    codes
        .into_iter()
        .map(|c| RowOrigin::from_code(c).ok_or_else(|| GeocalError::Header(format!("unknown row origin {c}"))))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

pub fn load_container(path: impl AsRef<Path>, opts: LoadOptions) -> Result<EmbeddingSet> {
    let set = Container::load(path)?.into_set();
    Ok(if opts.l2_normalize { set.l2_normalized() } else { set })
}

pub fn save_container(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    Container::new(set.clone()).save(path)
}
