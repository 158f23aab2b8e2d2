//! Versioned binary graph snapshot (`.fpg`).
//!
//! All integers little-endian. Layout:
//!
//! ```text
//! magic        4 bytes  "FPG1"
//! version      u32      = 1
//! schema_hash  32 bytes SHA-256 of the schema's canonical JSON
//! schema_len   u32, then schema_len bytes of canonical schema JSON
//! node_count   u64
//! node table   node_count records:
//!     id        str            (u32 length + UTF-8 bytes)
//!     ts        i64
//!     label     u8             0 = false, 1 = true, 2 = absent
//!     attrs     one entry per schema attribute, in schema order:
//!                 tag u8       0 = key absent, 1 = explicit null, 2 = value
//!                 value str    only when tag = 2
//!     features  u32 count (0xFFFF_FFFF = absent), then count f64
//! entry_count  u64      = 2 * edge_count
//! offsets      (node_count + 1) u64
//! neighbors    entry_count u32
//! weights      entry_count f64
//! checksum     u64      FNV-1a over every preceding byte
//! ```
//!
//! Identical graphs produce identical bytes. Inverted-index buckets are not
//! stored; they are rebuilt from the node table on load.

use std::io::{Read, Write};
use std::path::Path;

use crate::config::AttributeSchema;
use crate::graph::{GraphError, Transaction, TransactionGraph};
use crate::hash::{self, Fnv1a};

pub const MAGIC: &[u8; 4] = b"FPG1";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("snapshot I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a graph snapshot (bad magic)")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    Version(u32),
    #[error("schema hash mismatch")]
    SchemaHash,
    #[error("checksum mismatch")]
    Checksum,
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

/// Serializes a graph to snapshot bytes.
pub fn to_bytes(g: &TransactionGraph) -> Vec<u8> {
    let schema = g.schema();
    let schema_json = schema.canonical_json();
    let mut e = Encoder { buf: Vec::new() };
    e.buf.extend_from_slice(MAGIC);
    e.u32(VERSION);
    e.buf.extend_from_slice(&hash::sha256(schema_json.as_bytes()));
    e.str(&schema_json);

    e.u64(g.len() as u64);
    for tx in g.nodes() {
        e.str(&tx.id);
        e.i64(tx.ts);
        e.u8(match tx.label {
            Some(false) => 0,
            Some(true) => 1,
            None => 2,
        });
        for attr in &schema.attributes {
            match tx.attrs.get(attr) {
                None => e.u8(0),
                Some(None) => e.u8(1),
                Some(Some(v)) => {
                    e.u8(2);
                    e.str(v);
                }
            }
        }
        match &tx.features {
            None => e.u32(u32::MAX),
            Some(f) => {
                e.u32(f.len() as u32);
                f.iter().for_each(|&x| e.f64(x));
            }
        }
    }

    let (offsets, neighbors, weights) = g.csr();
    e.u64(neighbors.len() as u64);
    offsets.iter().for_each(|&o| e.u64(o as u64));
    neighbors.iter().for_each(|&j| e.u32(j));
    weights.iter().for_each(|&w| e.f64(w));

    let mut h = Fnv1a::default();
    h.update(&e.buf);
    e.u64(h.finish());
    e.buf
}

struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SnapshotError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| SnapshotError::Corrupt("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, SnapshotError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, SnapshotError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64, SnapshotError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, SnapshotError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, SnapshotError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| SnapshotError::Corrupt(e.to_string()))
    }
    fn len(&mut self) -> Result<usize, SnapshotError> {
        let n = self.u64()?;
        usize::try_from(n)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| SnapshotError::Corrupt(format!("implausible length {n}")))
    }
}

/// Parses snapshot bytes back into a graph.
pub fn from_bytes(bytes: &[u8]) -> Result<TransactionGraph, SnapshotError> {
    if bytes.len() < 8 + MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let mut h = Fnv1a::default();
    h.update(body);
    if h.finish() != u64::from_le_bytes(tail.try_into().unwrap()) {
        return Err(SnapshotError::Checksum);
    }

    let mut d = Decoder { buf: body, pos: 4 };
    let version = d.u32()?;
    if version != VERSION {
        return Err(SnapshotError::Version(version));
    }
    let expected_hash: [u8; 32] = d.take(32)?.try_into().unwrap();
    let schema_json = d.str()?;
    if hash::sha256(schema_json.as_bytes()) != expected_hash {
        return Err(SnapshotError::SchemaHash);
    }
    let schema: AttributeSchema =
        serde_json::from_str(&schema_json).map_err(|e| SnapshotError::Corrupt(e.to_string()))?;

    let n = d.len()?;
    let mut nodes = Vec::with_capacity(n);
    for _ in 0..n {
        let mut tx = Transaction::new(d.str()?, d.i64()?);
        tx.label = match d.u8()? {
            0 => Some(false),
            1 => Some(true),
            2 => None,
            t => return Err(SnapshotError::Corrupt(format!("label tag {t}"))),
        };
        for attr in &schema.attributes {
            match d.u8()? {
                0 => {}
                1 => {
                    tx.attrs.insert(attr.clone(), None);
                }
                2 => {
                    tx.attrs.insert(attr.clone(), Some(d.str()?));
                }
                t => return Err(SnapshotError::Corrupt(format!("attr tag {t}"))),
            }
        }
        let count = d.u32()?;
        if count != u32::MAX {
            let f = (0..count).map(|_| d.f64()).collect::<Result<Vec<_>, _>>()?;
            tx.features = Some(f);
        }
        nodes.push(tx);
    }

    let entries = d.len()?;
    let offsets = (0..=n).map(|_| d.u64().map(|o| o as usize)).collect::<Result<Vec<_>, _>>()?;
    let neighbors = (0..entries).map(|_| d.u32()).collect::<Result<Vec<_>, _>>()?;
    let weights = (0..entries).map(|_| d.f64()).collect::<Result<Vec<_>, _>>()?;
    if d.pos != body.len() {
        return Err(SnapshotError::Corrupt("trailing bytes".into()));
    }
    let monotone = offsets.windows(2).all(|w| w[0] <= w[1]);
    if offsets.first() != Some(&0) || offsets.last() != Some(&entries) || !monotone {
        return Err(SnapshotError::Corrupt("offsets".into()));
    }
    if neighbors.iter().any(|&j| j as usize >= n) {
        return Err(SnapshotError::Corrupt("neighbor index out of range".into()));
    }
    Ok(TransactionGraph::from_parts(schema, nodes, offsets, neighbors, weights)?)
}

pub fn write(g: &TransactionGraph, path: impl AsRef<Path>) -> Result<(), SnapshotError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&to_bytes(g))?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<TransactionGraph, SnapshotError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    from_bytes(&buf)
}
