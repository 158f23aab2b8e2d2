//! Node similarity for propagation discounting.
//!
//! Each present attribute value is hashed (FNV-1a over `name || 0x00 || value`)
//! into one of 2^16 buckets in that attribute's block and set to `sqrt(w_k)`,
//! so two nodes agreeing on attribute `k` contribute exactly `w_k` to the dot
//! product. Dense features, when present, follow the attribute blocks
//! unweighted. Similarity is cosine over these sparse vectors.

use std::collections::HashMap;

use parking_lot::Mutex;

use crate::config::AttributeSchema;
use crate::graph::{Transaction, TransactionGraph};
use crate::hash::Fnv1a;

pub const BUCKETS_PER_ATTRIBUTE: u32 = 1 << 16;

/// Sparse non-zero entries sorted by index, with the cached Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEncoding {
    entries: Vec<(u32, f64)>,
    norm: f64,
}

impl NodeEncoding {
    pub fn from_entries(mut entries: Vec<(u32, f64)>) -> Self {
        entries.retain(|&(_, v)| v != 0.0);
        entries.sort_by_key(|&(i, _)| i);
        let norm = entries.iter().map(|&(_, v)| v * v).sum::<f64>().sqrt();
        Self { entries, norm }
    }

    pub fn from_dense(values: &[f64]) -> Self {
        Self::from_entries(values.iter().enumerate().map(|(i, &v)| (i as u32, v)).collect())
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self::from_entries(self.entries.iter().map(|&(i, v)| (i, v * alpha)).collect())
    }

    pub fn dot(&self, other: &Self) -> f64 {
        let (mut a, mut b) = (self.entries.iter().peekable(), other.entries.iter().peekable());
        let mut acc = 0.0;
        while let (Some(&&(i, x)), Some(&&(j, y))) = (a.peek(), b.peek()) {
            match i.cmp(&j) {
                std::cmp::Ordering::Less => {
                    a.next();
                }
                std::cmp::Ordering::Greater => {
                    b.next();
                }
                std::cmp::Ordering::Equal => {
                    acc += x * y;
                    a.next();
                    b.next();
                }
            }
        }
        acc
    }
}

pub fn attribute_bucket(attr: &str, value: &str) -> u32 {
    let mut h = Fnv1a::default();
    h.update(attr.as_bytes());
    h.update(&[0]);
    h.update(value.as_bytes());
    (h.finish() % BUCKETS_PER_ATTRIBUTE as u64) as u32
}

pub fn encode(t: &Transaction, schema: &AttributeSchema) -> NodeEncoding {
    let mut entries = Vec::with_capacity(schema.len() + t.features.as_ref().map_or(0, Vec::len));
    for (k, name) in schema.attributes.iter().enumerate() {
        if let Some(v) = t.attr(name) {
            let idx = k as u32 * BUCKETS_PER_ATTRIBUTE + attribute_bucket(name, v);
            entries.push((idx, schema.weight_at(k).sqrt()));
        }
    }
    if let Some(features) = &t.features {
        let base = schema.len() as u32 * BUCKETS_PER_ATTRIBUTE;
        entries.extend(features.iter().enumerate().map(|(d, &x)| (base + d as u32, x)));
    }
    NodeEncoding::from_entries(entries)
}

/// Cosine similarity clamped to [0, 1]; 0 when either vector is zero.
///
/// Attribute entries are non-negative. Dense features can be negative, so the
/// raw cosine is floored at 0: propagation never carries a negative signal.
pub fn cosine(a: &NodeEncoding, b: &NodeEncoding) -> f64 {
    if a.norm == 0.0 || b.norm == 0.0 {
        return 0.0;
    }
    (a.dot(b) / (a.norm * b.norm)).clamp(0.0, 1.0)
}

/// `Sim(i, j)` accessor consumed by propagation.
pub trait Similarity: Sync {
    fn sim(&self, i: usize, j: usize) -> f64;
}

impl<F: Fn(usize, usize) -> f64 + Sync> Similarity for F {
    fn sim(&self, i: usize, j: usize) -> f64 {
        self(i, j)
    }
}

/// Constant similarity, for tests and for disabling the similarity factor.
#[derive(Debug, Clone, Copy)]
pub struct ConstantSimilarity(pub f64);

impl Similarity for ConstantSimilarity {
    fn sim(&self, _: usize, _: usize) -> f64 {
        self.0
    }
}

/// Cosine over precomputed node encodings, memoized per unordered pair.
pub struct CosineSimilarity {
    encodings: Vec<NodeEncoding>,
    memo: Mutex<HashMap<(u32, u32), f64>>,
}

impl CosineSimilarity {
    pub fn new(g: &TransactionGraph) -> Self {
        let schema = g.schema();
        Self {
            encodings: g.nodes().iter().map(|t| encode(t, schema)).collect(),
            memo: Mutex::new(HashMap::new()),
        }
    }

    pub fn encoding(&self, i: usize) -> &NodeEncoding {
        &self.encodings[i]
    }

    pub fn cached_pairs(&self) -> usize {
        self.memo.lock().len()
    }
}

impl Similarity for CosineSimilarity {
    fn sim(&self, i: usize, j: usize) -> f64 {
        let key = (i.min(j) as u32, i.max(j) as u32);
        if let Some(&v) = self.memo.lock().get(&key) {
            return v;
        }
        let v = cosine(&self.encodings[key.0 as usize], &self.encodings[key.1 as usize]);
        self.memo.lock().insert(key, v);
        v
    }
}
