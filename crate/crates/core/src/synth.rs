//! Synthetic transaction datasets with planted fraud rings.
//!
//! Transactions occupy consecutive time slots. Fraud transactions are grouped
//! into rings; each ring is active over a window of `ring_span * n` slots and
//! owns one private value per attribute, which every member reuses with
//! probability `share_prob_fraud`. Any value a transaction does not take from
//! its ring comes from the background process: with probability
//! `share_prob_legit` a value drawn uniformly from a small shared pool (sized
//! so that a pooled value is held by about `background_bucket` transactions),
//! otherwise a fresh unique value. Dense features are unit Gaussians, shifted
//! by `feature_shift` in every dimension for fraud.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::AttributeSchema;
use crate::graph::Transaction;
use crate::hash;

/// Timestamp of slot 0 (2024-01-01T00:00:00Z in ms).
pub const BASE_TS: i64 = 1_704_067_200_000;
/// Width of one time slot in ms.
pub const SLOT_MS: i64 = 60_000;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic parameters: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("{fraud} fraud transactions cannot fill a ring of at least {min}")]
    TooSmall { fraud: usize, min: usize },
    #[error("need at least {needed} transactions, got {got}")]
    TooFewTransactions { needed: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub n: usize,
    pub fraud_rate: f64,
    /// Inclusive ring size range.
    pub ring_size: (usize, usize),
    pub share_prob_fraud: f64,
    pub share_prob_legit: f64,
    pub feature_dim: usize,
    pub feature_shift: f64,
    pub rng_seed: u64,
    /// Fraction of the timeline over which one ring's members are spread.
    pub ring_span: f64,
    /// Expected number of transactions holding one pooled background value.
    pub background_bucket: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n: 20_000,
            fraud_rate: 0.0107,
            ring_size: (3, 12),
            share_prob_fraud: 0.8,
            share_prob_legit: 0.02,
            feature_dim: 8,
            feature_shift: 0.5,
            rng_seed: 0,
            ring_span: 0.25,
            background_bucket: 123,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.fraud_rate > 0.0 && self.fraud_rate < 1.0) {
            out.push("fraud_rate must be in (0, 1)".to_string());
        }
        let (lo, hi) = self.ring_size;
        if lo < 2 || hi < lo {
            out.push("ring_size must satisfy 2 ≤ min ≤ max".to_string());
        }
        for (name, p) in [("share_prob_fraud", self.share_prob_fraud), ("share_prob_legit", self.share_prob_legit)] {
            if !(0.0..=1.0).contains(&p) {
                out.push(format!("{name} must be in [0, 1]"));
            }
        }
        if !(self.ring_span > 0.0 && self.ring_span <= 1.0) {
            out.push("ring_span must be in (0, 1]".to_string());
        }
        if self.background_bucket < 2 {
            out.push("background_bucket must be ≥ 2".to_string());
        }
        if !self.feature_shift.is_finite() {
            out.push("feature_shift must be finite".to_string());
        }
        out
    }

    /// `ceil(n * fraud_rate)`, robust to representation error in the product.
    pub fn fraud_count(&self) -> usize {
        let x = self.n as f64 * self.fraud_rate;
        (x - 1e-9 * x.max(1.0)).ceil().max(0.0) as usize
    }
}

fn ring_sizes(total: usize, (lo, hi): (usize, usize), rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut sizes = Vec::new();
    let mut left = total;
    while left > 0 {
        let s = rng.random_range(lo..=hi);
        if s >= left {
            if left >= lo || sizes.is_empty() {
                sizes.push(left);
            } else {
                *sizes.last_mut().unwrap() += left;
            }
            break;
        }
        sizes.push(s);
        left -= s;
        if left < lo {
            *sizes.last_mut().unwrap() += left;
            break;
        }
    }
    sizes
}

fn opaque(seed: u64, parts: &[&str]) -> String {
    let mut h = hash::Fnv1a::default();
    h.update(&seed.to_le_bytes());
    for p in parts {
        h.update(p.as_bytes());
        h.update(&[0x1f]);
    }
    format!("{:016x}", h.finish())
}

/// Generates `p.n` transactions in ascending timestamp order.
pub fn generate(p: &SynthParams, schema: &AttributeSchema) -> Result<Vec<Transaction>, SynthError> {
    let violations = p.validate();
    if !violations.is_empty() {
        return Err(SynthError::Invalid(violations));
    }
    let n_fraud = p.fraud_count();
    if n_fraud < p.ring_size.0 {
        return Err(SynthError::TooSmall { fraud: n_fraud, min: p.ring_size.0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.rng_seed);

    // ring membership by slot
    let sizes = ring_sizes(n_fraud, p.ring_size, &mut rng);
    let mut ring_of: Vec<Option<usize>> = vec![None; p.n];
    let window = ((p.ring_span * p.n as f64).round() as usize).clamp(1, p.n);
    for (r, &size) in sizes.iter().enumerate() {
        let win = window.max(size * 2).min(p.n);
        let start = rng.random_range(0..=p.n - win);
        let mut free: Vec<usize> = (start..start + win).filter(|&s| ring_of[s].is_none()).collect();
        if free.len() < size {
            free = (0..p.n).filter(|&s| ring_of[s].is_none()).collect();
        }
        for k in index::sample(&mut rng, free.len(), size) {
            ring_of[free[k]] = Some(r);
        }
    }

    let m = schema.len();
    let pooled = (p.n as f64 * p.share_prob_legit / p.background_bucket as f64).round() as usize;
    let pool_size = pooled.max(1);
    let seed_tag = p.rng_seed;
    let ring_values: Vec<Vec<String>> = (0..sizes.len())
        .map(|r| {
            schema
                .attributes
                .iter()
                .map(|a| opaque(seed_tag, &["ring", &r.to_string(), a]))
                .collect()
        })
        .collect();
    let pool_values: Vec<Vec<String>> = schema
        .attributes
        .iter()
        .map(|a| (0..pool_size).map(|v| opaque(seed_tag, &["pool", a, &v.to_string()])).collect())
        .collect();

    let width = (p.n.max(2) - 1).to_string().len().max(6);
    let mut out = Vec::with_capacity(p.n);
    for slot in 0..p.n {
        let id = format!("tx{slot:0width$}");
        let ts = BASE_TS + slot as i64 * SLOT_MS + rng.random_range(0..SLOT_MS);
        let mut tx = Transaction::new(id, ts);
        let ring = ring_of[slot];
        for k in 0..m {
            let attr = &schema.attributes[k];
            let from_ring = ring.is_some() && rng.random_bool(p.share_prob_fraud);
            let value = if from_ring {
                ring_values[ring.unwrap()][k].clone()
            } else if rng.random_bool(p.share_prob_legit) {
                pool_values[k][rng.random_range(0..pool_size)].clone()
            } else {
                opaque(seed_tag, &["own", attr, &slot.to_string()])
            };
            tx.attrs.insert(attr.clone(), Some(value));
        }
        let shift = if ring.is_some() { p.feature_shift } else { 0.0 };
        let features: Vec<f64> = (0..p.feature_dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z + shift
            })
            .collect();
        tx.features = Some(features);
        tx.label = Some(ring.is_some());
        out.push(tx);
    }
    Ok(out)
}

/// Reproducibility record written next to generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorManifest {
    pub params: SynthParams,
    pub schema_hash: String,
    pub transactions: usize,
    pub fraud: usize,
    pub rings: usize,
}

pub fn manifest(p: &SynthParams, schema: &AttributeSchema, txs: &[Transaction]) -> GeneratorManifest {
    let mut rng = ChaCha8Rng::seed_from_u64(p.rng_seed);
    let rings = ring_sizes(p.fraud_count(), p.ring_size, &mut rng).len();
    GeneratorManifest {
        params: p.clone(),
        schema_hash: schema.hash(),
        transactions: txs.len(),
        fraud: txs.iter().filter(|t| t.is_fraud()).count(),
        rings,
    }
}

/// Indices of `txs` sorted by (ts, id).
pub fn chronological_order(txs: &[Transaction]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..txs.len()).collect();
    order.sort_by(|&a, &b| (txs[a].ts, &txs[a].id).cmp(&(txs[b].ts, &txs[b].id)));
    order
}

/// Index sets of a chronological train/validation/test split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

fn floor_share(n: usize, r: f64) -> usize {
    let x = n as f64 * r;
    ((x + 1e-9 * x.max(1.0)).floor() as usize).min(n)
}

/// Train and validation take `floor(n * ratio)`; test takes the remainder.
pub fn split_indices(txs: &[Transaction], ratios: (f64, f64, f64)) -> SplitIndices {
    let order = chronological_order(txs);
    let n = order.len();
    let n_train = floor_share(n, ratios.0);
    let n_val = floor_share(n, ratios.1).min(n - n_train);
    SplitIndices {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    }
}

pub fn chronological_split(
    txs: &[Transaction],
    ratios: (f64, f64, f64),
) -> (Vec<Transaction>, Vec<Transaction>, Vec<Transaction>) {
    let s = split_indices(txs, ratios);
    let pick = |idx: &[usize]| idx.iter().map(|&i| txs[i].clone()).collect::<Vec<_>>();
    (pick(&s.train), pick(&s.val), pick(&s.test))
}

/// Sizes of `parts` contiguous parts of `len` items; earlier parts take the remainder.
pub fn part_sizes(len: usize, parts: usize) -> Vec<usize> {
    let (base, extra) = (len / parts, len % parts);
    (0..parts).map(|k| base + usize::from(k < extra)).collect()
}

/// Splits an already ordered sequence into `parts` contiguous parts.
pub fn partition<T: Clone>(items: &[T], parts: usize) -> Result<Vec<Vec<T>>, SynthError> {
    if parts == 0 || items.len() < parts {
        return Err(SynthError::TooFewTransactions { needed: parts.max(1), got: items.len() });
    }
    let mut out = Vec::with_capacity(parts);
    let mut at = 0;
    for size in part_sizes(items.len(), parts) {
        out.push(items[at..at + size].to_vec());
        at += size;
    }
    Ok(out)
}

/// Orders the test set chronologically and cuts it into `parts` parts.
pub fn partition_test(test: &[Transaction], parts: usize) -> Result<Vec<Vec<Transaction>>, SynthError> {
    let ordered: Vec<Transaction> = chronological_order(test).into_iter().map(|i| test[i].clone()).collect();
    partition(&ordered, parts)
}
