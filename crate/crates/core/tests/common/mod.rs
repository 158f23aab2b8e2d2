#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use fbprop_core::config::{AttributeSchema, PropagationConfig};
use fbprop_core::graph::Transaction;
use proptest::prelude::*;

/// Random schema plus transactions over small value alphabets, so values
/// collide often. Roughly one value in five is absent.
pub fn dataset(max_nodes: usize, hub_cap: usize) -> impl Strategy<Value = (AttributeSchema, Vec<Transaction>)> {
    let weights = prop::collection::vec(prop_oneof![Just(0.0), Just(0.5), Just(1.0), Just(2.0), Just(3.0)], 1..5);
    (weights, 1..max_nodes.max(2), 1u8..6).prop_flat_map(move |(mut w, n, alphabet)| {
        if w.iter().all(|&x| x == 0.0) {
            w[0] = 1.0;
        }
        let m = w.len();
        let schema = AttributeSchema::new(w.iter().enumerate().map(|(k, &x)| (format!("a{k}"), x)), hub_cap).unwrap();
        let row = prop::collection::vec(prop::option::weighted(0.8, 0..alphabet), m);
        prop::collection::vec(row, n).prop_map(move |rows| {
            let txs = rows
                .into_iter()
                .enumerate()
                .map(|(i, vals)| {
                    let mut t = Transaction::new(format!("t{i:03}"), i as i64);
                    for (k, v) in vals.into_iter().enumerate() {
                        t.attrs.insert(format!("a{k}"), v.map(|x| format!("v{x}")));
                    }
                    t
                })
                .collect();
            (schema.clone(), txs)
        })
    })
}

/// Edge weight of a pair, written out independently of the library.
pub fn naive_weight(a: &Transaction, b: &Transaction, schema: &AttributeSchema) -> f64 {
    let mut w = 0.0;
    for name in &schema.attributes {
        let (x, y) = (a.attrs.get(name).cloned().flatten(), b.attrs.get(name).cloned().flatten());
        if x.is_some() && x == y {
            w += schema.weights[name];
        }
    }
    w
}

/// All-pairs edge list `(i, j, w)` with `i < j` and `w > 0`.
pub fn brute_force_edges(txs: &[Transaction], schema: &AttributeSchema) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for i in 0..txs.len() {
        for j in i + 1..txs.len() {
            let w = naive_weight(&txs[i], &txs[j], schema);
            if w > 0.0 {
                out.push((i, j, w));
            }
        }
    }
    out
}

/// Deterministic pseudo-similarity in [0, 1] with some exact zeros and ones.
pub fn pseudo_sim(salt: u64) -> impl Fn(usize, usize) -> f64 + Sync + Copy {
    move |i, j| {
        let (a, b) = (i.min(j) as u64, i.max(j) as u64);
        let h = (a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f) ^ salt) % 23;
        match h {
            0 => 0.0,
            1 | 2 => 1.0,
            x => x as f64 / 23.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub scores: Vec<f64>,
    pub hops: usize,
    pub converged: bool,
    pub deltas: Vec<f64>,
}

/// Dictionary-based propagator: scores and reached sets in hash maps, one
/// pass over the flat edge list per hop.
pub fn reference_propagate(
    n: usize,
    edges: &[(usize, usize, f64)],
    max_weight: f64,
    sim: impl Fn(usize, usize) -> f64,
    seeds: &BTreeMap<usize, f64>,
    cfg: &PropagationConfig,
) -> Reference {
    let mut score: HashMap<usize, f64> = seeds.iter().map(|(&k, &v)| (k, v)).collect();
    let mut reached: HashSet<usize> = seeds.keys().copied().collect();
    let mut frontier: BTreeSet<usize> = seeds.iter().filter(|(_, &v)| v > 0.0).map(|(&k, _)| k).collect();
    let mut directed: Vec<(usize, usize, f64)> = edges.iter().flat_map(|&(i, j, w)| [(i, j, w), (j, i, w)]).collect();
    directed.sort_by_key(|&(i, j, _)| (i, j));

    let (mut hops, mut deltas) = (0, Vec::new());
    let converged = loop {
        if frontier.is_empty() {
            break true;
        }
        if hops == cfg.max_hops {
            break false;
        }
        let mut inbox: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for &(i, j, w) in &directed {
            if frontier.contains(&i) && !reached.contains(&j) {
                let si = score[&i];
                inbox.entry(j).or_default().push(si * (w / max_weight) * sim(i, j));
            }
        }
        let mut next = BTreeSet::new();
        let mut delta: f64 = 0.0;
        for (j, parts) in inbox {
            let old = score.get(&j).copied().unwrap_or(0.0);
            let mut add = 0.0;
            for p in parts {
                add += p;
            }
            let new = (old + add).min(cfg.clamp_max);
            if new != old {
                score.insert(j, new);
                reached.insert(j);
                next.insert(j);
                delta = delta.max((new - old).abs());
            }
        }
        hops += 1;
        deltas.push(delta);
        frontier = next;
        if delta < cfg.epsilon {
            break true;
        }
    };
    Reference { scores: (0..n).map(|i| score.get(&i).copied().unwrap_or(0.0)).collect(), hops, converged, deltas }
}

/// Random seed assignment: index -> score, scores drawn from a few exact
/// values plus arbitrary reals in range.
pub fn seeds(n: usize) -> impl Strategy<Value = BTreeMap<usize, f64>> {
    let score = prop_oneof![Just(0.0), Just(100.0), Just(50.0), 0.0f64..=100.0];
    prop::collection::btree_map(0..n, score, 0..=n.min(6))
}

/// Path `p0 - p1 - ... - p{n-1}`; every edge shares exactly one of two unit
/// weight attributes, so each edge carries W/max_weight = 0.5.
pub fn path(n: usize) -> (AttributeSchema, Vec<Transaction>) {
    let schema = AttributeSchema::new([("even", 1.0), ("odd", 1.0)], 10).unwrap();
    let txs = (0..n as i64)
        .map(|k| {
            let (e, o) = if k % 2 == 0 { (k, k - 1) } else { (k - 1, k) };
            Transaction::new(format!("p{k:02}"), k).with_attr("even", format!("e{e}")).with_attr("odd", format!("o{o}"))
        })
        .collect();
    (schema, txs)
}
