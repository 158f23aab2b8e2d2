//! Transaction ingestion and shared-attribute graph construction.
//!
//! Two transactions are linked when they hold the same value for at least one
//! attribute. The link weight is the sum of the weights of every attribute on
//! which they agree; absent values never agree. Candidate pairs come from a
//! per-attribute inverted index (value -> transactions, a "hypernode"), so
//! construction touches only pairs inside shared buckets. Buckets larger than
//! `hub_cap` are recorded and skipped.
//!
//! Adjacency is stored in CSR form with each row sorted by neighbor index.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::AttributeSchema;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed transaction: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: duplicate transaction id '{id}'")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: unknown attribute '{attr}'")]
    UnknownAttribute { line: usize, attr: String },
    #[error("unknown node id '{0}'")]
    UnknownNode(String),
    #[error("hops must be ≥ 1")]
    InvalidHops,
}

/// One transaction as read from the ingestion JSONL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: String,
    /// Milliseconds since epoch.
    pub ts: i64,
    #[serde(default)]
    pub attrs: BTreeMap<String, Option<String>>,
    #[serde(default)]
    pub label: Option<bool>,
    #[serde(default)]
    pub features: Option<Vec<f64>>,
}

impl Transaction {
    pub fn new(id: impl Into<String>, ts: i64) -> Self {
        Self {
            id: id.into(),
            ts,
            attrs: BTreeMap::new(),
            label: None,
            features: None,
        }
    }

    pub fn with_attr(mut self, attr: impl Into<String>, value: impl Into<String>) -> Self {
        self.attrs.insert(attr.into(), Some(value.into()));
        self
    }

    pub fn with_label(mut self, label: bool) -> Self {
        self.label = Some(label);
        self
    }

    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attrs.get(name).and_then(|v| v.as_deref())
    }

    pub fn is_fraud(&self) -> bool {
        self.label == Some(true)
    }
}

/// Reads the ingestion JSONL; blank lines are skipped.
pub fn ingest(path: impl AsRef<Path>, schema: &AttributeSchema) -> Result<Vec<Transaction>, GraphError> {
    let path = path.as_ref();
    let io_err = |source| GraphError::Io { path: path.to_path_buf(), source };
    let file = std::fs::File::open(path).map_err(io_err)?;
    parse_jsonl(std::io::BufReader::new(file), schema).map_err(|e| match e {
        GraphError::Io { source, .. } => io_err(source),
        other => other,
    })
}

pub fn parse_jsonl(reader: impl BufRead, schema: &AttributeSchema) -> Result<Vec<Transaction>, GraphError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| GraphError::Io { path: PathBuf::new(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let tx: Transaction =
            serde_json::from_str(&line).map_err(|source| GraphError::Malformed { line: line_no, source })?;
        if let Some(attr) = tx.attrs.keys().find(|k| schema.index_of(k).is_none()) {
            return Err(GraphError::UnknownAttribute { line: line_no, attr: attr.clone() });
        }
        if !seen.insert(tx.id.clone()) {
            return Err(GraphError::DuplicateId { line: line_no, id: tx.id });
        }
        out.push(tx);
    }
    Ok(out)
}

/// Writes transactions as JSONL, one object per line.
pub fn write_jsonl(mut w: impl std::io::Write, txs: &[Transaction]) -> std::io::Result<()> {
    for tx in txs {
        serde_json::to_writer(&mut w, tx)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Sum of the weights of every attribute on which `a` and `b` hold the same
/// present value, accumulated in schema order.
pub fn edge_weight(a: &Transaction, b: &Transaction, schema: &AttributeSchema) -> f64 {
    let mut w = 0.0;
    for (k, name) in schema.attributes.iter().enumerate() {
        match (a.attr(name), b.attr(name)) {
            (Some(x), Some(y)) if x == y => w += schema.weight_at(k),
            _ => {}
        }
    }
    w
}

/// An attribute value whose bucket exceeded `hub_cap`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HubRecord {
    pub attribute: String,
    pub value: String,
    pub size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub node_count: usize,
    pub edge_count: usize,
    pub avg_degree: f64,
    pub hypernode_count: usize,
    pub hub_excluded_count: usize,
}

/// Immutable weighted undirected transaction graph.
#[derive(Debug, Clone)]
pub struct TransactionGraph {
    schema: AttributeSchema,
    nodes: Vec<Transaction>,
    index: HashMap<String, usize>,
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
    weights: Vec<f64>,
    /// Per attribute (schema order): value -> members, for buckets of size ≥ 2.
    hypernodes: Vec<BTreeMap<String, Vec<u32>>>,
    hubs: Vec<HubRecord>,
    max_weight: f64,
}

/// Builds the graph. Fails only on duplicate ids.
pub fn build_graph(txs: Vec<Transaction>, schema: &AttributeSchema) -> Result<TransactionGraph, GraphError> {
    let index = index_nodes(&txs)?;
    let (hypernodes, hubs) = bucket_index(&txs, schema);

    let mut pairs: Vec<(u32, u32)> = Vec::new();
    for (k, buckets) in hypernodes.iter().enumerate() {
        if schema.weight_at(k) <= 0.0 {
            continue;
        }
        for members in buckets.values() {
            if members.len() > schema.hub_cap {
                continue;
            }
            for (x, &a) in members.iter().enumerate() {
                for &b in &members[x + 1..] {
                    pairs.push((a, b));
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();

    let edges: Vec<(u32, u32, f64)> = pairs
        .into_iter()
        .map(|(a, b)| (a, b, edge_weight(&txs[a as usize], &txs[b as usize], schema)))
        .filter(|&(_, _, w)| w > 0.0)
        .collect();

    let (offsets, neighbors, weights) = csr_from_sorted_edges(txs.len(), &edges);
    Ok(TransactionGraph {
        max_weight: schema.max_possible_weight(),
        schema: schema.clone(),
        nodes: txs,
        index,
        offsets,
        neighbors,
        weights,
        hypernodes,
        hubs,
    })
}

fn index_nodes(txs: &[Transaction]) -> Result<HashMap<String, usize>, GraphError> {
    let mut index = HashMap::with_capacity(txs.len());
    for (i, tx) in txs.iter().enumerate() {
        if index.insert(tx.id.clone(), i).is_some() {
            return Err(GraphError::DuplicateId { line: i + 1, id: tx.id.clone() });
        }
    }
    Ok(index)
}

type BucketIndex = Vec<BTreeMap<String, Vec<u32>>>;

fn bucket_index(txs: &[Transaction], schema: &AttributeSchema) -> (BucketIndex, Vec<HubRecord>) {
    let mut hypernodes = Vec::with_capacity(schema.len());
    let mut hubs = Vec::new();
    for name in &schema.attributes {
        let mut buckets: HashMap<&str, Vec<u32>> = HashMap::new();
        for (i, tx) in txs.iter().enumerate() {
            if let Some(v) = tx.attr(name) {
                buckets.entry(v).or_default().push(i as u32);
            }
        }
        let shared: BTreeMap<String, Vec<u32>> = buckets
            .into_iter()
            .filter(|(_, m)| m.len() >= 2)
            .map(|(v, m)| (v.to_string(), m))
            .collect();
        for (v, m) in &shared {
            if m.len() > schema.hub_cap {
                hubs.push(HubRecord { attribute: name.clone(), value: v.clone(), size: m.len() });
            }
        }
        hypernodes.push(shared);
    }
    (hypernodes, hubs)
}

/// `edges` must be sorted by (min, max) with min < max and no duplicates.
fn csr_from_sorted_edges(n: usize, edges: &[(u32, u32, f64)]) -> (Vec<usize>, Vec<u32>, Vec<f64>) {
    let mut degree = vec![0usize; n];
    for &(a, b, _) in edges {
        degree[a as usize] += 1;
        degree[b as usize] += 1;
    }
    let mut offsets = Vec::with_capacity(n + 1);
    offsets.push(0);
    for d in &degree {
        offsets.push(offsets.last().unwrap() + d);
    }
    let mut cursor = offsets[..n].to_vec();
    let mut neighbors = vec![0u32; 2 * edges.len()];
    let mut weights = vec![0.0; 2 * edges.len()];
    // Sorted input fills every row in ascending neighbor order: all (a, x)
    // with a < x precede every (x, c).
    for &(a, b, w) in edges {
        let (ai, bi) = (a as usize, b as usize);
        neighbors[cursor[ai]] = b;
        weights[cursor[ai]] = w;
        cursor[ai] += 1;
        neighbors[cursor[bi]] = a;
        weights[cursor[bi]] = w;
        cursor[bi] += 1;
    }
    (offsets, neighbors, weights)
}

impl TransactionGraph {
    /// Reassembles a graph from stored parts (snapshot loading).
    pub(crate) fn from_parts(
        schema: AttributeSchema,
        nodes: Vec<Transaction>,
        offsets: Vec<usize>,
        neighbors: Vec<u32>,
        weights: Vec<f64>,
    ) -> Result<Self, GraphError> {
        let index = index_nodes(&nodes)?;
        let (hypernodes, hubs) = bucket_index(&nodes, &schema);
        Ok(Self {
            max_weight: schema.max_possible_weight(),
            schema,
            nodes,
            index,
            offsets,
            neighbors,
            weights,
            hypernodes,
            hubs,
        })
    }

    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Transaction] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &Transaction {
        &self.nodes[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Theoretical maximum edge weight, the sum of all attribute weights.
    pub fn max_weight(&self) -> f64 {
        self.max_weight
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    /// Neighbors of `i` with edge weights, ascending by neighbor index.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (lo, hi) = (self.offsets[i], self.offsets[i + 1]);
        self.neighbors[lo..hi]
            .iter()
            .zip(&self.weights[lo..hi])
            .map(|(&j, &w)| (j as usize, w))
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.len() / 2
    }

    /// Every undirected edge once, as (i, j, w) with i < j, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.len()).flat_map(move |i| {
            self.neighbors(i).filter(move |&(j, _)| j > i).map(move |(j, w)| (i, j, w))
        })
    }

    pub fn weight_between(&self, i: usize, j: usize) -> Option<f64> {
        let (lo, hi) = (self.offsets[i], self.offsets[i + 1]);
        self.neighbors[lo..hi]
            .binary_search(&(j as u32))
            .ok()
            .map(|p| self.weights[lo + p])
    }

    pub fn hypernodes(&self) -> &[BTreeMap<String, Vec<u32>>] {
        &self.hypernodes
    }

    pub fn hubs(&self) -> &[HubRecord] {
        &self.hubs
    }

    pub(crate) fn csr(&self) -> (&[usize], &[u32], &[f64]) {
        (&self.offsets, &self.neighbors, &self.weights)
    }

    pub fn avg_degree(&self) -> f64 {
        if self.nodes.is_empty() {
            0.0
        } else {
            2.0 * self.edge_count() as f64 / self.nodes.len() as f64
        }
    }

    pub fn stats(&self) -> GraphStats {
        graph_stats(self)
    }

    pub fn neighborhood(&self, id: &str, hops: usize) -> Result<Subgraph, GraphError> {
        neighborhood(self, id, hops)
    }
}

pub fn graph_stats(g: &TransactionGraph) -> GraphStats {
    GraphStats {
        node_count: g.len(),
        edge_count: g.edge_count(),
        avg_degree: g.avg_degree(),
        hypernode_count: g.hypernodes.iter().map(BTreeMap::len).sum(),
        hub_excluded_count: g.hubs.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgraphNode {
    #[serde(skip)]
    pub index: usize,
    pub id: String,
    pub hop: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgraphEdge {
    pub source: String,
    pub target: String,
    pub weight: f64,
}

/// Closed BFS neighborhood: nodes ordered by (hop, id), induced edges ordered
/// by (source, target) with source < target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgraph {
    pub nodes: Vec<SubgraphNode>,
    pub edges: Vec<SubgraphEdge>,
}

pub fn neighborhood(g: &TransactionGraph, id: &str, hops: usize) -> Result<Subgraph, GraphError> {
    if hops == 0 {
        return Err(GraphError::InvalidHops);
    }
    let start = g.index_of(id).ok_or_else(|| GraphError::UnknownNode(id.to_string()))?;
    let mut dist: HashMap<usize, usize> = HashMap::from([(start, 0)]);
    let mut queue = VecDeque::from([start]);
    while let Some(i) = queue.pop_front() {
        let d = dist[&i];
        if d == hops {
            continue;
        }
        for (j, _) in g.neighbors(i) {
            if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(j) {
                e.insert(d + 1);
                queue.push_back(j);
            }
        }
    }

    let mut nodes: Vec<SubgraphNode> = dist
        .iter()
        .map(|(&i, &hop)| SubgraphNode { index: i, id: g.node(i).id.clone(), hop })
        .collect();
    nodes.sort_by(|a, b| (a.hop, &a.id).cmp(&(b.hop, &b.id)));

    let mut edges = Vec::new();
    for &i in dist.keys() {
        for (j, w) in g.neighbors(i) {
            if dist.contains_key(&j) {
                let (a, b) = (&g.node(i).id, &g.node(j).id);
                if a < b {
                    edges.push(SubgraphEdge { source: a.clone(), target: b.clone(), weight: w });
                }
            }
        }
    }
    edges.sort_by(|a, b| (&a.source, &a.target).cmp(&(&b.source, &b.target)));
    Ok(Subgraph { nodes, edges })
}
