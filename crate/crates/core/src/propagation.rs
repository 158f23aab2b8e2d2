//! Hop-synchronous feedback propagation.
//!
//! Annotated nodes are seeds and keep their annotated score. At each hop
//! every frontier node `i` (a node first reached at the previous hop, or a
//! seed at hop 1) pushes `S_i * (W_ij / max_weight) * Sim(i, j)` to each
//! neighbor `j` that is neither a seed nor already reached. A node's incoming
//! contributions are summed in ascending source order, added to its score and
//! clamped to `clamp_max`. Nodes whose score changed form the next frontier,
//! so scores spread as rings around the seeds and each node is scored once,
//! by its nearest ring.
//!
//! Propagation stops after `max_hops` hops, when the largest per-node change
//! of a hop falls below `epsilon`, or when the frontier is empty.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::annotation::AnnotationEvent;
use crate::config::PropagationConfig;
use crate::graph::TransactionGraph;
use crate::similarity::Similarity;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PropagationError {
    #[error("annotation references unknown node '{0}'")]
    UnknownNode(String),
    #[error("annotation score {score} for '{node}' is outside [0, {max}]")]
    ScoreOutOfRange { node: String, score: f64, max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopTrace {
    pub hop: usize,
    pub delta_max: f64,
    pub updated: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxHops,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationReport {
    #[serde(rename = "hops")]
    pub hops_executed: usize,
    pub terminated_by: Termination,
    pub nodes_scored: usize,
    pub trace: Vec<HopTrace>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreState {
    scores: Vec<f64>,
    seed: Vec<bool>,
    reached: Vec<bool>,
    frontier: Vec<usize>,
    hop: usize,
    trace: Vec<HopTrace>,
}

impl ScoreState {
    /// All-zero state with no seeds.
    pub fn empty(n: usize) -> Self {
        Self {
            scores: vec![0.0; n],
            seed: vec![false; n],
            reached: vec![false; n],
            frontier: Vec::new(),
            hop: 0,
            trace: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn score(&self, i: usize) -> f64 {
        self.scores[i]
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn is_seed(&self, i: usize) -> bool {
        self.seed[i]
    }

    pub fn seeds(&self) -> impl Iterator<Item = usize> + '_ {
        self.seed.iter().enumerate().filter(|(_, &s)| s).map(|(i, _)| i)
    }

    pub fn seed_count(&self) -> usize {
        self.seed.iter().filter(|&&s| s).count()
    }

    /// Nodes that will push at the next hop, ascending.
    pub fn frontier(&self) -> &[usize] {
        &self.frontier
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn trace(&self) -> &[HopTrace] {
        &self.trace
    }

    pub fn nodes_scored(&self) -> usize {
        self.scores.iter().filter(|&&s| s > 0.0).count()
    }
}

/// Seeds scores from annotations; latest annotation per node wins, ordered by
/// timestamp and then by position in `annotations`.
pub fn init_scores(
    g: &TransactionGraph,
    annotations: &[AnnotationEvent],
    cfg: &PropagationConfig,
) -> Result<ScoreState, PropagationError> {
    let mut latest: HashMap<usize, (i64, usize, f64)> = HashMap::new();
    for (order, ev) in annotations.iter().enumerate() {
        let i = g.index_of(&ev.node_id).ok_or_else(|| PropagationError::UnknownNode(ev.node_id.clone()))?;
        if !(ev.score.is_finite() && (0.0..=cfg.clamp_max).contains(&ev.score)) {
            return Err(PropagationError::ScoreOutOfRange {
                node: ev.node_id.clone(),
                score: ev.score,
                max: cfg.clamp_max,
            });
        }
        let key = (ev.ts, order, ev.score);
        latest
            .entry(i)
            .and_modify(|cur| {
                if (key.0, key.1) > (cur.0, cur.1) {
                    *cur = key;
                }
            })
            .or_insert(key);
    }

    let mut s = ScoreState::empty(g.len());
    for (&i, &(_, _, score)) in &latest {
        s.scores[i] = score;
        s.seed[i] = true;
        s.reached[i] = true;
    }
    s.frontier = s.seeds().filter(|&i| s.scores[i] > 0.0).collect();
    Ok(s)
}

/// Runs one hop and returns its largest per-node score change.
pub fn propagate_hop(
    g: &TransactionGraph,
    s: &mut ScoreState,
    sim: &dyn Similarity,
    cfg: &PropagationConfig,
) -> f64 {
    let max_w = g.max_weight();
    let mut incoming: BTreeMap<usize, f64> = BTreeMap::new();
    for &i in &s.frontier {
        let si = s.scores[i];
        for (j, w) in g.neighbors(i) {
            if s.reached[j] {
                continue;
            }
            *incoming.entry(j).or_insert(0.0) += si * (w / max_w) * sim.sim(i, j);
        }
    }

    let mut delta_max = 0.0f64;
    let mut next = Vec::new();
    for (j, add) in incoming {
        let old = s.scores[j];
        let new = (old + add).min(cfg.clamp_max);
        if new != old {
            s.scores[j] = new;
            s.reached[j] = true;
            delta_max = delta_max.max((new - old).abs());
            next.push(j);
        }
    }

    s.hop += 1;
    s.trace.push(HopTrace { hop: s.hop, delta_max, updated: next.len() });
    s.frontier = next;
    delta_max
}

/// Repeats [`propagate_hop`] until convergence, frontier exhaustion or `max_hops`.
pub fn propagate(
    g: &TransactionGraph,
    s: &mut ScoreState,
    sim: &dyn Similarity,
    cfg: &PropagationConfig,
) -> PropagationReport {
    let first = s.trace.len();
    let mut hops = 0;
    let terminated_by = loop {
        if s.frontier.is_empty() {
            break Termination::Converged;
        }
        if hops == cfg.max_hops {
            break Termination::MaxHops;
        }
        let delta = propagate_hop(g, s, sim, cfg);
        hops += 1;
        if delta < cfg.epsilon {
            break Termination::Converged;
        }
    };
    PropagationReport {
        hops_executed: hops,
        terminated_by,
        nodes_scored: s.nodes_scored(),
        trace: s.trace[first..].to_vec(),
    }
}

/// Seeds from `annotations` and propagates.
pub fn run(
    g: &TransactionGraph,
    annotations: &[AnnotationEvent],
    sim: &dyn Similarity,
    cfg: &PropagationConfig,
) -> Result<(ScoreState, PropagationReport), PropagationError> {
    let mut s = init_scores(g, annotations, cfg)?;
    let report = propagate(g, &mut s, sim, cfg);
    Ok((s, report))
}

/// Scores keyed by node id; zero scores are dropped when `omit_zeros` is set.
pub fn scores_snapshot(g: &TransactionGraph, s: &ScoreState, omit_zeros: bool) -> BTreeMap<String, f64> {
    (0..s.len())
        .filter(|&i| !omit_zeros || s.scores[i] != 0.0)
        .map(|i| (g.node(i).id.clone(), s.scores[i]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub score: f64,
    pub seed: bool,
}

/// Score dump as JSONL records, ordered by node id.
pub fn write_score_dump(
    mut w: impl std::io::Write,
    g: &TransactionGraph,
    s: &ScoreState,
    omit_zeros: bool,
) -> std::io::Result<()> {
    let mut order: Vec<usize> = (0..s.len()).filter(|&i| !omit_zeros || s.scores[i] != 0.0).collect();
    order.sort_by(|&a, &b| g.node(a).id.cmp(&g.node(b).id));
    for i in order {
        let rec = ScoreRecord { id: g.node(i).id.clone(), score: s.scores[i], seed: s.seed[i] };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
