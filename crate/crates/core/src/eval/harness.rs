//! Ablation protocol over chronological test parts.
//!
//! A [`Protocol`] fixes everything that does not depend on the ablation mode:
//! the graph, the train/validation/test split, the test parts, the pre-train
//! annotation pool and every per-cycle annotation batch (each drawn from its
//! own seeded random stream, so a batch depends only on the seed and the
//! cycle). An [`AblationRun`] then drives one or more modes through the
//! protocol step by step: train once, then for each part score it, record
//! metrics and hand back control so annotations can be added and
//! propagation re-run before the next part. [`run_ablation`] drives the whole
//! loop with the simulated annotator; the annotation service drives the same
//! steps from HTTP requests.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotationEvent, PRETRAIN_CYCLE};
use crate::config::{config_hash, AttributeSchema, PropagationConfig};
use crate::graph::{build_graph, GraphError, Transaction, TransactionGraph};
use crate::propagation::{init_scores, propagate, PropagationError, PropagationReport, ScoreState};
use crate::similarity::CosineSimilarity;
use crate::synth::{partition, split_indices, SplitIndices, SynthError};

use super::metrics::{recall_at_threshold, roc_auc};
use super::model::{train_linear, LinearModel, TrainConfig, TrainError};
use super::sampling::{oracle_annotate, sample_classes};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "no_fb")]
    NoFb,
    #[serde(rename = "fb")]
    Fb,
    #[serde(rename = "fp")]
    Fp,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::NoFb, Mode::Fb, Mode::Fp];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::NoFb => "no_fb",
            Mode::Fb => "fb",
            Mode::Fp => "fp",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "no_fb" => Ok(Mode::NoFb),
            "fb" => Ok(Mode::Fb),
            "fp" => Ok(Mode::Fp),
            other => Err(format!("unknown mode '{other}' (expected no_fb, fb or fp)")),
        }
    }
}

/// Split the pre-train annotation pool is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolSource {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub seed: u64,
    pub parts: usize,
    pub per_class: usize,
    /// Probability the simulated annotator flips a label.
    pub noise: f64,
    /// Pre-train pool size; `None` scales 3457 annotations per 1.25M transactions.
    pub pool_size: Option<usize>,
    pub pool_source: PoolSource,
    pub ratios: (f64, f64, f64),
    pub threshold: f64,
    pub retrain_per_part: bool,
    pub train: TrainConfig,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            parts: 10,
            per_class: 150,
            noise: 0.0,
            pool_size: None,
            pool_source: PoolSource::Train,
            ratios: (0.6, 0.2, 0.2),
            threshold: 0.5,
            retrain_per_part: false,
            train: TrainConfig::default(),
        }
    }
}

impl HarnessConfig {
    pub fn pool_size_for(&self, n: usize) -> usize {
        self.pool_size.unwrap_or_else(|| (3457.0 * n as f64 / 1.25e6).round() as usize)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.parts == 0 {
            out.push("parts must be ≥ 1".to_string());
        }
        if !(0.0..0.5).contains(&self.noise) {
            out.push("noise must be in [0, 0.5)".to_string());
        }
        let (a, b, c) = self.ratios;
        if [a, b, c].iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (a + b + c - 1.0).abs() > 1e-9 {
            out.push("ratios must be non-negative and sum to 1".to_string());
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            out.push("threshold must be in [0, 1]".to_string());
        }
        let t = &self.train;
        if t.epochs == 0 || !(t.learning_rate.is_finite() && t.learning_rate > 0.0) || !(t.l2.is_finite() && t.l2 >= 0.0) {
            out.push("train needs epochs ≥ 1, learning_rate > 0, l2 ≥ 0".to_string());
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid harness configuration: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("node '{id}' has {got} dense features, expected {expected}")]
    FeatureDims { id: String, got: usize, expected: usize },
    #[error("models are already trained")]
    AlreadyTrained,
    #[error("models are not trained yet")]
    NotTrained,
    #[error("all {0} test parts have been evaluated")]
    Finished(usize),
    #[error("fp mode needs a propagated score state")]
    MissingPropagation,
}

const POOL_STREAM: u64 = 1;
const POOL_NOISE_STREAM: u64 = 2;

fn stream(seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

fn batch_stream(k: usize) -> u64 {
    16 + 2 * k as u64
}

fn noise_stream(k: usize) -> u64 {
    17 + 2 * k as u64
}

/// Mode-independent protocol state.
pub struct Protocol {
    graph: TransactionGraph,
    sim: CosineSimilarity,
    prop: PropagationConfig,
    cfg: HarnessConfig,
    split: SplitIndices,
    parts: Vec<Vec<usize>>,
    feature_dim: usize,
    config_hash: String,
}

impl Protocol {
    pub fn new(
        txs: Vec<Transaction>,
        schema: &AttributeSchema,
        prop: PropagationConfig,
        cfg: HarnessConfig,
    ) -> Result<Self, HarnessError> {
        Self::from_graph(build_graph(txs, schema)?, prop, cfg)
    }

    pub fn from_graph(graph: TransactionGraph, prop: PropagationConfig, cfg: HarnessConfig) -> Result<Self, HarnessError> {
        let mut violations = cfg.validate();
        violations.extend(prop.validate());
        if !violations.is_empty() {
            return Err(HarnessError::Invalid(violations));
        }
        let feature_dim = graph.nodes().first().and_then(|t| t.features.as_ref()).map_or(0, Vec::len);
        if let Some(t) = graph.nodes().iter().find(|t| t.features.as_ref().map_or(0, Vec::len) != feature_dim) {
            return Err(HarnessError::FeatureDims {
                id: t.id.clone(),
                got: t.features.as_ref().map_or(0, Vec::len),
                expected: feature_dim,
            });
        }
        let split = split_indices(graph.nodes(), cfg.ratios);
        let parts = partition(&split.test, cfg.parts)?;
        let config_hash = config_hash(graph.schema(), &prop);
        let sim = CosineSimilarity::new(&graph);
        Ok(Self { graph, sim, prop, cfg, split, parts, feature_dim, config_hash })
    }

    pub fn graph(&self) -> &TransactionGraph {
        &self.graph
    }

    pub fn similarity(&self) -> &CosineSimilarity {
        &self.sim
    }

    pub fn propagation_config(&self) -> &PropagationConfig {
        &self.prop
    }

    pub fn config(&self) -> &HarnessConfig {
        &self.cfg
    }

    pub fn split(&self) -> &SplitIndices {
        &self.split
    }

    pub fn part_count(&self) -> usize {
        self.parts.len()
    }

    /// Node indices of test part `k`, chronological.
    pub fn part(&self, k: usize) -> &[usize] {
        &self.parts[k]
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    fn txs(&self, idx: &[usize]) -> Vec<Transaction> {
        idx.iter().map(|&i| self.graph.node(i).clone()).collect()
    }

    fn is_fraud(&self, id: &str) -> bool {
        self.graph.index_of(id).is_some_and(|i| self.graph.node(i).is_fraud())
    }

    /// Ids of the class-balanced pre-train pool.
    pub fn pretrain_batch(&self) -> Vec<String> {
        let size = self.cfg.pool_size_for(self.graph.len());
        let source = match self.cfg.pool_source {
            PoolSource::Train => &self.split.train,
            PoolSource::Val => &self.split.val,
        };
        let n_fraud = size / 2;
        sample_classes(&self.txs(source), n_fraud, size - n_fraud, &mut stream(self.cfg.seed, POOL_STREAM))
    }

    /// Ids sampled from test part `k` for annotation after it is scored.
    pub fn cycle_batch(&self, k: usize, per_class: usize) -> Vec<String> {
        let part = self.txs(&self.parts[k]);
        sample_classes(&part, per_class, per_class, &mut stream(self.cfg.seed, batch_stream(k)))
    }

    fn oracle(&self, ids: &[String], noise_tag: u64, cycle: i64) -> Vec<AnnotationEvent> {
        let mut rng = stream(self.cfg.seed, noise_tag);
        let mut events = oracle_annotate(ids, |id| self.is_fraud(id), self.cfg.noise, &mut rng);
        for e in &mut events {
            e.cycle = cycle;
            e.ts = cycle + 1;
        }
        events
    }

    pub fn pretrain_annotations(&self) -> Vec<AnnotationEvent> {
        self.oracle(&self.pretrain_batch(), POOL_NOISE_STREAM, PRETRAIN_CYCLE)
    }

    pub fn cycle_annotations(&self, k: usize) -> Vec<AnnotationEvent> {
        self.oracle(&self.cycle_batch(k, self.cfg.per_class), noise_stream(k), k as i64)
    }

    pub fn seed_state(&self, log: &[AnnotationEvent]) -> Result<ScoreState, PropagationError> {
        init_scores(&self.graph, log, &self.prop)
    }

    /// Seeds from the whole log and propagates from scratch.
    pub fn propagate(&self, log: &[AnnotationEvent]) -> Result<(ScoreState, PropagationReport), PropagationError> {
        let mut s = self.seed_state(log)?;
        let report = propagate(&self.graph, &mut s, &self.sim, &self.prop);
        Ok((s, report))
    }

    pub fn manifest(&self, modes: &[Mode]) -> RunManifest {
        RunManifest {
            seed: self.cfg.seed,
            config_hash: self.config_hash.clone(),
            schema_hash: self.graph.schema().hash(),
            modes: modes.to_vec(),
            nodes: self.graph.len(),
            split_sizes: (self.split.train.len(), self.split.val.len(), self.split.test.len()),
            part_sizes: self.parts.iter().map(Vec::len).collect(),
            harness: self.cfg.clone(),
            propagation: self.prop,
        }
    }
}

/// Model input for node `i`: dense features, `degree / avg_degree`, and the
/// feedback slot (`S_i / 100`; seeds only in fb, 0 in no_fb).
pub fn featurize(g: &TransactionGraph, s: &ScoreState, i: usize, mode: Mode) -> Vec<f64> {
    let t = g.node(i);
    let mut v = t.features.clone().unwrap_or_default();
    let avg = g.avg_degree();
    v.push(if avg > 0.0 { g.degree(i) as f64 / avg } else { 0.0 });
    v.push(match mode {
        Mode::NoFb => 0.0,
        Mode::Fb if s.is_seed(i) => s.score(i) / 100.0,
        Mode::Fb => 0.0,
        Mode::Fp => s.score(i) / 100.0,
    });
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartMetrics {
    pub part: usize,
    /// `None` when the part lacks one of the classes.
    pub auc: Option<f64>,
    /// `None` when the part has no positives.
    pub recall: Option<f64>,
    pub size: usize,
    pub positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub auc: Option<f64>,
    pub recall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleCount {
    pub cycle: i64,
    pub annotations: usize,
    pub fraud: usize,
    pub legit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub config_hash: String,
    /// Annotations the mode consumed, by cycle; empty for no_fb.
    pub annotation_counts: Vec<CycleCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: Mode,
    pub per_part: Vec<PartMetrics>,
    /// Metrics over the predictions of all parts pooled.
    pub aggregate: AggregateMetrics,
    pub run_meta: RunMeta,
}

impl EvalReport {
    /// Least-squares slope of per-part AUC against part index, over parts
    /// with a defined AUC.
    pub fn auc_slope(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self.per_part.iter().filter_map(|p| p.auc.map(|a| (p.part as f64, a))).collect();
        if pts.len() < 2 {
            return None;
        }
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
        Some(sxy / sxx)
    }
}

/// Reproducibility record for one ablation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub config_hash: String,
    pub schema_hash: String,
    pub modes: Vec<Mode>,
    pub nodes: usize,
    pub split_sizes: (usize, usize, usize),
    pub part_sizes: Vec<usize>,
    pub harness: HarnessConfig,
    pub propagation: PropagationConfig,
}

struct ModeRun {
    mode: Mode,
    model: Option<LinearModel>,
    per_part: Vec<PartMetrics>,
    pooled_scores: Vec<f64>,
    pooled_labels: Vec<bool>,
}

impl ModeRun {
    fn train(&mut self, p: &Protocol, s: &ScoreState) -> Result<(), TrainError> {
        let g = p.graph();
        let data: Vec<(Vec<f64>, bool)> =
            p.split.train.iter().map(|&i| (featurize(g, s, i, self.mode), g.node(i).is_fraud())).collect();
        self.model = Some(train_linear(&data, &p.cfg.train)?);
        Ok(())
    }

    fn evaluate(&mut self, p: &Protocol, s: &ScoreState, k: usize) {
        let g = p.graph();
        let model = self.model.as_ref().expect("trained before evaluation");
        let idx = p.part(k);
        let scores: Vec<f64> = idx.iter().map(|&i| model.predict_proba(&featurize(g, s, i, self.mode))).collect();
        let labels: Vec<bool> = idx.iter().map(|&i| g.node(i).is_fraud()).collect();
        self.per_part.push(PartMetrics {
            part: k,
            auc: roc_auc(&scores, &labels).ok(),
            recall: recall_at_threshold(&scores, &labels, p.cfg.threshold).ok(),
            size: idx.len(),
            positives: labels.iter().filter(|&&l| l).count(),
        });
        self.pooled_scores.extend(scores);
        self.pooled_labels.extend(labels);
    }
}

/// Stepwise driver for one or more modes over a shared [`Protocol`].
pub struct AblationRun {
    protocol: Arc<Protocol>,
    runs: Vec<ModeRun>,
    next_part: usize,
}

impl AblationRun {
    pub fn new(protocol: Arc<Protocol>, modes: &[Mode]) -> Self {
        let mut seen = Vec::new();
        for &m in modes {
            if !seen.contains(&m) {
                seen.push(m);
            }
        }
        let runs = seen
            .into_iter()
            .map(|mode| ModeRun { mode, model: None, per_part: Vec::new(), pooled_scores: Vec::new(), pooled_labels: Vec::new() })
            .collect();
        Self { protocol, runs, next_part: 0 }
    }

    pub fn protocol(&self) -> &Arc<Protocol> {
        &self.protocol
    }

    pub fn modes(&self) -> Vec<Mode> {
        self.runs.iter().map(|r| r.mode).collect()
    }

    pub fn is_trained(&self) -> bool {
        self.runs.iter().all(|r| r.model.is_some())
    }

    /// Index of the next part to evaluate.
    pub fn next_part(&self) -> usize {
        self.next_part
    }

    pub fn is_finished(&self) -> bool {
        self.next_part >= self.protocol.part_count()
    }

    pub fn model(&self, mode: Mode) -> Option<&LinearModel> {
        self.runs.iter().find(|r| r.mode == mode).and_then(|r| r.model.as_ref())
    }

    fn states(&self, log: &[AnnotationEvent], propagated: Option<&ScoreState>) -> Result<Vec<ScoreState>, HarnessError> {
        let p = &self.protocol;
        self.runs
            .iter()
            .map(|r| match r.mode {
                Mode::NoFb => Ok(ScoreState::empty(p.graph().len())),
                Mode::Fb => Ok(p.seed_state(log)?),
                Mode::Fp => propagated.cloned().ok_or(HarnessError::MissingPropagation),
            })
            .collect()
    }

    fn train_all(&mut self, states: &[ScoreState]) -> Result<(), HarnessError> {
        let p = &self.protocol;
        self.runs.par_iter_mut().zip(states).try_for_each(|(r, s)| r.train(p, s))?;
        Ok(())
    }

    /// Trains every mode on the train split with feedback from `log`
    /// (`propagated` is the fp score state for that log).
    pub fn train(&mut self, log: &[AnnotationEvent], propagated: Option<&ScoreState>) -> Result<(), HarnessError> {
        if self.is_trained() {
            return Err(HarnessError::AlreadyTrained);
        }
        let states = self.states(log, propagated)?;
        self.train_all(&states)
    }

    /// Scores the next test part in every mode and returns its index.
    pub fn evaluate_next(&mut self, log: &[AnnotationEvent], propagated: Option<&ScoreState>) -> Result<usize, HarnessError> {
        if !self.is_trained() {
            return Err(HarnessError::NotTrained);
        }
        if self.is_finished() {
            return Err(HarnessError::Finished(self.protocol.part_count()));
        }
        let states = self.states(log, propagated)?;
        if self.protocol.cfg.retrain_per_part && self.next_part > 0 {
            self.train_all(&states)?;
        }
        let k = self.next_part;
        let p = &self.protocol;
        self.runs.par_iter_mut().zip(&states).for_each(|(r, s)| r.evaluate(p, s, k));
        self.next_part += 1;
        Ok(k)
    }

    pub fn report(&self, mode: Mode, log: &[AnnotationEvent]) -> Option<EvalReport> {
        let r = self.runs.iter().find(|r| r.mode == mode)?;
        let annotation_counts = if mode == Mode::NoFb { Vec::new() } else { self.cycle_counts(log) };
        Some(EvalReport {
            mode,
            per_part: r.per_part.clone(),
            aggregate: AggregateMetrics {
                auc: roc_auc(&r.pooled_scores, &r.pooled_labels).ok(),
                recall: recall_at_threshold(&r.pooled_scores, &r.pooled_labels, self.protocol.cfg.threshold).ok(),
            },
            run_meta: RunMeta {
                seed: self.protocol.cfg.seed,
                config_hash: self.protocol.config_hash.clone(),
                annotation_counts,
            },
        })
    }

    pub fn reports(&self, log: &[AnnotationEvent]) -> Vec<EvalReport> {
        self.runs.iter().filter_map(|r| self.report(r.mode, log)).collect()
    }

    fn cycle_counts(&self, log: &[AnnotationEvent]) -> Vec<CycleCount> {
        let mut by_cycle: BTreeMap<i64, CycleCount> = BTreeMap::new();
        for e in log {
            let c = by_cycle.entry(e.cycle).or_insert(CycleCount { cycle: e.cycle, annotations: 0, fraud: 0, legit: 0 });
            c.annotations += 1;
            if self.protocol.is_fraud(&e.node_id) {
                c.fraud += 1;
            } else {
                c.legit += 1;
            }
        }
        by_cycle.into_values().collect()
    }
}

/// Output of a full simulated run.
pub struct AblationOutcome {
    pub reports: Vec<EvalReport>,
    pub log: Vec<AnnotationEvent>,
    pub propagation_reports: Vec<PropagationReport>,
}

/// Drives `modes` through every test part with the simulated annotator.
pub fn run_protocol(protocol: &Arc<Protocol>, modes: &[Mode]) -> Result<AblationOutcome, HarnessError> {
    let needs_fp = modes.contains(&Mode::Fp);
    let mut run = AblationRun::new(Arc::clone(protocol), modes);
    let mut log = protocol.pretrain_annotations();
    let mut propagation_reports = Vec::new();
    let mut fp_state = None;
    if needs_fp {
        let (s, rep) = protocol.propagate(&log)?;
        fp_state = Some(s);
        propagation_reports.push(rep);
    }
    run.train(&log, fp_state.as_ref())?;
    let parts = protocol.part_count();
    for k in 0..parts {
        run.evaluate_next(&log, fp_state.as_ref())?;
        log.extend(protocol.cycle_annotations(k));
        if needs_fp && k + 1 < parts {
            let (s, rep) = protocol.propagate(&log)?;
            fp_state = Some(s);
            propagation_reports.push(rep);
        }
    }
    Ok(AblationOutcome { reports: run.reports(&log), log, propagation_reports })
}

/// Builds the protocol for `txs` and runs every mode in `modes`.
pub fn run_ablation(
    txs: Vec<Transaction>,
    schema: &AttributeSchema,
    prop: PropagationConfig,
    cfg: HarnessConfig,
    modes: &[Mode],
) -> Result<Vec<EvalReport>, HarnessError> {
    let protocol = Arc::new(Protocol::new(txs, schema, prop, cfg)?);
    Ok(run_protocol(&protocol, modes)?.reports)
}

/// Per-part rows `part,mode,auc,recall`; undefined metrics are left empty.
pub fn write_part_csv(mut w: impl std::io::Write, reports: &[EvalReport]) -> std::io::Result<()> {
    writeln!(w, "part,mode,auc,recall")?;
    let cell = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in reports {
        for p in &r.per_part {
            writeln!(w, "{},{},{},{}", p.part, r.mode, cell(p.auc), cell(p.recall))?;
        }
    }
    Ok(())
}
