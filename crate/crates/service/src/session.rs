//! Live annotation session: append-only log, score snapshots, cycle state.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use fbprop_core::annotation::{AnnotationEvent, PRETRAIN_CYCLE};
use fbprop_core::eval::{AblationRun, EvalReport, HarnessError, Mode, PartMetrics, Protocol};
use fbprop_core::propagation::{PropagationReport, ScoreState};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("score {0} is outside [0, 100]")]
    ScoreOutOfRange(f64),
    #[error("unknown node '{0}'")]
    UnknownNode(String),
    #[error("unknown cycle {0}")]
    UnknownCycle(i64),
    #[error("cycle {requested} is not open yet (current cycle {current})")]
    CycleNotReached { requested: i64, current: i64 },
    #[error("advance expected from cycle {expected}, session is at cycle {current}")]
    OutOfOrder { expected: i64, current: i64 },
    #[error("annotations changed since the last propagation; propagate before advancing")]
    PropagationPending,
    #[error("a propagation run is in flight")]
    Busy,
    #[error("every test part has been evaluated")]
    Finished,
    #[error("annotation log I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("annotation log line {line}: {message}")]
    Replay { line: usize, message: String },
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

/// One line of the persisted log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Annotation(AnnotationEvent),
    /// Propagation over the first `upto` annotations completed and was swapped in.
    Propagate { upto: usize },
    /// Test part `part` was evaluated with the first `upto` annotations.
    Advance { part: usize, upto: usize },
}

#[derive(Debug, Clone, Default)]
pub struct SessionOptions {
    pub log_path: Option<PathBuf>,
    /// Bearer token -> annotator id. Empty means tokens are not checked.
    pub tokens: HashMap<String, String>,
    /// Artificial delay inside each propagation run, for exercising the busy path.
    pub propagation_delay: Duration,
}

struct Inner {
    log: Vec<AnnotationEvent>,
    seeds: ScoreState,
    /// Latest propagated state and the log length it was computed from.
    scores: Arc<ScoreState>,
    scores_upto: usize,
    history: Vec<PropagationReport>,
    run: AblationRun,
    cycle: i64,
    last_ts: i64,
}

impl Inner {
    fn dirty(&self) -> bool {
        self.scores_upto != self.log.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionSummary {
    pub cycle: i64,
    pub parts: usize,
    pub annotations: usize,
    pub seed_count: usize,
    pub propagation_pending: bool,
    pub propagating: bool,
    pub propagations: usize,
    pub modes: Vec<Mode>,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModePartMetrics {
    pub mode: Mode,
    #[serde(flatten)]
    pub metrics: PartMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdvanceOutcome {
    pub part: usize,
    pub cycle: i64,
    pub metrics: Vec<ModePartMetrics>,
}

/// Point-in-time view of one node for queue and neighborhood payloads.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeScore {
    /// Value in the latest propagated snapshot.
    pub score: f64,
    pub seed: bool,
    /// Latest annotated score, including annotations not yet propagated.
    pub annotation: Option<f64>,
}

pub struct Session {
    protocol: Arc<Protocol>,
    inner: RwLock<Inner>,
    propagating: AtomicBool,
    writer: Mutex<Option<File>>,
    options: SessionOptions,
}

fn now_ms() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as i64)
}

impl Session {
    /// Opens a session, replaying `options.log_path` when it already exists.
    pub fn open(protocol: Arc<Protocol>, options: SessionOptions) -> Result<Self, SessionError> {
        let n = protocol.graph().len();
        let inner = Inner {
            log: Vec::new(),
            seeds: ScoreState::empty(n),
            scores: Arc::new(ScoreState::empty(n)),
            scores_upto: 0,
            history: Vec::new(),
            run: AblationRun::new(Arc::clone(&protocol), &Mode::ALL),
            cycle: PRETRAIN_CYCLE,
            last_ts: 0,
        };
        let session = Self {
            protocol,
            inner: RwLock::new(inner),
            propagating: AtomicBool::new(false),
            writer: Mutex::new(None),
            options,
        };
        if let Some(path) = session.options.log_path.clone() {
            if path.exists() {
                session.replay(&path)?;
            }
            let file = OpenOptions::new().create(true).append(true).open(&path)?;
            *session.writer.lock() = Some(file);
        }
        Ok(session)
    }

    fn replay(&self, path: &Path) -> Result<(), SessionError> {
        let reader = BufReader::new(File::open(path)?);
        for (k, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| SessionError::Replay { line: k + 1, message };
            let record: LogRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
            let mut inner = self.inner.write();
            match record {
                LogRecord::Annotation(ev) => self.apply_annotation(&mut inner, ev).map_err(|e| bad(e.to_string()))?,
                LogRecord::Propagate { upto } => {
                    if upto > inner.log.len() {
                        return Err(bad(format!("propagation over {upto} annotations, log has {}", inner.log.len())));
                    }
                    let (state, report) =
                        self.protocol.propagate(&inner.log[..upto]).map_err(|e| bad(e.to_string()))?;
                    inner.scores = Arc::new(state);
                    inner.scores_upto = upto;
                    inner.history.push(report);
                }
                LogRecord::Advance { part, upto } => {
                    if upto > inner.log.len() || part != inner.run.next_part() {
                        return Err(bad(format!("advance to part {part} does not follow the log")));
                    }
                    let log = inner.log[..upto].to_vec();
                    Self::evaluate(&mut inner, &log).map_err(|e| bad(e.to_string()))?;
                }
            }
        }
        Ok(())
    }

    fn persist(&self, record: &LogRecord) -> Result<(), SessionError> {
        if let Some(f) = self.writer.lock().as_mut() {
            let mut line = serde_json::to_vec(record).expect("log records serialize");
            line.push(b'\n');
            f.write_all(&line)?;
            f.flush()?;
        }
        Ok(())
    }

    pub fn protocol(&self) -> &Arc<Protocol> {
        &self.protocol
    }

    pub fn config_hash(&self) -> &str {
        self.protocol.config_hash()
    }

    /// Annotator for a bearer token; `None` when tokens are enforced and it is unknown.
    pub fn annotator_for(&self, token: Option<&str>) -> Option<String> {
        if self.options.tokens.is_empty() {
            return Some("anonymous".to_string());
        }
        token.and_then(|t| self.options.tokens.get(t).cloned())
    }

    fn apply_annotation(&self, inner: &mut Inner, ev: AnnotationEvent) -> Result<(), SessionError> {
        if !(ev.score.is_finite() && (0.0..=100.0).contains(&ev.score)) {
            return Err(SessionError::ScoreOutOfRange(ev.score));
        }
        if self.protocol.graph().index_of(&ev.node_id).is_none() {
            return Err(SessionError::UnknownNode(ev.node_id));
        }
        inner.last_ts = inner.last_ts.max(ev.ts);
        inner.log.push(ev);
        inner.seeds = self.protocol.seed_state(&inner.log).expect("validated annotations seed cleanly");
        Ok(())
    }

    /// Appends an annotation stamped with the server clock; returns the seed count.
    pub fn annotate(&self, node_id: &str, score: f64, annotator: &str) -> Result<usize, SessionError> {
        let mut inner = self.inner.write();
        let ev = AnnotationEvent {
            node_id: node_id.to_string(),
            score,
            annotator: annotator.to_string(),
            ts: now_ms().max(inner.last_ts + 1),
            cycle: inner.cycle,
        };
        self.apply_annotation(&mut inner, ev.clone())?;
        self.persist(&LogRecord::Annotation(ev))?;
        Ok(inner.seeds.seed_count())
    }

    /// Propagates from the current seed pool and swaps the result in.
    /// Fails with [`SessionError::Busy`] while another run is in flight.
    pub fn propagate(&self) -> Result<PropagationReport, SessionError> {
        if self.propagating.swap(true, Ordering::AcqRel) {
            return Err(SessionError::Busy);
        }
        let result = self.propagate_exclusive();
        self.propagating.store(false, Ordering::Release);
        result
    }

    fn propagate_exclusive(&self) -> Result<PropagationReport, SessionError> {
        let log = self.inner.read().log.clone();
        let (state, report) = self.protocol.propagate(&log).map_err(HarnessError::from)?;
        if !self.options.propagation_delay.is_zero() {
            std::thread::sleep(self.options.propagation_delay);
        }
        let mut inner = self.inner.write();
        self.persist(&LogRecord::Propagate { upto: log.len() })?;
        inner.scores = Arc::new(state);
        inner.scores_upto = log.len();
        inner.history.push(report.clone());
        Ok(report)
    }

    pub fn is_propagating(&self) -> bool {
        self.propagating.load(Ordering::Acquire)
    }

    fn evaluate(inner: &mut Inner, log: &[AnnotationEvent]) -> Result<usize, SessionError> {
        let scores = Arc::clone(&inner.scores);
        if !inner.run.is_trained() {
            inner.run.train(log, Some(&scores))?;
        }
        let part = inner.run.evaluate_next(log, Some(&scores))?;
        inner.cycle = part as i64;
        Ok(part)
    }

    /// Evaluates the next test part in every mode and opens its queue.
    pub fn advance(&self, expected: Option<i64>) -> Result<AdvanceOutcome, SessionError> {
        if self.is_propagating() {
            return Err(SessionError::Busy);
        }
        let mut inner = self.inner.write();
        if let Some(e) = expected {
            if e != inner.cycle {
                return Err(SessionError::OutOfOrder { expected: e, current: inner.cycle });
            }
        }
        if inner.run.is_finished() {
            return Err(SessionError::Finished);
        }
        if inner.dirty() {
            return Err(SessionError::PropagationPending);
        }
        let log = inner.log.clone();
        let part = Self::evaluate(&mut inner, &log)?;
        self.persist(&LogRecord::Advance { part, upto: log.len() })?;
        let metrics = Mode::ALL
            .iter()
            .filter_map(|&mode| {
                let metrics = inner.run.report(mode, &log)?.per_part.last()?.clone();
                Some(ModePartMetrics { mode, metrics })
            })
            .collect();
        Ok(AdvanceOutcome { part, cycle: inner.cycle, metrics })
    }

    /// Checks that `cycle`'s queue is open: -1 is the pre-train pool, `k ≥ 0`
    /// opens once part `k` has been evaluated.
    pub fn check_cycle(&self, cycle: i64) -> Result<(), SessionError> {
        if cycle < PRETRAIN_CYCLE || cycle >= self.protocol.part_count() as i64 {
            return Err(SessionError::UnknownCycle(cycle));
        }
        let current = self.inner.read().cycle;
        if cycle > current {
            return Err(SessionError::CycleNotReached { requested: cycle, current });
        }
        Ok(())
    }

    /// Ids of the deterministic batch for `cycle`.
    pub fn queue(&self, cycle: i64, per_class: usize) -> Result<Vec<String>, SessionError> {
        self.check_cycle(cycle)?;
        Ok(if cycle == PRETRAIN_CYCLE {
            self.protocol.pretrain_batch()
        } else {
            self.protocol.cycle_batch(cycle as usize, per_class)
        })
    }

    pub fn node_score(&self, i: usize) -> NodeScore {
        let inner = self.inner.read();
        Self::node_score_in(&inner, i)
    }

    fn node_score_in(inner: &Inner, i: usize) -> NodeScore {
        let seed = inner.seeds.is_seed(i);
        NodeScore { score: inner.scores.score(i), seed, annotation: seed.then(|| inner.seeds.score(i)) }
    }

    /// Node views for `indices` read under one lock, so they come from one snapshot.
    pub fn node_scores(&self, indices: &[usize]) -> Vec<NodeScore> {
        let inner = self.inner.read();
        indices.iter().map(|&i| Self::node_score_in(&inner, i)).collect()
    }

    pub fn report(&self, mode: Mode) -> Option<EvalReport> {
        let inner = self.inner.read();
        inner.run.report(mode, &inner.log)
    }

    pub fn reports(&self) -> Vec<EvalReport> {
        let inner = self.inner.read();
        inner.run.reports(&inner.log)
    }

    pub fn history(&self) -> Vec<PropagationReport> {
        self.inner.read().history.clone()
    }

    pub fn log(&self) -> Vec<AnnotationEvent> {
        self.inner.read().log.clone()
    }

    /// Current propagated snapshot.
    pub fn scores(&self) -> Arc<ScoreState> {
        Arc::clone(&self.inner.read().scores)
    }

    pub fn seeds(&self) -> ScoreState {
        self.inner.read().seeds.clone()
    }

    pub fn summary(&self) -> SessionSummary {
        let inner = self.inner.read();
        SessionSummary {
            cycle: inner.cycle,
            parts: self.protocol.part_count(),
            annotations: inner.log.len(),
            seed_count: inner.seeds.seed_count(),
            propagation_pending: inner.dirty(),
            propagating: self.is_propagating(),
            propagations: inner.history.len(),
            modes: inner.run.modes(),
            nodes: self.protocol.graph().len(),
        }
    }
}
