use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use fbprop_core::annotation::PRETRAIN_CYCLE;
use fbprop_core::config::{config_hash, load_config, AttributeSchema, PropagationConfig};
use fbprop_core::eval::{run_protocol, write_part_csv, EvalReport, HarnessConfig, Mode, Protocol};
use fbprop_core::graph::{build_graph, ingest, write_jsonl, TransactionGraph};
use fbprop_core::propagation::{self, write_score_dump};
use fbprop_core::similarity::CosineSimilarity;
use fbprop_core::synth::{self, SynthParams};
use fbprop_core::{hash, snapshot, AnnotationEvent};
use fbprop_service::{Session, SessionOptions};
use serde::{Deserialize, Serialize};

use crate::args::*;

/// A flag combination rejected after parsing. Exits like a clap error.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

#[derive(Debug, Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

fn digest(path: &Path) -> Result<InputDigest> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let sha256 = hash::sha256(&bytes).iter().map(|b| format!("{b:02x}")).collect();
    Ok(InputDigest { path: path.display().to_string(), sha256 })
}

/// Written next to every run's outputs.
#[derive(Debug, Serialize)]
struct Manifest<T: Serialize> {
    command: &'static str,
    version: &'static str,
    seed: Option<u64>,
    config_hash: String,
    schema_hash: String,
    inputs: Vec<InputDigest>,
    outputs: Vec<String>,
    details: T,
}

impl<T: Serialize> Manifest<T> {
    fn new(command: &'static str, schema: &AttributeSchema, prop: &PropagationConfig, details: T) -> Self {
        Self {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed: None,
            config_hash: config_hash(schema, prop),
            schema_hash: schema.hash(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            details,
        }
    }

    fn input(mut self, path: Option<&Path>) -> Result<Self> {
        if let Some(p) = path {
            self.inputs.push(digest(p)?);
        }
        Ok(self)
    }

    fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    fn outputs(mut self, paths: &[&Path]) -> Self {
        self.outputs = paths.iter().map(|p| p.display().to_string()).collect();
        self
    }

    fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn load_schema(config: Option<&Path>) -> Result<(AttributeSchema, PropagationConfig)> {
    match config {
        Some(p) => Ok(load_config(p)?),
        None => Ok((AttributeSchema::default(), PropagationConfig::default())),
    }
}

fn load_full_config(args: &ConfigArgs) -> Result<(AttributeSchema, PropagationConfig)> {
    let (schema, mut prop) = load_schema(args.config.as_deref())?;
    if let Some(h) = args.max_hops {
        prop.max_hops = h;
    }
    if let Some(e) = args.epsilon {
        prop.epsilon = e;
    }
    let violations = prop.validate();
    if !violations.is_empty() {
        return Err(usage(violations.join("; ")));
    }
    Ok((schema, prop))
}

/// Loads a graph from JSONL or a snapshot. A snapshot carries its own schema,
/// which must agree with `--config` when both are given.
fn load_graph(source: &GraphSource, schema: &AttributeSchema, explicit_schema: bool) -> Result<TransactionGraph> {
    match (&source.input, &source.graph) {
        (Some(input), _) => {
            let txs = ingest(input, schema)?;
            Ok(build_graph(txs, schema)?)
        }
        (None, Some(path)) => {
            let g = snapshot::read(path).with_context(|| format!("cannot load snapshot {}", path.display()))?;
            if explicit_schema && g.schema() != schema {
                anyhow::bail!(
                    "snapshot schema {} differs from --config schema {}",
                    g.schema().hash(),
                    schema.hash()
                );
            }
            Ok(g)
        }
        (None, None) => Err(usage("one of --input or --graph is required")),
    }
}

fn source_path(source: &GraphSource) -> Option<&Path> {
    source.input.as_deref().or(source.graph.as_deref())
}

fn harness_config(h: &HarnessArgs, seed: u64) -> HarnessConfig {
    HarnessConfig {
        seed,
        parts: h.parts,
        per_class: h.per_class,
        noise: h.noise,
        pool_size: h.pool_size,
        pool_source: h.pool_source.into(),
        retrain_per_part: h.retrain_per_part,
        ..Default::default()
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::BuildGraph(a) => build(a),
        Command::Propagate(a) => propagate(a),
        Command::Eval(a) => eval(a),
        Command::Simulate(a) => simulate(a),
        Command::Serve(a) => serve(a),
        Command::Stats(a) => stats(a),
    }
}

fn synth_params(o: &SynthOptions, seed: u64) -> Result<SynthParams> {
    let p = SynthParams { n: o.n, fraud_rate: o.fraud_rate, rng_seed: seed, ..Default::default() };
    let violations = p.validate();
    if !violations.is_empty() {
        return Err(usage(violations.join("; ")));
    }
    Ok(p)
}

fn synth(a: SynthArgs) -> Result<()> {
    let (schema, prop) = load_schema(a.config.as_deref())?;
    let p = synth_params(&a.synth, a.seed)?;
    let txs = synth::generate(&p, &schema)?;
    let mut w = create(&a.out)?;
    write_jsonl(&mut w, &txs)?;
    w.flush()?;
    let details = synth::manifest(&p, &schema, &txs);
    let manifest_path = sidecar(&a.out);
    Manifest::new("synth", &schema, &prop, &details)
        .input(a.config.as_deref())?
        .seed(a.seed)
        .outputs(&[&a.out, &manifest_path])
        .write(&manifest_path)?;
    log::info!("wrote {} transactions ({} fraud) to {}", details.transactions, details.fraud, a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct GraphDetails<'a> {
    stats: fbprop_core::GraphStats,
    max_weight: f64,
    hubs: &'a [fbprop_core::graph::HubRecord],
}

fn graph_details(g: &TransactionGraph) -> GraphDetails<'_> {
    GraphDetails { stats: g.stats(), max_weight: g.max_weight(), hubs: g.hubs() }
}

fn build(a: BuildGraphArgs) -> Result<()> {
    let (schema, prop) = load_schema(a.config.as_deref())?;
    let g = build_graph(ingest(&a.input, &schema)?, &schema)?;
    snapshot::write(&g, &a.out).with_context(|| format!("cannot write {}", a.out.display()))?;
    let manifest_path = sidecar(&a.out);
    Manifest::new("build-graph", &schema, &prop, graph_details(&g))
        .input(Some(&a.input))?
        .input(a.config.as_deref())?
        .outputs(&[&a.out, &manifest_path])
        .write(&manifest_path)?;
    log::info!("{} nodes, {} edges, avg degree {:.2}", g.len(), g.edge_count(), g.avg_degree());
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationLine {
    node_id: String,
    score: f64,
    #[serde(default)]
    annotator: Option<String>,
    #[serde(default)]
    ts: i64,
    #[serde(default = "pretrain")]
    cycle: i64,
}

fn pretrain() -> i64 {
    PRETRAIN_CYCLE
}

fn read_annotations(path: &Path) -> Result<Vec<AnnotationEvent>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let a: AnnotationLine =
            serde_json::from_str(&line).with_context(|| format!("{}:{}: bad annotation", path.display(), k + 1))?;
        out.push(AnnotationEvent {
            node_id: a.node_id,
            score: a.score,
            annotator: a.annotator.unwrap_or_else(|| "anonymous".to_string()),
            ts: a.ts,
            cycle: a.cycle,
        });
    }
    Ok(out)
}

fn propagate(a: PropagateArgs) -> Result<()> {
    let (schema, prop) = load_full_config(&a.config)?;
    let g = load_graph(&a.source, &schema, a.config.config.is_some())?;
    let annotations = read_annotations(&a.annotations)?;
    let sim = CosineSimilarity::new(&g);
    let (state, report) = propagation::run(&g, &annotations, &sim, &prop)?;

    let scores = a.out.join("scores.jsonl");
    let report_path = a.out.join("report.json");
    let manifest_path = a.out.join("manifest.json");
    let mut w = create(&scores)?;
    write_score_dump(&mut w, &g, &state, a.omit_zeros)?;
    w.flush()?;
    write_json(&report_path, &report)?;
    Manifest::new("propagate", g.schema(), &prop, serde_json::json!({ "seeds": state.seed_count(), "propagation": prop }))
        .input(source_path(&a.source))?
        .input(a.config.config.as_deref())?
        .input(Some(&a.annotations))?
        .outputs(&[&scores, &report_path, &manifest_path])
        .write(&manifest_path)?;
    log::info!("{} hops, {:?}, {} nodes scored", report.hops_executed, report.terminated_by, report.nodes_scored);
    Ok(())
}

#[derive(Serialize)]
struct EvalDetails<T: Serialize> {
    run: fbprop_core::eval::RunManifest,
    propagation_runs: usize,
    annotations: usize,
    generator: Option<T>,
}

fn run_and_write<T: Serialize>(
    command: &'static str,
    protocol: Protocol,
    modes: &[Mode],
    out: &Path,
    inputs: &[Option<&Path>],
    generator: Option<T>,
) -> Result<Vec<EvalReport>> {
    let protocol = Arc::new(protocol);
    let outcome = run_protocol(&protocol, modes)?;
    let reports_path = out.join("reports.json");
    let csv_path = out.join("parts.csv");
    let log_path = out.join("annotations.jsonl");
    let manifest_path = out.join("manifest.json");

    write_json(&reports_path, &outcome.reports)?;
    let mut w = create(&csv_path)?;
    write_part_csv(&mut w, &outcome.reports)?;
    w.flush()?;
    let mut w = create(&log_path)?;
    for e in &outcome.log {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;

    let details = EvalDetails {
        run: protocol.manifest(modes),
        propagation_runs: outcome.propagation_reports.len(),
        annotations: outcome.log.len(),
        generator,
    };
    let mut manifest = Manifest::new(command, protocol.graph().schema(), protocol.propagation_config(), details)
        .seed(protocol.config().seed)
        .outputs(&[&reports_path, &csv_path, &log_path, &manifest_path]);
    for p in inputs {
        manifest = manifest.input(*p)?;
    }
    manifest.write(&manifest_path)?;
    Ok(outcome.reports)
}

fn print_summary(reports: &[EvalReport]) {
    let fmt = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
    println!("mode\tauc\trecall\tslope");
    for r in reports {
        println!("{}\t{}\t{}\t{}", r.mode, fmt(r.aggregate.auc), fmt(r.aggregate.recall), fmt(r.auc_slope()));
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    let (schema, prop) = load_full_config(&a.config)?;
    let g = load_graph(&a.source, &schema, a.config.config.is_some())?;
    let protocol = Protocol::from_graph(g, prop, harness_config(&a.harness, a.seed))?;
    let inputs = [source_path(&a.source), a.config.config.as_deref()];
    let reports = run_and_write::<()>("eval", protocol, &a.modes, &a.out, &inputs, None)?;
    print_summary(&reports);
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let (schema, prop) = load_full_config(&a.config)?;
    let p = synth_params(&a.synth, a.seed)?;
    let txs = synth::generate(&p, &schema)?;
    let generator = synth::manifest(&p, &schema, &txs);
    let protocol = Protocol::new(txs, &schema, prop, harness_config(&a.harness, a.seed))?;
    let inputs = [a.config.config.as_deref()];
    let reports = run_and_write("simulate", protocol, &a.modes, &a.out, &inputs, Some(generator))?;
    print_summary(&reports);
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let (schema, prop) = load_full_config(&a.config)?;
    let g = load_graph(&a.source, &schema, a.config.config.is_some())?;
    let protocol = Arc::new(Protocol::from_graph(g, prop, harness_config(&a.harness, a.seed))?);
    let tokens: HashMap<String, String> = a.tokens.iter().cloned().collect();
    if let Some(log_path) = &a.annotation_log {
        let manifest_path = sidecar(log_path);
        Manifest::new("serve", protocol.graph().schema(), &prop, protocol.manifest(&Mode::ALL))
            .input(source_path(&a.source))?
            .input(a.config.config.as_deref())?
            .seed(a.seed)
            .outputs(&[log_path, &manifest_path])
            .write(&manifest_path)?;
    }
    let options = SessionOptions { log_path: a.annotation_log.clone(), tokens, ..Default::default() };
    let session = Arc::new(Session::open(protocol, options)?);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port))
            .await
            .with_context(|| format!("cannot bind {}:{}", a.host, a.port))?;
        log::info!("listening on http://{}", listener.local_addr()?);
        fbprop_service::serve(session, listener).await?;
        Ok(())
    })
}

fn stats(a: StatsArgs) -> Result<()> {
    let (schema, prop) = load_schema(a.config.as_deref())?;
    let g = load_graph(&a.source, &schema, a.config.is_some())?;
    let details = graph_details(&g);
    match &a.out {
        None => {
            println!("{}", serde_json::to_string_pretty(&details)?);
        }
        Some(out) => {
            write_json(out, &details)?;
            let manifest_path = sidecar(out);
            Manifest::new("stats", g.schema(), &prop, ())
                .input(source_path(&a.source))?
                .input(a.config.as_deref())?
                .outputs(&[out, &manifest_path])
                .write(&manifest_path)?;
        }
    }
    Ok(())
}
