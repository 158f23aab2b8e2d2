use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fbprop_core::eval::{Mode, PoolSource};

#[derive(Debug, Parser)]
#[command(name = "fbprop", version, about = "Feedback-score propagation over shared-attribute transaction graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with planted fraud rings.
    Synth(SynthArgs),
    /// Build a graph from ingestion JSONL and write a binary snapshot.
    BuildGraph(BuildGraphArgs),
    /// Seed scores from annotations and propagate them.
    Propagate(PropagateArgs),
    /// Run the ablation protocol on an existing dataset or snapshot.
    Eval(EvalArgs),
    /// Generate a synthetic dataset and run the ablation protocol on it.
    Simulate(SimulateArgs),
    /// Serve the annotation API.
    Serve(ServeArgs),
    /// Print graph statistics.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON config with attributes, weights, hub_cap and propagation settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `propagation.max_hops`.
    #[arg(long, allow_negative_numbers = true, value_parser = parse_positive)]
    pub max_hops: Option<usize>,
    /// Overrides `propagation.epsilon`.
    #[arg(long, allow_negative_numbers = true, value_parser = parse_non_negative)]
    pub epsilon: Option<f64>,
}

/// Exactly one graph source.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct GraphSource {
    /// Ingestion JSONL.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Binary snapshot written by `build-graph`.
    #[arg(long)]
    pub graph: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthOptions {
    #[arg(long, default_value_t = 20_000, allow_negative_numbers = true, value_parser = parse_positive)]
    pub n: usize,
    #[arg(long, default_value_t = 0.0107, allow_negative_numbers = true, value_parser = parse_unit)]
    pub fraud_rate: f64,
}

#[derive(Debug, Args)]
pub struct HarnessArgs {
    /// Test parts, evaluated in chronological order.
    #[arg(long, default_value_t = 10, allow_negative_numbers = true, value_parser = parse_positive)]
    pub parts: usize,
    /// Annotations per class per cycle.
    #[arg(long, default_value_t = 150)]
    pub per_class: usize,
    /// Probability the simulated annotator flips a label.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true, value_parser = parse_unit)]
    pub noise: f64,
    /// Pre-train pool size; scales with the dataset when omitted.
    #[arg(long)]
    pub pool_size: Option<usize>,
    #[arg(long, value_enum, default_value_t = PoolSourceArg::Train)]
    pub pool_source: PoolSourceArg,
    /// Retrain the model before every test part after the first.
    #[arg(long)]
    pub retrain_per_part: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PoolSourceArg {
    Train,
    Val,
}

impl From<PoolSourceArg> for PoolSource {
    fn from(p: PoolSourceArg) -> Self {
        match p {
            PoolSourceArg::Train => PoolSource::Train,
            PoolSourceArg::Val => PoolSource::Val,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub synth: SynthOptions,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Schema source; only the attribute section is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output JSONL. The manifest goes to `<out>.manifest.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildGraphArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output snapshot. The manifest goes to `<out>.manifest.json`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PropagateArgs {
    #[command(flatten)]
    pub source: GraphSource,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Annotation JSONL: `{"node_id", "score"}` plus optional `annotator`, `ts`, `cycle`.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Drop zero scores from the dump.
    #[arg(long)]
    pub omit_zeros: bool,
    /// Output directory for scores.jsonl, report.json and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub source: GraphSource,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub harness: HarnessArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "no_fb,fb,fp")]
    pub modes: Vec<Mode>,
    /// Output directory for reports.json, parts.csv, annotations.jsonl and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub synth: SynthOptions,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub harness: HarnessArgs,
    /// Seeds both the generator and the protocol.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "no_fb,fb,fp")]
    pub modes: Vec<Mode>,
    /// Output directory, as for `eval`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub source: GraphSource,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub harness: HarnessArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Append-only annotation log, replayed on start when present.
    #[arg(long)]
    pub annotation_log: Option<PathBuf>,
    /// Accepted bearer token as TOKEN=ANNOTATOR; repeatable. Without any, requests are anonymous.
    #[arg(long = "token", value_parser = parse_token)]
    pub tokens: Vec<(String, String)>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub source: GraphSource,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Write the statistics here instead of stdout; the manifest goes to `<out>.manifest.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_f64(s: &str) -> Result<f64, String> {
    let x: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("'{s}' is not finite"))
    }
}

fn parse_non_negative(s: &str) -> Result<f64, String> {
    let x = parse_f64(s)?;
    if x >= 0.0 {
        Ok(x)
    } else {
        Err(format!("must be ≥ 0, got {x}"))
    }
}

fn parse_unit(s: &str) -> Result<f64, String> {
    let x = parse_f64(s)?;
    if (0.0..=1.0).contains(&x) {
        Ok(x)
    } else {
        Err(format!("must be in [0, 1], got {x}"))
    }
}

fn parse_positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) | Err(_) => Err(format!("'{s}' is not a positive integer")),
        Ok(n) => Ok(n),
    }
}

fn parse_token(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((t, a)) if !t.is_empty() && !a.is_empty() => Ok((t.to_string(), a.to_string())),
        _ => Err(format!("expected TOKEN=ANNOTATOR, got '{s}'")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn value_parsers() {
        assert!(parse_non_negative("-1").is_err());
        assert!(parse_non_negative("nan").is_err());
        assert_eq!(parse_non_negative("0"), Ok(0.0));
        assert!(parse_unit("1.5").is_err());
        assert!(parse_positive("0").is_err());
        assert_eq!(parse_token("abc=alice"), Ok(("abc".into(), "alice".into())));
        assert!(parse_token("abc").is_err());
        assert!(parse_token("=alice").is_err());
    }

    #[test]
    fn modes_list() {
        let cli = Cli::try_parse_from(["fbprop", "simulate", "--modes", "fp,no_fb", "--out", "x"]).unwrap();
        let Command::Simulate(a) = cli.command else { panic!() };
        assert_eq!(a.modes, vec![Mode::Fp, Mode::NoFb]);
        assert!(Cli::try_parse_from(["fbprop", "simulate", "--modes", "fp,zz", "--out", "x"]).is_err());
    }

    #[test]
    fn one_graph_source() {
        assert!(Cli::try_parse_from(["fbprop", "stats"]).is_err());
        assert!(Cli::try_parse_from(["fbprop", "stats", "--input", "a", "--graph", "b"]).is_err());
        assert!(Cli::try_parse_from(["fbprop", "stats", "--graph", "b"]).is_ok());
    }
}
