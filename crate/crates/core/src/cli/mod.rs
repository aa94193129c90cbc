//! The `nngp-card` command line.
//!
//! Each subcommand reads the artifacts of an earlier stage, checks that
//! their hashes agree and writes its own artifact with a header that
//! extends the hash chain. Output is byte-identical across runs given the
//! same inputs, config and seed, whatever the thread count.

mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use crate::error::{Error, Result};
use crate::gp::{CovMode, IntervalMode, PredictOptions, VarianceMode};
use crate::kernel::{Activation, BiasPlacement, KernelConfig, KernelFamily};
pub use commands::{evaluation_report, generate_queries, prediction_records, EvaluationReport, PredictionRecord};
pub use config::{PipelineConfig, WorkloadMode};

#[derive(Debug, Parser)]
#[command(name = "nngp-card", version, about = "Cardinality estimation with neural-network Gaussian processes")]
pub struct Cli {
    /// Worker threads; defaults to the available cores. Results do not
    /// depend on it.
    #[arg(long, global = true, env = "NNGP_CARD_THREADS")]
    pub threads: Option<usize>,

    /// JSON pipeline config. Command-line flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic database as CSV files plus a catalog.
    Synth(SynthArgs),
    /// Load a catalog, validate it and print a summary with its hash.
    Ingest(IngestArgs),
    /// Generate unlabeled queries against a catalog.
    GenQueries(GenQueriesArgs),
    /// Deduplicate, label with the exact oracle, drop empty results and
    /// optionally split into train/valid/test.
    Label(LabelArgs),
    /// Encode queries into a feature matrix.
    Encode(EncodeArgs),
    /// Fit the GP on an encoded, labeled matrix.
    Train(TrainArgs),
    /// Predict cardinalities with uncertainty for an encoded matrix.
    Predict(PredictArgs),
    /// Q-error and uncertainty report for labeled predictions.
    Evaluate(EvaluateArgs),
    /// Uncertainty-sampling active learning.
    ActiveLearn(ActiveLearnArgs),
    /// Check the kernels against sampling and the GP against its exact
    /// identities.
    Selfcheck(SelfcheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// One relation `T` with six numerical attributes.
    Single,
    /// Four relations joined in a key/foreign-key chain.
    Chain,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Built-in database, used when --spec is absent.
    #[arg(long, value_enum, default_value = "single")]
    pub preset: Preset,
    /// Synthesis spec (JSON) instead of a preset.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Rows of the single-relation preset.
    #[arg(long, default_value_t = 10_000)]
    pub rows: usize,
    /// Size of the smallest relation of the chain preset.
    #[arg(long, default_value_t = 100)]
    pub scale: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; receives `catalog.json` and one CSV and schema
    /// per relation.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    /// Also write the summary here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenQueriesArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long, value_enum)]
    pub mode: Option<WorkloadMode>,
    /// Relation for single-relation queries.
    #[arg(long)]
    pub relation: Option<String>,
    /// Comma-separated condition counts (single mode).
    #[arg(long, value_delimiter = ',')]
    pub conditions: Option<Vec<usize>>,
    /// Comma-separated join counts (join mode).
    #[arg(long, value_delimiter = ',')]
    pub joins: Option<Vec<usize>>,
    /// Number of queries before deduplication.
    #[arg(short, long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    /// Labeled workload.
    #[arg(long)]
    pub out: PathBuf,
    /// Write `train.jsonl`, `valid.jsonl`, `test.jsonl` and `split.json`
    /// here, stratified by condition count.
    #[arg(long)]
    pub split_dir: Option<PathBuf>,
    /// Comma-separated train,valid,test fractions.
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub catalog: PathBuf,
    /// Query or labeled workload file.
    #[arg(long)]
    pub queries: PathBuf,
    /// Encoded matrix.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the encoding layout as JSON.
    #[arg(long)]
    pub layout_out: Option<PathBuf>,
    /// Bits per factorized slot.
    #[arg(long)]
    pub chunk_size: Option<usize>,
    /// Categorical domains larger than this are factorized.
    #[arg(long)]
    pub bitmap_threshold: Option<usize>,
    /// Keep factorized slots as raw integers.
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Default, Args)]
pub struct KernelArgs {
    /// Weight variance.
    #[arg(long)]
    pub sigma_w_sq: Option<f64>,
    /// Bias variance.
    #[arg(long)]
    pub sigma_b_sq: Option<f64>,
    /// Hidden layers of the NNGP recursion.
    #[arg(long)]
    pub depth: Option<usize>,
    /// relu or erf.
    #[arg(long, value_parser = serde_enum::<Activation>)]
    pub activation: Option<Activation>,
    /// Observation noise variance on the training diagonal.
    #[arg(long)]
    pub noise_sq: Option<f64>,
    /// Use an RBF kernel with this length scale instead of the NNGP.
    #[arg(long)]
    pub rbf_length_scale: Option<f64>,
    /// all_entries or diagonal.
    #[arg(long, value_parser = serde_enum::<BiasPlacement>)]
    pub bias_placement: Option<BiasPlacement>,
}

impl KernelArgs {
    pub fn apply(&self, cfg: &mut KernelConfig) {
        if let Some(v) = self.sigma_w_sq {
            cfg.sigma_w_sq = v;
        }
        if let Some(v) = self.sigma_b_sq {
            cfg.sigma_b_sq = v;
        }
        if let Some(v) = self.depth {
            cfg.depth = v;
        }
        if let Some(v) = self.activation {
            cfg.activation = v;
        }
        if let Some(v) = self.noise_sq {
            cfg.noise_sq = v;
        }
        if let Some(l) = self.rbf_length_scale {
            cfg.family = KernelFamily::Rbf { length_scale: l };
        }
        if let Some(v) = self.bias_placement {
            cfg.bias_placement = v;
        }
    }
}

#[derive(Debug, Default, Args)]
pub struct PredictFlags {
    /// Confidence level of the interval.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Interval half-width from std_dev or variance.
    #[arg(long, value_parser = serde_enum::<IntervalMode>)]
    pub interval: Option<IntervalMode>,
    /// latent or predictive (adds the noise variance).
    #[arg(long, value_parser = serde_enum::<VarianceMode>)]
    pub variance: Option<VarianceMode>,
    /// CoV in log space (log) or of the count (lognormal_count).
    #[arg(long, value_parser = serde_enum::<CovMode>)]
    pub cov: Option<CovMode>,
}

impl PredictFlags {
    pub fn apply(&self, o: &mut PredictOptions) {
        if let Some(v) = self.delta {
            o.delta = v;
        }
        if let Some(v) = self.interval {
            o.interval = v;
        }
        if let Some(v) = self.variance {
            o.variance = v;
        }
        if let Some(v) = self.cov {
            o.cov = v;
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Encoded, labeled training matrix.
    #[arg(long)]
    pub train: PathBuf,
    /// Model file.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub kernel: KernelArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Encoded matrix built with the model's layout.
    #[arg(long)]
    pub input: PathBuf,
    /// Predictions, one JSON record per query.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub predict: PredictFlags,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Labeled predictions from `predict`.
    #[arg(long, conflicts_with_all = ["model", "input"])]
    pub predictions: Option<PathBuf>,
    /// Model to evaluate on --input instead of a predictions file.
    #[arg(long, requires = "input")]
    pub model: Option<PathBuf>,
    /// Encoded, labeled matrix.
    #[arg(long, requires = "model")]
    pub input: Option<PathBuf>,
    /// Report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-query CoV and q-error as CSV.
    #[arg(long)]
    pub scatter: Option<PathBuf>,
    #[command(flatten)]
    pub predict: PredictFlags,
}

#[derive(Debug, Args)]
pub struct ActiveLearnArgs {
    /// Initial training matrix (labeled).
    #[arg(long)]
    pub train: PathBuf,
    /// Candidate pool. Its labels, if any, are revealed only on
    /// selection; otherwise --catalog and --pool-queries label with the
    /// oracle.
    #[arg(long)]
    pub pool: PathBuf,
    /// Labeled test matrix for the per-iteration MSE.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, requires = "pool_queries")]
    pub catalog: Option<PathBuf>,
    /// Queries of the pool, matched by id.
    #[arg(long, requires = "catalog")]
    pub pool_queries: Option<PathBuf>,
    /// Queries labeled per iteration.
    #[arg(short, long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Per-iteration history.
    #[arg(long)]
    pub out: PathBuf,
    /// Final model.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    #[command(flatten)]
    pub kernel: KernelArgs,
    /// CoV used for ranking: log or lognormal_count.
    #[arg(long, value_parser = serde_enum::<CovMode>)]
    pub cov: Option<CovMode>,
}

#[derive(Debug, Args)]
pub struct SelfcheckArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Monte-Carlo samples per kernel input.
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: usize,
    /// Random kernel inputs per activation.
    #[arg(long, default_value_t = 10)]
    pub inputs: usize,
}

/// Parses a snake_case enum value through its serde representation.
fn serde_enum<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::InvalidArgument("--threads must be positive".into()));
        }
        // a second call in one process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let cfg = PipelineConfig::load_or_default(cli.config.as_deref())?;
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Synth(a) => commands::synth(&cfg, a, &mut out),
        Command::Ingest(a) => commands::ingest(a, &mut out),
        Command::GenQueries(a) => commands::gen_queries(&cfg, a, &mut out),
        Command::Label(a) => commands::label(&cfg, a, &mut out),
        Command::Encode(a) => commands::encode(&cfg, a, &mut out),
        Command::Train(a) => commands::train(&cfg, a, &mut out),
        Command::Predict(a) => commands::predict(&cfg, a, &mut out),
        Command::Evaluate(a) => commands::evaluate(&cfg, a, &mut out),
        Command::ActiveLearn(a) => commands::active_learn(&cfg, a, &mut out),
        Command::Selfcheck(a) => commands::selfcheck(&cfg, a, &mut out),
    }
}

/// Process entry point: parses arguments, runs, and reports failures as
/// `{"error": {"kind": ..., "message": ...}}` on stderr with exit code 1.
pub fn main_entry() -> std::process::ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            let msg = serde_json::json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{msg}");
            std::process::ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn enum_flags_parse() {
        let c = Cli::try_parse_from([
            "nngp-card", "train", "--train", "a", "--out", "b", "--activation", "erf", "--bias-placement", "diagonal",
        ])
        .unwrap();
        let Command::Train(t) = c.command else { panic!() };
        assert_eq!(t.kernel.activation, Some(Activation::Erf));
        assert_eq!(t.kernel.bias_placement, Some(BiasPlacement::Diagonal));
        assert!(Cli::try_parse_from(["nngp-card", "train", "--train", "a", "--out", "b", "--activation", "tanh"]).is_err());
    }

    #[test]
    fn flags_override_config() {
        let mut k = KernelConfig {
            depth: 5,
            ..Default::default()
        };
        KernelArgs {
            depth: Some(2),
            ..Default::default()
        }
        .apply(&mut k);
        assert_eq!(k.depth, 2);
        assert_eq!(k.sigma_w_sq, KernelConfig::default().sigma_w_sq);
    }

    #[test]
    fn threads_from_env() {
        // clap reads the variable at parse time
        std::env::set_var("NNGP_CARD_THREADS", "3");
        let c = Cli::try_parse_from(["nngp-card", "ingest", "--catalog", "c"]).unwrap();
        std::env::remove_var("NNGP_CARD_THREADS");
        assert_eq!(c.threads, Some(3));
        let c = Cli::try_parse_from(["nngp-card", "--threads", "2", "ingest", "--catalog", "c"]).unwrap();
        assert_eq!(c.threads, Some(2));
    }
}
