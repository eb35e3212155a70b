//! `gnnprune`: synthetic graphs, training, channel pruning, inference,
//! cost estimates and benchmarks from one JSON run configuration.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::InferMode;

#[derive(Debug, Parser)]
#[command(name = "gnnprune", version, about = "GNN channel pruning and inference pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Run configuration (JSON); `-` reads stdin.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Graph file (GRF1); built from the config's `graph` section when absent.
    #[arg(long)]
    graph: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a graph and write it as GRF1.
    Synth {
        #[arg(long, short)]
        config: Option<PathBuf>,
        #[arg(long, short)]
        out: PathBuf,
        /// Also write a JSON dump of the graph.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Train a model and write it as GNM1 together with the epoch log.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        out: PathBuf,
        /// Per-epoch CSV log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Prune a trained model and write the folded result.
    Prune {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        model: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Prune report (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, value_parser = parse_scheme)]
        scheme: Option<gnnprune_core::prune::Scheme>,
        #[arg(long)]
        eta: Option<f64>,
        /// Fine-tune the folded model afterwards.
        #[arg(long)]
        retrain: bool,
        /// Epoch log of the fine-tuning run.
        #[arg(long)]
        retrain_log: Option<PathBuf>,
    },
    /// Run inference and write predictions plus instrumentation.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        model: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<InferMode>,
        /// Nodes to predict: train, val, test or all.
        #[arg(long, default_value = "test")]
        split: String,
        /// Predictions CSV.
        #[arg(long, short)]
        out: PathBuf,
        /// Instrumentation JSON.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Hidden-feature cache file, loaded if present and saved afterwards.
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Store root features of train and val nodes before serving.
        #[arg(long)]
        warm_cache_train_val: bool,
        /// Neighbour cap of the second hop (first aggregating layer).
        #[arg(long)]
        cap_hop2: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Analytic MAC and memory estimate of a model.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        model: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<InferMode>,
        /// Average degree; taken from the graph when absent.
        #[arg(long)]
        degree: Option<f64>,
        /// Node count for full mode; taken from the graph when absent.
        #[arg(long)]
        nodes: Option<usize>,
        /// Expected share of hidden rows served by the cache.
        #[arg(long, default_value_t = 0.0)]
        cache_fraction: f64,
        /// CostReport JSON.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Train, prune, retrain and time every configured variant.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Unpruned baseline; trained from the config when absent.
        #[arg(long, short)]
        model: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<String>,
        /// Batch sizes to sweep in batched mode, comma separated.
        #[arg(long, value_delimiter = ',')]
        batch_sizes: Vec<usize>,
        #[arg(long, short)]
        out: PathBuf,
    },
}

fn parse_scheme(s: &str) -> Result<gnnprune_core::prune::Scheme, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|_| format!("unknown scheme {s:?}"))
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    if let Some(e) = err.downcast_ref::<gnnprune_core::Error>() {
        return e.kind();
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return "io";
    }
    if err.downcast_ref::<serde_json::Error>().is_some() {
        return "json";
    }
    "runtime"
}

fn report(kind: &str, message: String) {
    let doc = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{doc}");
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var("GNNPRUNE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| gnnprune_core::Error::Config(format!("GNNPRUNE_THREADS={v:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_threads()?;
    match cli.command {
        Command::Synth { config, out, json } => commands::synth(config.as_deref(), &out, json.as_deref()),
        Command::Train { common, out, log } => commands::train(&common.into(), &out, log.as_deref()),
        Command::Prune { common, model, out, report, scheme, eta, retrain, retrain_log } => commands::prune(
            &common.into(),
            &commands::PruneArgs {
                model,
                out,
                report,
                scheme,
                eta,
                retrain,
                retrain_log,
            },
        ),
        Command::Infer {
            common,
            model,
            mode,
            split,
            out,
            stats,
            cache,
            warm_cache_train_val,
            cap_hop2,
            batch_size,
        } => commands::infer(
            &common.into(),
            &commands::InferArgs {
                model,
                mode,
                split,
                out,
                stats,
                cache,
                warm_cache_train_val,
                cap_hop2,
                batch_size,
            },
        ),
        Command::Estimate { common, model, mode, degree, nodes, cache_fraction, out } => commands::estimate(
            &common.into(),
            &commands::EstimateArgs { model, mode, degree, nodes, cache_fraction, out },
        ),
        Command::Bench { common, model, dataset, batch_sizes, out } => {
            commands::bench(&common.into(), model.as_deref(), dataset, batch_sizes, &out)
        }
    }
}

impl From<Common> for commands::Inputs {
    fn from(c: Common) -> Self {
        commands::Inputs { config: c.config, graph: c.graph }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report("usage", e.to_string().trim_end().to_owned());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(error_kind(&e), format!("{e:#}"));
            ExitCode::FAILURE
        }
    }
}
