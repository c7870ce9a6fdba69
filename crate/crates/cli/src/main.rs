//! `writeback`: index a corpus, train a write-back knowledge base, evaluate,
//! and run the synthetic experiments.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use writeback_core::PipelineConfig;

use settings::Settings;

#[derive(Parser)]
#[command(name = "writeback", version, about = "Knowledge-base write-back for retrieval-augmented generation")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Flat `key = value` configuration file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Embed a corpus and persist the original index.
    Index {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Gate, distill and write back knowledge units from labeled examples.
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Index file or directory from `index`.
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Score a test set, optionally with a write-back run's units merged in.
    Eval {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// Output directory of `train`.
        #[arg(long)]
        wb_dir: Option<PathBuf>,
        /// Where per-example records are written.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Generate a synthetic corpus and run the gain and transfer experiments.
    Simulate {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Sweep gate thresholds on a synthetic corpus.
    Ablate {
        #[arg(long)]
        spec: Option<PathBuf>,
        /// `param = v1, v2, ...` lines over tau_s, tau_delta, tau_doc, n_min.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Print the statistics of a training run.
    Stats {
        #[arg(long)]
        run: Option<PathBuf>,
    },
}

#[derive(Args, Default)]
struct BackendArgs {
    /// mock or http
    #[arg(long)]
    embedder: Option<String>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    embed_base_url: Option<String>,
    #[arg(long)]
    embed_model: Option<String>,
    /// mock or http
    #[arg(long)]
    generator: Option<String>,
    #[arg(long)]
    gen_base_url: Option<String>,
    #[arg(long)]
    gen_model: Option<String>,
    #[arg(long)]
    timeout_secs: Option<f64>,
    #[arg(long)]
    max_retries: Option<usize>,
    #[arg(long)]
    max_in_flight: Option<usize>,
    #[arg(long)]
    http_batch_size: Option<usize>,
    /// Oracle world file for the mock generator.
    #[arg(long)]
    oracle_world: Option<PathBuf>,
}

#[derive(Args, Default)]
struct PipelineArgs {
    #[arg(long)]
    dataset: Option<String>,
    /// naive or weighted
    #[arg(long)]
    backbone: Option<String>,
    #[arg(long)]
    tau_s: Option<f64>,
    #[arg(long)]
    tau_delta: Option<f64>,
    #[arg(long)]
    tau_doc: Option<f64>,
    #[arg(long)]
    n_min: Option<usize>,
    #[arg(long)]
    retrieval_k: Option<usize>,
    #[arg(long)]
    wb_retrieval_k: Option<usize>,
    #[arg(long)]
    merged_k: Option<usize>,
}

type Overrides = Vec<(&'static str, String)>;

fn push<T: ToString>(out: &mut Overrides, key: &'static str, v: &Option<T>) {
    if let Some(v) = v {
        out.push((key, v.to_string()));
    }
}

fn push_path(out: &mut Overrides, key: &'static str, v: &Option<PathBuf>) {
    if let Some(v) = v {
        out.push((key, v.display().to_string()));
    }
}

impl BackendArgs {
    fn overrides(&self, out: &mut Overrides) {
        push(out, "embedder", &self.embedder);
        push(out, "embed_dim", &self.embed_dim);
        push(out, "embed_base_url", &self.embed_base_url);
        push(out, "embed_model", &self.embed_model);
        push(out, "generator", &self.generator);
        push(out, "gen_base_url", &self.gen_base_url);
        push(out, "gen_model", &self.gen_model);
        push(out, "timeout_secs", &self.timeout_secs);
        push(out, "max_retries", &self.max_retries);
        push(out, "max_in_flight", &self.max_in_flight);
        push(out, "http_batch_size", &self.http_batch_size);
        push_path(out, "oracle_world", &self.oracle_world);
    }
}

impl PipelineArgs {
    fn overrides(&self, out: &mut Overrides) {
        push(out, "dataset", &self.dataset);
        push(out, "backbone", &self.backbone);
        push(out, "tau_s", &self.tau_s);
        push(out, "tau_delta", &self.tau_delta);
        push(out, "tau_doc", &self.tau_doc);
        push(out, "n_min", &self.n_min);
        push(out, "retrieval_k", &self.retrieval_k);
        push(out, "wb_retrieval_k", &self.wb_retrieval_k);
        push(out, "merged_k", &self.merged_k);
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global()?;
    }
    let mut ov = Overrides::new();
    let config = cli.config.as_deref();
    let base = PipelineConfig::default();
    match &cli.command {
        Command::Index {
            corpus,
            out,
            backend,
            pipeline,
        } => {
            push_path(&mut ov, "corpus", corpus);
            push_path(&mut ov, "out", out);
            backend.overrides(&mut ov);
            pipeline.overrides(&mut ov);
            commands::index(&Settings::load(base, config, ov)?)
        }
        Command::Train {
            corpus,
            index,
            train,
            out,
            backend,
            pipeline,
        } => {
            push_path(&mut ov, "corpus", corpus);
            push_path(&mut ov, "index", index);
            push_path(&mut ov, "train", train);
            push_path(&mut ov, "out", out);
            backend.overrides(&mut ov);
            pipeline.overrides(&mut ov);
            commands::train(&Settings::load(base, config, ov)?)
        }
        Command::Eval {
            corpus,
            index,
            test,
            wb_dir,
            out,
            backend,
            pipeline,
        } => {
            push_path(&mut ov, "corpus", corpus);
            push_path(&mut ov, "index", index);
            push_path(&mut ov, "test", test);
            push_path(&mut ov, "wb_dir", wb_dir);
            push_path(&mut ov, "out", out);
            backend.overrides(&mut ov);
            pipeline.overrides(&mut ov);
            commands::eval(&Settings::load(base, config, ov)?)
        }
        Command::Simulate { spec, out, pipeline } => {
            push_path(&mut ov, "spec", spec);
            push_path(&mut ov, "out", out);
            pipeline.overrides(&mut ov);
            commands::simulate(&Settings::load(base, config, ov)?)
        }
        Command::Ablate {
            spec,
            grid,
            out,
            pipeline,
        } => {
            push_path(&mut ov, "spec", spec);
            push_path(&mut ov, "grid", grid);
            push_path(&mut ov, "out", out);
            pipeline.overrides(&mut ov);
            commands::ablate(&Settings::load(base, config, ov)?)
        }
        Command::Stats { run } => {
            push_path(&mut ov, "run", run);
            commands::stats(&Settings::load(base, config, ov)?)
        }
    }
}

/// Joins the cause chain, skipping causes already quoted by their parent.
fn error_chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut prev = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !prev.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
        prev = msg;
    }
    out
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(tracing::Level::WARN)
        .with_target(false)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", error_chain(&e));
            ExitCode::FAILURE
        }
    }
}
