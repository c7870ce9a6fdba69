use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use tracing::warn;
use writeback_core::config::KeyValues;
use writeback_core::corpus::{load_corpus, load_examples, write_jsonl, MergedLookup};
use writeback_core::harness::{
    self, generate_synthetic, mock_backends, run_ablation, run_cross_writeback, run_gain_with, write_ablation_outputs,
    write_gain_outputs, write_transfer_outputs, SyntheticSpec,
};
use writeback_core::index::build_index;
use writeback_core::pipeline::{
    layout, load_units, read_single_record, train_kb, units_store, write_train_outputs, evaluate, EvalReport,
    RetrievalMode,
};
use writeback_core::{Backbone, PipelineConfig, RankHistogram, Source, TrainingStats, VectorIndex};

use crate::settings::Settings;

/// Name of the original index file written by `index`.
pub const INDEX_FILE: &str = "index.jsonl";

/// Accepts either an index file or a directory holding `index.jsonl`.
fn index_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(INDEX_FILE)
    } else {
        p.to_path_buf()
    }
}

fn load_index(p: &Path, expected_dim: usize) -> Result<VectorIndex> {
    let path = index_path(p);
    let index = VectorIndex::load(&path).with_context(|| format!("loading index {}", path.display()))?;
    if index.dim() != expected_dim {
        bail!(
            "index {} has dimension {} but the embedder produces {}",
            path.display(),
            index.dim(),
            expected_dim
        );
    }
    Ok(index)
}

pub fn index(settings: &Settings) -> Result<()> {
    let corpus_path = settings.path("corpus")?;
    let out = settings.path("out")?;
    let corpus = load_corpus(&corpus_path)?;
    let embedder = settings.backend.embedder()?;
    let index = build_index(&corpus, embedder.as_ref(), Source::Original, settings.pipeline.embed_batch_size)?;
    settings.write_echo(&out)?;
    let path = out.join(INDEX_FILE);
    index.save(&path)?;
    println!("indexed {} documents (dim {}) into {}", index.len(), index.dim(), path.display());
    Ok(())
}

fn print_stats(stats: &TrainingStats) {
    for (k, v) in TrainingStats::CSV_HEADER.iter().zip(stats.csv_row()) {
        println!("{k} = {v}");
    }
}

pub fn train(settings: &Settings) -> Result<()> {
    let cfg = &settings.pipeline;
    let corpus = load_corpus(settings.path("corpus")?)?;
    let train = load_examples(settings.path("train")?)?;
    let out = settings.path("out")?;
    let backends = settings.backend.backends()?;
    let index = load_index(&settings.path("index")?, backends.embedder.dim())?;
    let output = train_kb(&train, &corpus, &index, &backends, cfg)?;
    for e in &output.errors {
        warn!(example = %e.example_id, stage = %e.stage, "{}", e.message);
    }
    settings.write_echo(&out)?;
    write_train_outputs(&out, &output, backends.embedder.as_ref(), cfg.embed_batch_size)?;
    print_stats(&output.stats);
    Ok(())
}

pub fn eval(settings: &Settings) -> Result<()> {
    let cfg = &settings.pipeline;
    let corpus = load_corpus(settings.path("corpus")?)?;
    let test = load_examples(settings.path("test")?)?;
    let out = settings.path("out")?;
    let backends = settings.backend.backends()?;
    let index = load_index(&settings.path("index")?, backends.embedder.dim())?;
    let report: EvalReport = match settings.optional_path("wb_dir") {
        None => evaluate(&test, RetrievalMode::Original(&index), &corpus, &backends, cfg)?,
        Some(dir) => {
            let units = load_units(&dir.join(layout::UNITS))?;
            let wb_index = load_index(&dir.join(layout::WB_INDEX), backends.embedder.dim())?;
            let wb_store = units_store(&units)?;
            let lookup = MergedLookup {
                original: &corpus,
                writeback: Some(&wb_store),
            };
            evaluate(
                &test,
                RetrievalMode::Merged {
                    original: &index,
                    writeback: &wb_index,
                },
                &lookup,
                &backends,
                cfg,
            )?
        }
    };
    settings.write_echo(&out)?;
    let records = out.join(layout::EVAL_RECORDS);
    write_jsonl(&records, &report.records).with_context(|| format!("writing {}", records.display()))?;
    let summary = out.join(layout::EVAL_SUMMARY);
    let line = serde_json::json!({
        "dataset": cfg.dataset,
        "mean_score": report.mean_score,
        "n_examples": report.records.len(),
        "error_count": report.error_count,
    });
    write_jsonl(&summary, &[line]).with_context(|| format!("writing {}", summary.display()))?;
    for r in report.records.iter().filter(|r| r.error.is_some()) {
        warn!(example = %r.example_id, "{}", r.error.as_deref().unwrap_or_default());
    }
    println!("score = {}", report.mean_score);
    println!("n_examples = {}", report.records.len());
    println!("error_count = {}", report.error_count);
    Ok(())
}

fn load_spec(settings: &Settings) -> Result<SyntheticSpec> {
    let path = settings.path("spec")?;
    let kv = KeyValues::load(&path)?;
    let mut spec = SyntheticSpec::default();
    for key in spec.apply(&kv)? {
        warn!(key = %key, file = %path.display(), "unknown spec key ignored");
    }
    spec.validate()?;
    Ok(spec)
}

/// Harness pipeline config: spec-derived defaults overridden by the file and
/// flags already merged into `settings`.
pub fn harness_config(spec: &SyntheticSpec, settings: &Settings) -> Result<PipelineConfig> {
    let mut cfg = spec.pipeline_config();
    cfg.apply(&settings.kv)?;
    cfg.validate()?;
    Ok(cfg)
}

fn write_spec_echo(out: &Path, spec: &SyntheticSpec) -> Result<()> {
    let path = out.join(harness::layout::SPEC);
    std::fs::write(&path, writeback_core::config::render(&spec.to_key_values()))
        .with_context(|| format!("writing {}", path.display()))
}

pub fn simulate(settings: &Settings) -> Result<()> {
    let spec = load_spec(settings)?;
    let cfg = harness_config(&spec, settings)?;
    let out = settings.path("out")?;
    let data = generate_synthetic(&spec)?;
    let backends = mock_backends(data.world.clone(), spec.embed_dim);
    let run = run_gain_with(&data, &backends, &cfg)?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_config(&out, &cfg)?;
    write_spec_echo(&out, &spec)?;
    write_gain_outputs(&out, &data, &run, backends.embedder.as_ref(), cfg.embed_batch_size)?;
    let transfer = run_cross_writeback(&spec, &cfg, [Backbone::Naive, Backbone::Weighted])?;
    write_transfer_outputs(&out, &transfer)?;
    println!("baseline_score = {}", run.report.baseline_score);
    println!("writeback_score = {}", run.report.writeback_score);
    println!("gain = {}", run.report.gain);
    for row in transfer.csv_rows() {
        println!("{}: no_wb = {}, same_wb = {}, cross_wb = {}", row[0], row[1], row[2], row[3]);
    }
    Ok(())
}

fn write_config(out: &Path, cfg: &PipelineConfig) -> Result<()> {
    let path = out.join(layout::CONFIG);
    std::fs::write(&path, writeback_core::config::render(&cfg.to_key_values()))
        .with_context(|| format!("writing {}", path.display()))
}

pub fn ablate(settings: &Settings) -> Result<()> {
    let spec = load_spec(settings)?;
    let cfg = harness_config(&spec, settings)?;
    let out = settings.path("out")?;
    let grid_path = settings.path("grid")?;
    let grid = writeback_core::config::parse_grid(&KeyValues::load(&grid_path)?)?;
    let rows = run_ablation(&spec, &cfg, &grid)?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    write_config(&out, &cfg)?;
    write_spec_echo(&out, &spec)?;
    write_ablation_outputs(&out, &rows)?;
    for row in &rows {
        println!("{} = {}: score = {}, n_selected = {}", row.param, row.value, row.score, row.stats.n_selected);
    }
    Ok(())
}

pub fn stats(settings: &Settings) -> Result<()> {
    let run = settings.path("run")?;
    let stats: TrainingStats = read_single_record(&run.join(layout::STATS))?;
    print_stats(&stats);
    let hist_path = run.join(layout::HISTOGRAM);
    if hist_path.exists() {
        let hist: RankHistogram = read_single_record(&hist_path)?;
        for (rank, count) in &hist.counts {
            println!("rank {rank}: {count} ({})", hist.fractions[rank]);
        }
    }
    Ok(())
}
