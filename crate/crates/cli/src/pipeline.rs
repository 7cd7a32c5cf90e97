//! The full augment → teach → extract → eval → inspect run, with a manifest
//! of every artifact's hash.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::Serialize;
use wfa_extract::builder::MODEL_VERSION;
use wfa_extract::corpus::read_corpus;
use wfa_extract::{seed, AugmentConfig, FillStrategy};

use crate::artifact::{sha256_file, FileRecord, Outputs};
use crate::config::PipelineConfig;
use crate::stages::{self, ExtractParams, TeacherSource};

pub const DEFAULT_OUT_DIR: &str = "wfa-out";

/// Artifact locations: explicit config paths, or fixed names in `out_dir`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub out_dir: PathBuf,
    pub augmented: PathBuf,
    pub teacher: PathBuf,
    pub traces: PathBuf,
    pub test_traces: PathBuf,
    pub model: PathBuf,
    pub report: PathBuf,
    pub inspect: PathBuf,
    pub manifest: PathBuf,
}

impl Layout {
    pub fn new(cfg: &PipelineConfig) -> Self {
        let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        let or = |p: &Option<PathBuf>, name: &str| p.clone().unwrap_or_else(|| dir.join(name));
        Self {
            augmented: dir.join("augmented.tsv"),
            teacher: dir.join("teacher.json"),
            traces: or(&cfg.traces, "traces.jsonl"),
            test_traces: or(&cfg.test_traces, "test_traces.jsonl"),
            model: or(&cfg.model, "model.json"),
            report: or(&cfg.report, "report.json"),
            inspect: dir.join("inspect.json"),
            manifest: dir.join("manifest.json"),
            out_dir: dir,
        }
    }
}

pub fn augment_config(cfg: &PipelineConfig) -> AugmentConfig {
    let d = AugmentConfig::default();
    AugmentConfig {
        epochs: cfg.epochs.unwrap_or(d.epochs),
        synonym_k: cfg.synonym_k.unwrap_or(d.synonym_k),
        dropout_prob: cfg.dropout_prob.unwrap_or(d.dropout_prob),
        seed: seed::derive(cfg.seed(), "augment"),
    }
}

pub fn extract_params(cfg: &PipelineConfig) -> ExtractParams {
    ExtractParams {
        k: cfg.k,
        alpha: cfg.alpha,
        beta: cfg.beta.unwrap_or(0.3),
        fill: cfg.fill_strategy.unwrap_or(FillStrategy::Empirical),
        seed: seed::derive(cfg.seed(), "extract"),
    }
}

pub fn teacher_source(cfg: &PipelineConfig) -> TeacherSource {
    TeacherSource::new(cfg.teacher.as_deref(), cfg.hidden_states, cfg.labels)
}

#[derive(Debug, Serialize)]
pub struct StageRecord {
    pub name: &'static str,
    pub seed: Option<u64>,
    pub outputs: Vec<FileRecord>,
    pub summary: serde_json::Value,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub model_format: &'static str,
    pub seed: u64,
    pub config: PipelineConfig,
    pub inputs: BTreeMap<&'static str, FileRecord>,
    pub stages: Vec<StageRecord>,
}

struct Run {
    outs: Outputs,
    stages: Vec<StageRecord>,
}

impl Run {
    /// Runs one stage; failures are reported under the stage's name.
    fn stage<T, F>(&mut self, name: &'static str, seed: Option<u64>, f: F) -> Result<T>
    where
        T: Serialize,
        F: FnOnce(&mut Outputs) -> Result<T>,
    {
        log::info!("stage {name}");
        let before = self.outs.written().len();
        let summary = f(&mut self.outs).map_err(|e| anyhow!("stage `{name}` failed: {e:#}"))?;
        let outputs = self.outs.written()[before..]
            .iter()
            .map(|p| sha256_file(p))
            .collect::<Result<_>>()?;
        self.stages.push(StageRecord {
            name,
            seed,
            outputs,
            summary: serde_json::to_value(&summary)?,
        });
        Ok(summary)
    }
}

/// Runs every stage in order. On failure every file this run wrote is
/// removed and the error names the stage.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Manifest> {
    cfg.validate()?;
    let mut run = Run {
        outs: Outputs::default(),
        stages: Vec::new(),
    };
    match run_stages(cfg, &mut run) {
        Ok(manifest) => Ok(manifest),
        Err(e) => {
            run.outs.discard();
            Err(e)
        }
    }
}

fn run_stages(cfg: &PipelineConfig, run: &mut Run) -> Result<Manifest> {
    let layout = Layout::new(cfg);
    let master = cfg.seed();
    let augment = cfg.augment.unwrap_or(cfg.embeddings.is_some());
    let first_stage = if augment { "augment" } else { "teach" };
    let corpus = cfg
        .corpus
        .clone()
        .ok_or_else(|| anyhow!("stage `{first_stage}` failed: no corpus configured"))?;
    let mut inputs = BTreeMap::new();
    inputs.insert("corpus", input_record(&corpus, first_stage)?);

    let train_corpus = if augment {
        let aug = augment_config(cfg);
        let embeddings = cfg.embeddings.clone().ok_or_else(|| {
            anyhow!("stage `augment` failed: augmentation is enabled but no embeddings file is configured")
        })?;
        inputs.insert("embeddings", input_record(&embeddings, "augment")?);
        run.stage("augment", Some(aug.seed), |outs| {
            stages::augment(&corpus, &embeddings, &aug, &layout.augmented, outs)
        })?;
        layout.augmented.clone()
    } else {
        corpus.clone()
    };

    let source = teacher_source(cfg);
    if let TeacherSource::File(p) = &source {
        inputs.insert("teacher", input_record(p, "teach")?);
    }
    let teacher_seed = seed::derive(master, "teacher");
    let test_corpus = cfg.test_corpus.clone();
    if let Some(p) = &test_corpus {
        inputs.insert("test_corpus", input_record(p, "teach")?);
    }
    let eval_traces = if test_corpus.is_some() {
        layout.test_traces.clone()
    } else {
        log::warn!("no test corpus configured; evaluating on the training traces");
        layout.traces.clone()
    };
    run.stage("teach", Some(teacher_seed), |outs| {
        let train = read_corpus(&train_corpus).with_context(|| format!("reading corpus {}", train_corpus.display()))?;
        let teacher = source.obtain(&train, teacher_seed)?;
        if source.is_random() {
            outs.write_with(&layout.teacher, |w| {
                serde_json::to_writer(w, &teacher)?;
                Ok(())
            })?;
        }
        let mut summary = BTreeMap::new();
        summary.insert("train", stages::trace_sentences(&teacher, &train, &layout.traces, outs)?);
        if let Some(test) = &test_corpus {
            summary.insert("test", stages::trace_corpus(&teacher, test, &layout.test_traces, outs)?);
        }
        Ok(summary)
    })?;

    let params = extract_params(cfg);
    run.stage("extract", Some(params.seed), |outs| {
        stages::extract(&layout.traces, &params, &layout.model, outs)
    })?;
    run.stage("eval", None, |outs| {
        stages::eval(&layout.model, &eval_traces, Some(&layout.report), outs)
    })?;
    run.stage("inspect", None, |outs| {
        let report = stages::inspect(&stages::load_model(&layout.model)?);
        outs.write_json(&layout.inspect, &report)?;
        Ok(serde_json::json!({ "k": report.k, "tokens": report.tokens }))
    })?;

    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        model_format: MODEL_VERSION,
        seed: master,
        config: cfg.clone(),
        inputs,
        stages: std::mem::take(&mut run.stages),
    };
    run.outs
        .write_json(&layout.manifest, &manifest)
        .map_err(|e| anyhow!("stage `manifest` failed: {e:#}"))?;
    Ok(manifest)
}

fn input_record(path: &Path, stage: &str) -> Result<FileRecord> {
    sha256_file(path).map_err(|e| anyhow!("stage `{stage}` failed: {e:#}"))
}
