//! `[pipeline]` configuration: a TOML file whose values are overridden by
//! command-line flags. Every field is optional so file and flags can be
//! layered; defaults are applied when a stage needs a value.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use wfa_extract::FillStrategy;

pub const DEFAULT_SEED: u64 = 2022;
pub const DEFAULT_HIDDEN_STATES: usize = 8;

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Training corpus (`label<TAB>tokens` per line).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Held-out corpus for evaluation.
    #[arg(long)]
    pub test_corpus: Option<PathBuf>,
    /// GloVe-style embeddings for synonym replacement.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// `random`, or a teacher JSON file.
    #[arg(long)]
    pub teacher: Option<String>,
    /// Directory that receives every artifact not given an explicit path.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub traces: Option<PathBuf>,
    #[arg(long)]
    pub test_traces: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Run the augmentation stage (needs `embeddings`).
    #[arg(long)]
    pub augment: Option<bool>,
    #[arg(long)]
    pub hidden_states: Option<usize>,
    #[arg(long)]
    pub labels: Option<usize>,
    /// Number of clusters.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub fill_strategy: Option<FillStrategy>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub synonym_k: Option<usize>,
    #[arg(long)]
    pub dropout_prob: Option<f64>,
    #[arg(skip)]
    pub seed: Option<u64>,
    #[arg(skip)]
    pub threads: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    pipeline: PipelineConfig,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($field:ident),* $(,)?) => {
        PipelineConfig { $($field: $top.$field.or($base.$field)),* }
    };
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(text)?;
        Ok(file.pipeline)
    }

    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = Self::parse(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in cfg.paths_mut() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    fn paths_mut(&mut self) -> impl Iterator<Item = &mut PathBuf> {
        [
            &mut self.corpus,
            &mut self.test_corpus,
            &mut self.embeddings,
            &mut self.out_dir,
            &mut self.traces,
            &mut self.test_traces,
            &mut self.model,
            &mut self.report,
        ]
        .into_iter()
        .flatten()
    }

    /// Values set in `top` win over values in `self`.
    pub fn overlay(self, top: PipelineConfig) -> PipelineConfig {
        let base = self;
        overlay!(base, top;
            corpus, test_corpus, embeddings, teacher, out_dir, traces, test_traces, model, report,
            augment, hidden_states, labels, k, alpha, beta, fill_strategy, epochs, synonym_k,
            dropout_prob, seed, threads,
        )
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = [("alpha", self.alpha), ("beta", self.beta), ("dropout_prob", self.dropout_prob)];
        for (name, v) in unit {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    bail!("{name} = {v} outside [0, 1]");
                }
            }
        }
        let positive = [
            ("k", self.k),
            ("synonym_k", self.synonym_k),
            ("hidden_states", self.hidden_states),
            ("threads", self.threads),
        ];
        for (name, v) in positive {
            if v == Some(0) {
                bail!("{name} must be positive");
            }
        }
        if matches!(self.labels, Some(m) if m < 2) {
            bail!("labels must be at least 2");
        }
        Ok(())
    }
}

/// Multi-class tasks default to 40 clusters and alpha 0.4, binary tasks to
/// 20 clusters and alpha 0.2.
pub fn default_k(labels: usize) -> usize {
    if labels > 2 {
        40
    } else {
        20
    }
}

pub fn default_alpha(labels: usize) -> f64 {
    if labels > 2 {
        0.4
    } else {
        0.2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pipeline_section() {
        let cfg = PipelineConfig::parse(
            r#"
            [pipeline]
            corpus = "train.tsv"
            k = 12
            fill_strategy = "uniform"
            seed = 5
            "#,
        )
        .unwrap();
        assert_eq!(cfg.corpus.as_deref(), Some(Path::new("train.tsv")));
        assert_eq!(cfg.k, Some(12));
        assert_eq!(cfg.fill_strategy, Some(FillStrategy::Uniform));
        assert_eq!(cfg.seed(), 5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = PipelineConfig::parse("[pipeline]\nclusters = 3\n").unwrap_err();
        assert!(format!("{err:#}").contains("clusters"), "{err:#}");
        assert!(PipelineConfig::parse("[pipeline]\n[extra]\nx = 1\n").is_err());
        assert!(PipelineConfig::parse("k = 3\n").is_err());
    }

    #[test]
    fn flags_override_file() {
        let file = PipelineConfig {
            k: Some(10),
            beta: Some(0.5),
            ..Default::default()
        };
        let flags = PipelineConfig {
            k: Some(4),
            ..Default::default()
        };
        let merged = file.overlay(flags);
        assert_eq!(merged.k, Some(4));
        assert_eq!(merged.beta, Some(0.5));
    }

    #[test]
    fn relative_paths_follow_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[pipeline]\ncorpus = \"data/train.tsv\"\nmodel = \"/abs/model.json\"\n").unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.corpus.unwrap(), dir.path().join("data/train.tsv"));
        assert_eq!(cfg.model.unwrap(), PathBuf::from("/abs/model.json"));
    }

    #[test]
    fn validation_ranges() {
        let bad = [
            PipelineConfig { alpha: Some(1.5), ..Default::default() },
            PipelineConfig { k: Some(0), ..Default::default() },
            PipelineConfig { labels: Some(1), ..Default::default() },
            PipelineConfig { dropout_prob: Some(-0.1), ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
        assert!(PipelineConfig::default().validate().is_ok());
    }
}
