//! The individual stages. Each reads its inputs from disk, writes its outputs
//! through [`Outputs`] and returns a summary for the console and manifest.

use std::fmt;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use wfa_extract::corpus::{read_corpus, write_corpus};
use wfa_extract::experiment::{compare_strategies, ComparisonTable};
use wfa_extract::runtime::{majority_baseline, sparsity_by_decile, teacher_labels, DecileStats};
use wfa_extract::teacher::{read_traces_file, write_traces};
use wfa_extract::{
    consistency_rate, load_embeddings, sample_teacher, AugmentConfig, Augmenter, Alphabet, BuildConfig,
    EvalReport, ExtractionBasis, FillStrategy, Sentence, SyntheticTeacher, Trace, Wfa,
};

use crate::artifact::{counts_digest, Outputs};
use crate::config::{default_alpha, default_k, DEFAULT_HIDDEN_STATES};

#[derive(Debug, Clone, Serialize)]
pub struct AugmentSummary {
    pub original: usize,
    pub augmented: usize,
    pub embedding_coverage: f64,
    pub tokens_without_embedding: usize,
}

pub fn augment(
    corpus: &Path,
    embeddings: &Path,
    cfg: &AugmentConfig,
    out: &Path,
    outs: &mut Outputs,
) -> Result<AugmentSummary> {
    let d0 = read_corpus(corpus).with_context(|| format!("reading corpus {}", corpus.display()))?;
    let alphabet = Alphabet::build(&d0)?;
    let (table, report) = load_embeddings(embeddings, &alphabet)
        .with_context(|| format!("reading embeddings {}", embeddings.display()))?;
    if !report.skipped.is_empty() {
        log::info!(
            "{} of {} tokens have no embedding and are never replaced",
            report.skipped.len(),
            alphabet.len()
        );
    }
    let d = Augmenter::new(&alphabet, &table, cfg.clone())?.augment_dataset(&d0);
    outs.write_with(out, |w| Ok(write_corpus(w, &d)?))?;
    Ok(AugmentSummary {
        original: d0.len(),
        augmented: d.len(),
        embedding_coverage: report.coverage(),
        tokens_without_embedding: report.skipped.len(),
    })
}

/// Where the teacher comes from: sampled at random over the corpus alphabet,
/// or loaded from a JSON file.
#[derive(Debug, Clone, PartialEq)]
pub enum TeacherSource {
    Random { hidden_states: usize, labels: Option<usize> },
    File(PathBuf),
}

impl TeacherSource {
    pub fn new(spec: Option<&str>, hidden_states: Option<usize>, labels: Option<usize>) -> Self {
        match spec {
            None | Some("random") => TeacherSource::Random {
                hidden_states: hidden_states.unwrap_or(DEFAULT_HIDDEN_STATES),
                labels,
            },
            Some(path) => TeacherSource::File(PathBuf::from(path)),
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(self, TeacherSource::Random { .. })
    }

    /// A random teacher has as many labels as the corpus uses (at least two)
    /// unless told otherwise.
    pub fn obtain(&self, sentences: &[Sentence], seed: u64) -> Result<SyntheticTeacher> {
        match self {
            TeacherSource::File(path) => {
                SyntheticTeacher::read_json(path).with_context(|| format!("reading teacher {}", path.display()))
            }
            TeacherSource::Random { hidden_states, labels } => {
                let corpus_labels = sentences.iter().filter_map(|s| s.label).max().map_or(0, |l| l + 1);
                let m = labels.unwrap_or(corpus_labels.max(2));
                let alphabet = Alphabet::build(sentences)?;
                Ok(sample_teacher(&alphabet, *hidden_states, m, seed)?)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TeachSummary {
    pub sentences: usize,
    pub outputs: usize,
    pub labels: usize,
    pub hidden_states: usize,
}

pub fn trace_corpus(
    teacher: &SyntheticTeacher,
    corpus: &Path,
    out: &Path,
    outs: &mut Outputs,
) -> Result<TeachSummary> {
    let sentences = read_corpus(corpus).with_context(|| format!("reading corpus {}", corpus.display()))?;
    trace_sentences(teacher, &sentences, out, outs)
}

pub fn trace_sentences(
    teacher: &SyntheticTeacher,
    sentences: &[Sentence],
    out: &Path,
    outs: &mut Outputs,
) -> Result<TeachSummary> {
    let traces = teacher.run_traces(sentences)?;
    outs.write_with(out, |w| Ok(write_traces(w, &traces)?))?;
    Ok(TeachSummary {
        sentences: traces.len(),
        outputs: traces.iter().map(|t| t.outputs.len()).sum(),
        labels: teacher.labels(),
        hidden_states: teacher.hidden_states(),
    })
}

pub fn load_traces(path: &Path) -> Result<Vec<Trace>> {
    let traces = read_traces_file(path).with_context(|| format!("reading traces {}", path.display()))?;
    if traces.is_empty() {
        bail!("trace file {} is empty", path.display());
    }
    Ok(traces)
}

pub fn load_model(path: &Path) -> Result<Wfa> {
    let file = fs::File::open(path).with_context(|| format!("opening model {}", path.display()))?;
    Wfa::from_json(BufReader::new(file)).with_context(|| format!("reading model {}", path.display()))
}

/// Extraction hyperparameters; unset k and alpha follow the label count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractParams {
    pub k: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: f64,
    pub fill: FillStrategy,
    pub seed: u64,
}

impl ExtractParams {
    pub fn resolve(&self, labels: usize) -> (usize, BuildConfig) {
        let cfg = BuildConfig {
            beta: self.beta,
            alpha: self.alpha.unwrap_or_else(|| default_alpha(labels)),
            fill: self.fill,
        };
        (self.k.unwrap_or_else(|| default_k(labels)), cfg)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtractSummary {
    pub traces: usize,
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub fill_strategy: FillStrategy,
    pub kmeans_iterations: usize,
    pub tokens: usize,
    pub counts_sha256: String,
}

pub fn extract(traces_path: &Path, params: &ExtractParams, out: &Path, outs: &mut Outputs) -> Result<ExtractSummary> {
    let traces = load_traces(traces_path)?;
    let (k, cfg) = params.resolve(traces[0].labels());
    let basis = ExtractionBasis::fit(&traces, k, params.seed)?;
    let model = basis.assemble(&cfg)?;
    outs.write_with(out, |w| Ok(model.to_json(w)?))?;
    Ok(ExtractSummary {
        traces: traces.len(),
        k,
        alpha: cfg.alpha,
        beta: cfg.beta,
        fill_strategy: cfg.fill,
        kmeans_iterations: basis.states.iterations(),
        tokens: model.tokens().len(),
        counts_sha256: counts_digest(&basis.counts),
    })
}

/// Agreement of a model with the teacher labels recorded in `traces` (the
/// argmax of each final output).
pub fn eval(model_path: &Path, traces_path: &Path, report: Option<&Path>, outs: &mut Outputs) -> Result<EvalReport> {
    let model = load_model(model_path)?;
    let traces = load_traces(traces_path)?;
    let result = consistency_rate(&model, &teacher_labels(&traces))?;
    if let Some(path) = report {
        outs.write_json(path, &result)?;
    }
    Ok(result)
}

#[derive(Debug, Clone, Serialize)]
pub struct ClusterInfo {
    pub state: usize,
    pub size: usize,
    /// Shannon entropy of the center, in nats.
    pub entropy: f64,
    pub center: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InspectReport {
    pub k: usize,
    pub m: usize,
    pub alpha: f64,
    pub beta: f64,
    pub fill_strategy: FillStrategy,
    pub tokens: usize,
    pub clusters: Vec<ClusterInfo>,
    pub deciles: Vec<DecileStats>,
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

pub fn inspect(model: &Wfa) -> InspectReport {
    let states = model.states();
    let clusters = states
        .centers()
        .iter()
        .enumerate()
        .map(|(i, c)| ClusterInfo {
            state: i,
            size: if i == 0 { 0 } else { states.sizes()[i - 1] },
            entropy: entropy(c),
            center: c.clone(),
        })
        .collect();
    let cfg = model.config();
    InspectReport {
        k: states.n_clusters(),
        m: model.labels(),
        alpha: cfg.alpha,
        beta: cfg.beta,
        fill_strategy: cfg.fill,
        tokens: model.tokens().len(),
        clusters,
        deciles: sparsity_by_decile(model),
    }
}

impl fmt::Display for InspectReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "k = {}, m = {}, alpha = {}, beta = {}, fill = {}, {} tokens",
            self.k, self.m, self.alpha, self.beta, self.fill_strategy, self.tokens
        )?;
        writeln!(f, "\n{:>5} {:>8} {:>9}  center", "state", "size", "entropy")?;
        for c in &self.clusters {
            let center: Vec<String> = c.center.iter().map(|x| format!("{x:.3}")).collect();
            let size = if c.state == 0 { "initial".to_owned() } else { c.size.to_string() };
            writeln!(f, "{:>5} {:>8} {:>9.4}  [{}]", c.state, size, c.entropy, center.join(", "))?;
        }
        writeln!(f, "\nmissing rows by token frequency decile (most frequent first)")?;
        writeln!(f, "{:>6} {:>7} {:>12} {:>13}", "decile", "tokens", "transitions", "missing rows")?;
        for d in &self.deciles {
            writeln!(
                f,
                "{:>6} {:>7} {:>12.1} {:>12.1}%",
                d.decile,
                d.tokens,
                d.mean_transitions,
                100.0 * d.missing_row_fraction
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub k: usize,
    pub seed: u64,
    pub counts_sha256: String,
    pub majority_baseline: f64,
    pub table: ComparisonTable,
}

impl fmt::Display for CompareReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "consistency rate, k = {}, beta = {}", self.k, self.table.beta)?;
        write!(f, "{}", self.table)?;
        writeln!(f, "majority baseline {:.1}%", 100.0 * self.majority_baseline)
    }
}

/// Fits one clustering and one set of counts, then evaluates every fill
/// strategy with and without context enhancement on top of them.
pub fn compare(train: &Path, test: &Path, params: &ExtractParams) -> Result<CompareReport> {
    let traces = load_traces(train)?;
    let test = teacher_labels(&load_traces(test)?);
    let (k, cfg) = params.resolve(traces[0].labels());
    let basis = ExtractionBasis::fit(&traces, k, params.seed)?;
    Ok(CompareReport {
        k,
        seed: params.seed,
        counts_sha256: counts_digest(&basis.counts),
        majority_baseline: majority_baseline(&test),
        table: compare_strategies(&basis, &test, cfg.alpha, cfg.beta)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_of_uniform_and_point_mass() {
        assert!((entropy(&[0.25; 4]) - 4f64.ln()).abs() < 1e-12);
        assert_eq!(entropy(&[1.0, 0.0]), 0.0);
    }

    #[test]
    fn teacher_source_parsing() {
        assert!(TeacherSource::new(None, None, None).is_random());
        assert_eq!(
            TeacherSource::new(Some("random"), Some(3), Some(4)),
            TeacherSource::Random { hidden_states: 3, labels: Some(4) }
        );
        assert_eq!(
            TeacherSource::new(Some("t.json"), None, None),
            TeacherSource::File(PathBuf::from("t.json"))
        );
    }

    #[test]
    fn random_teacher_labels_follow_corpus() {
        let ss = vec![Sentence::from_text("a b", Some(0)), Sentence::from_text("b c", Some(3))];
        let t = TeacherSource::new(None, Some(2), None).obtain(&ss, 1).unwrap();
        assert_eq!(t.labels(), 4);
        let unlabelled = vec![Sentence::from_text("a", Some(0))];
        assert_eq!(TeacherSource::new(None, None, None).obtain(&unlabelled, 1).unwrap().labels(), 2);
    }

    #[test]
    fn defaults_follow_label_count() {
        let p = ExtractParams {
            k: None,
            alpha: None,
            beta: 0.3,
            fill: FillStrategy::Empirical,
            seed: 0,
        };
        assert_eq!(p.resolve(2).0, 20);
        assert_eq!(p.resolve(6).0, 40);
        assert_eq!(p.resolve(2).1.alpha, 0.2);
        assert_eq!(p.resolve(6).1.alpha, 0.4);
    }
}
