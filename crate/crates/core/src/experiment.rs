//! Synthetic-teacher benchmarks and the fill-strategy comparison table.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::builder::{BuildConfig, ExtractionBasis, FillStrategy};
use crate::corpus::{Alphabet, EmbeddingTable, Sentence, Token};
use crate::error::Result;
use crate::runtime::consistency_rate;
use crate::seed;
use crate::teacher::{sample_sentences, sample_teacher, Classifier, SyntheticTeacher};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub vocab_size: usize,
    pub hidden_states: usize,
    pub labels: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Exponent of the Zipf law words are drawn from.
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            vocab_size: 50,
            hidden_states: 5,
            labels: 3,
            n_train: 5000,
            n_test: 1000,
            min_len: 5,
            max_len: 15,
            zipf_exponent: 1.0,
            seed: 2022,
        }
    }
}

/// A sampled teacher with labelled train and test sentences.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub alphabet: Alphabet,
    pub teacher: SyntheticTeacher,
    pub train: Vec<Sentence>,
    pub test: Vec<Sentence>,
}

impl Benchmark {
    pub fn sample(cfg: &BenchmarkConfig) -> Result<Self> {
        let vocab: Vec<Token> = (0..cfg.vocab_size).map(|i| Token::new(format!("w{i}"))).collect();
        let alphabet = Alphabet::build(&[Sentence::new(vocab.clone(), None)])?;
        let teacher = sample_teacher(
            &alphabet,
            cfg.hidden_states,
            cfg.labels,
            seed::derive(cfg.seed, "teacher"),
        )?;
        let label = |mut ss: Vec<Sentence>| -> Result<Vec<Sentence>> {
            for s in ss.iter_mut() {
                s.label = Some(teacher.predict(s)?);
            }
            Ok(ss)
        };
        let draw = |n, stage| {
            sample_sentences(
                &vocab,
                n,
                cfg.min_len,
                cfg.max_len,
                cfg.zipf_exponent,
                seed::derive(cfg.seed, stage),
            )
        };
        let train = label(draw(cfg.n_train, "train")?)?;
        let test = label(draw(cfg.n_test, "test")?)?;
        Ok(Self {
            alphabet,
            teacher,
            train,
            test,
        })
    }

    /// Test sentences paired with the teacher's labels.
    pub fn labelled_test(&self) -> Vec<(Sentence, usize)> {
        self.test
            .iter()
            .map(|s| (s.clone(), s.label.expect("benchmark sentences are labelled")))
            .collect()
    }
}

/// Embeddings that make tokens with similar teacher dynamics neighbours:
/// each token's vector is its flattened transition matrix.
pub fn teacher_embeddings(teacher: &SyntheticTeacher, alphabet: &Alphabet) -> Result<EmbeddingTable> {
    let vectors = alphabet
        .tokens()
        .iter()
        .filter(|t| !t.is_unk())
        .filter_map(|t| teacher.transition(t.as_str()).map(|m| (t.clone(), m.as_slice().to_vec())));
    EmbeddingTable::from_vectors(vectors, alphabet)
}

/// Replaces each word with a fresh out-of-vocabulary token with probability `rate`.
pub fn inject_oov(sentences: &[Sentence], rate: f64, seed: u64) -> Vec<Sentence> {
    let mut rng = seed::rng(seed);
    let mut fresh = 0usize;
    sentences
        .iter()
        .map(|s| {
            let words = s
                .words
                .iter()
                .map(|w| {
                    if rng.random::<f64>() < rate {
                        fresh += 1;
                        Token::new(format!("oov{fresh}"))
                    } else {
                        w.clone()
                    }
                })
                .collect();
            Sentence::new(words, s.label)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub fill: FillStrategy,
    pub context: bool,
    pub consistency_rate: f64,
    pub n_degenerate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub alpha: f64,
    pub beta: f64,
    pub cells: Vec<ComparisonCell>,
}

impl ComparisonTable {
    pub fn get(&self, fill: FillStrategy, context: bool) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.fill == fill && c.context == context)
            .map(|c| c.consistency_rate)
    }
}

impl fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>12} {:>12}", "fill", "none", format!("context α={}", self.alpha))?;
        for fill in FillStrategy::ALL {
            let cell = |ctx| self.get(fill, ctx).map_or("-".to_owned(), |v| format!("{:.1}%", 100.0 * v));
            writeln!(f, "{:<10} {:>12} {:>12}", fill.to_string(), cell(false), cell(true))?;
        }
        Ok(())
    }
}

/// CR for every fill strategy with and without context enhancement, all
/// sharing one clustering and one set of counts.
pub fn compare_strategies(
    basis: &ExtractionBasis,
    test: &[(Sentence, usize)],
    alpha: f64,
    beta: f64,
) -> Result<ComparisonTable> {
    let mut cells = Vec::with_capacity(6);
    for fill in FillStrategy::ALL {
        for context in [false, true] {
            let cfg = BuildConfig {
                beta,
                alpha: if context { alpha } else { 0.0 },
                fill,
            };
            let report = consistency_rate(&basis.assemble(&cfg)?, test)?;
            cells.push(ComparisonCell {
                fill,
                context,
                consistency_rate: report.consistency_rate,
                n_degenerate: report.n_degenerate,
            });
        }
    }
    Ok(ComparisonTable { alpha, beta, cells })
}
