//! Running extracted automata: weights, predictions and agreement with the teacher.

use serde::{Deserialize, Serialize};

use crate::builder::Wfa;
use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::linalg::{argmax, max_abs_diff};
use crate::teacher::{Classifier, Trace};

/// `I · Ê_{w1} ··· Ê_{wn} · F`, evaluated left to right.
pub fn weight(model: &Wfa, s: &Sentence) -> Result<Vec<f64>> {
    let f = state_distributions(model, s)?;
    Ok(model.final_weights().left_mul(f.last().expect("non-empty")))
}

/// `f_0 = I` followed by `f_i = f_{i-1} · Ê_{w_i}` for every word.
pub fn state_distributions(model: &Wfa, s: &Sentence) -> Result<Vec<Vec<f64>>> {
    if s.is_empty() {
        return Err(Error::EmptySentence);
    }
    let mut out = Vec::with_capacity(s.len() + 1);
    out.push(model.initial().to_vec());
    for w in &s.words {
        let next = model.matrix(w.as_str()).left_mul(out.last().expect("non-empty"));
        out.push(next);
    }
    Ok(out)
}

/// Same product as [`weight`], associated from the right: `I · (Ê_{w1} · (… (Ê_{wn} · F)))`.
pub fn weight_right_to_left(model: &Wfa, s: &Sentence) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Err(Error::EmptySentence);
    }
    let m = model.labels();
    let mut cols: Vec<Vec<f64>> = (0..m)
        .map(|j| model.final_weights().row_iter().map(|r| r[j]).collect())
        .collect();
    for w in s.words.iter().rev() {
        let mat = model.matrix(w.as_str());
        for c in cols.iter_mut() {
            *c = mat.right_mul(c);
        }
    }
    Ok(cols.iter().map(|c| crate::linalg::dot(model.initial(), c)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub weight: Vec<f64>,
    /// The weight vector was identically zero; only possible with null filling.
    pub degenerate: bool,
}

pub fn predict_detailed(model: &Wfa, s: &Sentence) -> Result<Prediction> {
    let weight = weight(model, s)?;
    Ok(Prediction {
        label: argmax(&weight),
        degenerate: weight.iter().all(|x| *x == 0.0),
        weight,
    })
}

pub fn predict(model: &Wfa, s: &Sentence) -> Result<usize> {
    Ok(predict_detailed(model, s)?.label)
}

impl Classifier for Wfa {
    fn predict(&self, s: &Sentence) -> Result<usize> {
        predict(self, s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub consistency_rate: f64,
    pub n_total: usize,
    pub n_agree: usize,
    /// Rows are teacher labels, columns model labels.
    pub confusion: Vec<Vec<usize>>,
    pub oov_rate: f64,
    pub n_degenerate: usize,
}

/// Agreement between `model` and the teacher's labels on a test set.
pub fn consistency_rate(model: &Wfa, test: &[(Sentence, usize)]) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let predict_one = |(s, _): &(Sentence, usize)| predict_detailed(model, s);
    #[cfg(feature = "parallel")]
    let preds: Vec<Prediction> = {
        use rayon::prelude::*;
        test.par_iter().map(predict_one).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let preds: Vec<Prediction> = test.iter().map(predict_one).collect::<Result<_>>()?;

    let m = test
        .iter()
        .map(|(_, l)| l + 1)
        .chain([model.labels()])
        .max()
        .unwrap_or(0);
    let mut confusion = vec![vec![0; m]; m];
    let (mut n_agree, mut n_degenerate, mut words, mut oov) = (0, 0, 0usize, 0usize);
    for ((s, teacher), p) in test.iter().zip(&preds) {
        confusion[*teacher][p.label] += 1;
        n_agree += usize::from(*teacher == p.label);
        n_degenerate += usize::from(p.degenerate);
        words += s.len();
        oov += s.words.iter().filter(|w| !model.contains(w.as_str())).count();
    }
    Ok(EvalReport {
        consistency_rate: n_agree as f64 / test.len() as f64,
        n_total: test.len(),
        n_agree,
        confusion,
        oov_rate: if words == 0 { 0.0 } else { oov as f64 / words as f64 },
        n_degenerate,
    })
}

/// Teacher labels read off recorded traces (argmax of each final output).
pub fn teacher_labels(traces: &[Trace]) -> Vec<(Sentence, usize)> {
    traces
        .iter()
        .map(|t| (t.sentence.clone(), t.predicted_label()))
        .collect()
}

/// Fraction of `test` on which any classifier reproduces the given labels.
pub fn agreement<C: Classifier + ?Sized>(c: &C, test: &[(Sentence, usize)]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let mut agree = 0;
    for (s, l) in test {
        agree += usize::from(c.predict(s)? == *l);
    }
    Ok(agree as f64 / test.len() as f64)
}

/// Share of the most common label; the score of always guessing it.
pub fn majority_baseline(test: &[(Sentence, usize)]) -> f64 {
    let mut counts = std::collections::HashMap::new();
    for (_, l) in test {
        *counts.entry(*l).or_insert(0usize) += 1;
    }
    counts.values().max().map_or(0.0, |&c| c as f64 / test.len() as f64)
}

/// Zipf estimate of the median per-word occurrence count: `2N / (m ln m)`.
pub fn estimate_median_transitions(m: usize, n: u64) -> Result<f64> {
    if m < 2 {
        return Err(Error::InvalidParameter("alphabet size must be at least 2".into()));
    }
    if n < 1 {
        return Err(Error::InvalidParameter("word count must be positive".into()));
    }
    let m = m as f64;
    Ok(2.0 * n as f64 / (m * m.ln()))
}

/// Largest deviation between the recursive state distributions and the
/// closed form `(1−α) Σ_k α^{i−k} M_k + α^i I`, with `M_k = f_{k−1} · E_{w_k}`
/// taken over the un-enhanced matrices.
pub fn check_context_decay(model: &Wfa, s: &Sentence) -> Result<f64> {
    let recursive = state_distributions(model, s)?;
    let alpha = model.config().alpha;
    let initial = model.initial();
    let decisions: Vec<Vec<f64>> = s
        .words
        .iter()
        .enumerate()
        .map(|(k, w)| model.base_matrix(w.as_str()).left_mul(&recursive[k]))
        .collect();

    let mut worst: f64 = 0.0;
    for i in 1..=s.len() {
        let mut closed: Vec<f64> = initial.iter().map(|x| alpha.powi(i as i32) * x).collect();
        for (k, mk) in decisions[..i].iter().enumerate() {
            let coef = (1.0 - alpha) * alpha.powi((i - (k + 1)) as i32);
            for (c, x) in closed.iter_mut().zip(mk) {
                *c += coef * x;
            }
        }
        worst = worst.max(max_abs_diff(&closed, &recursive[i]));
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecileStats {
    pub decile: usize,
    pub tokens: usize,
    pub mean_transitions: f64,
    /// Mean fraction of rows that had to be filled.
    pub missing_row_fraction: f64,
}

/// Missing-row statistics for tokens bucketed into frequency deciles (most
/// frequent first). `<unk>` is excluded.
pub fn sparsity_by_decile(model: &Wfa) -> Vec<DecileStats> {
    let n = model.n_states() as f64;
    let mut toks: Vec<_> = model
        .tokens()
        .iter()
        .filter(|t| !t.is_unk())
        .filter_map(|t| model.stats(t.as_str()))
        .collect();
    toks.sort_by(|a, b| b.transitions.cmp(&a.transitions));
    let total = toks.len();
    (0..10)
        .filter_map(|d| {
            let bucket = &toks[d * total / 10..(d + 1) * total / 10];
            if bucket.is_empty() {
                return None;
            }
            let len = bucket.len() as f64;
            Some(DecileStats {
                decile: d + 1,
                tokens: bucket.len(),
                mean_transitions: bucket.iter().map(|s| s.transitions as f64).sum::<f64>() / len,
                missing_row_fraction: bucket.iter().map(|s| s.missing_rows as f64 / n).sum::<f64>() / len,
            })
        })
        .collect()
}
