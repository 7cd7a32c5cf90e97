//! Transition-rule extraction and WFA assembly.
//!
//! Rows of a token's count matrix with observations become frequency ratios.
//! Rows with no observations ("missing rows") are filled by the configured
//! strategy; the empirical strategy blends a softmin-distance-weighted average
//! of the other states' behaviour (weight `beta`) with staying put. Finally
//! every matrix is pulled toward the identity by the static probability
//! `alpha` so the automaton retains context.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::abstraction::{fit_states, AbstractStateSet, Transition};
use crate::corpus::Token;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::teacher::Trace;

pub const MODEL_VERSION: &str = "wfa-extract/1";

/// Per-token integer transition counts over `n_states` abstract states.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CountMatrices {
    n_states: usize,
    counts: BTreeMap<Token, Vec<u64>>,
}

impl CountMatrices {
    pub fn new(n_states: usize) -> Self {
        Self {
            n_states,
            counts: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, t: &Transition) -> Result<()> {
        let n = self.n_states;
        for index in [t.from, t.to] {
            if index >= n {
                return Err(Error::StateOutOfRange { index, n_states: n });
            }
        }
        if t.to == 0 {
            return Err(Error::InvalidParameter("no transition may enter the initial state".into()));
        }
        let m = self.counts.entry(t.token.clone()).or_insert_with(|| vec![0; n * n]);
        m[t.from * n + t.to] += 1;
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    /// Row-major counts; `None` for tokens never observed (all zero).
    pub fn get(&self, token: &str) -> Option<&[u64]> {
        self.counts.get(token).map(Vec::as_slice)
    }

    pub fn count(&self, token: &str, from: usize, to: usize) -> u64 {
        self.get(token).map_or(0, |m| m[from * self.n_states + to])
    }

    pub fn tokens(&self) -> impl Iterator<Item = &Token> {
        self.counts.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Token, &[u64])> {
        self.counts.iter().map(|(t, m)| (t, m.as_slice()))
    }

    pub fn total(&self) -> u64 {
        self.counts.values().flatten().sum()
    }

    /// Rows of `token`'s matrix with no observed transitions.
    pub fn missing_rows(&self, token: &str) -> usize {
        let n = self.n_states;
        match self.get(token) {
            None => n,
            Some(m) => m.chunks_exact(n).filter(|r| r.iter().all(|c| *c == 0)).count(),
        }
    }
}

/// Counts transitions over `k` clusters plus the initial state.
pub fn count_transitions<'a, I>(transitions: I, k: usize) -> Result<CountMatrices>
where
    I: IntoIterator<Item = &'a Transition>,
{
    let mut c = CountMatrices::new(k + 1);
    for t in transitions {
        c.add(t)?;
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillStrategy {
    Empirical,
    Uniform,
    Null,
}

impl FillStrategy {
    pub const ALL: [FillStrategy; 3] = [FillStrategy::Null, FillStrategy::Uniform, FillStrategy::Empirical];
}

impl fmt::Display for FillStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FillStrategy::Empirical => "empirical",
            FillStrategy::Uniform => "uniform",
            FillStrategy::Null => "null",
        })
    }
}

impl FromStr for FillStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "empirical" => Ok(FillStrategy::Empirical),
            "uniform" => Ok(FillStrategy::Uniform),
            "null" => Ok(FillStrategy::Null),
            other => Err(Error::InvalidParameter(format!("unknown fill strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    /// Reference rate for empirical filling.
    pub beta: f64,
    /// Static probability of staying in the current state.
    pub alpha: f64,
    pub fill: FillStrategy,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            beta: 0.3,
            alpha: 0.2,
            fill: FillStrategy::Empirical,
        }
    }
}

impl BuildConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// `exp(-M[i,k])` rescaled per row by `exp(min_k M[i,k])`. The rescaling
/// cancels in the missing-row ratio and keeps the weights away from underflow.
#[derive(Debug, Clone)]
pub struct SoftminWeights(Matrix);

impl SoftminWeights {
    pub fn new(distance: &Matrix) -> Self {
        let n = distance.rows();
        let mut w = Matrix::zeros(n, n);
        for i in 0..n {
            let row = distance.row(i);
            let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
            for (o, d) in w.row_mut(i).iter_mut().zip(row) {
                *o = (-(d - lo)).exp();
            }
        }
        Self(w)
    }
}

/// Builds the row-stochastic transition matrix for one token from its counts
/// (row-major, `n×n` where `n = distance.rows()`).
pub fn build_transition_matrix(counts: &[u64], distance: &Matrix, cfg: &BuildConfig) -> Matrix {
    transition_matrix_with(counts, &SoftminWeights::new(distance), cfg)
}

pub fn transition_matrix_with(counts: &[u64], weights: &SoftminWeights, cfg: &BuildConfig) -> Matrix {
    let n = weights.0.rows();
    assert_eq!(counts.len(), n * n, "count matrix shape mismatch");
    let row_sums: Vec<u64> = counts.chunks_exact(n).map(|r| r.iter().sum()).collect();
    let all_zero = row_sums.iter().all(|s| *s == 0);
    let mut e = Matrix::zeros(n, n);

    for i in 0..n {
        let out = e.row_mut(i);
        if row_sums[i] > 0 {
            let z = row_sums[i] as f64;
            for (o, c) in out.iter_mut().zip(&counts[i * n..(i + 1) * n]) {
                *o = *c as f64 / z;
            }
            continue;
        }
        match cfg.fill {
            FillStrategy::Null => {}
            FillStrategy::Uniform => out.fill(1.0 / n as f64),
            FillStrategy::Empirical if all_zero => out[i] = 1.0,
            FillStrategy::Empirical => {
                // reference[j] = Σ_k w[i,k]·T[k,j]
                let w = weights.0.row(i);
                let mut reference = vec![0.0; n];
                for (k, wk) in w.iter().enumerate() {
                    if row_sums[k] == 0 {
                        continue;
                    }
                    for (r, c) in reference.iter_mut().zip(&counts[k * n..(k + 1) * n]) {
                        *r += wk * *c as f64;
                    }
                }
                let z: f64 = reference.iter().sum();
                for (o, r) in out.iter_mut().zip(&reference) {
                    *o = cfg.beta * r / z;
                }
                out[i] += 1.0 - cfg.beta;
            }
        }
    }
    e
}

/// `alpha·I + (1 − alpha)·E`.
pub fn enhance_context(e: &Matrix, alpha: f64) -> Matrix {
    let n = e.rows();
    let mut out = Matrix::from_vec(n, e.cols(), e.as_slice().iter().map(|x| (1.0 - alpha) * x).collect());
    for i in 0..n.min(e.cols()) {
        out[(i, i)] += alpha;
    }
    out
}

/// Abstract states and counts shared by every model built from one trace set.
#[derive(Debug, Clone)]
pub struct ExtractionBasis {
    pub states: AbstractStateSet,
    pub counts: CountMatrices,
    pub n_traces: usize,
}

impl ExtractionBasis {
    /// Clusters every output of every trace and counts the abstract transitions.
    pub fn fit(traces: &[Trace], k: usize, seed: u64) -> Result<Self> {
        if traces.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let outputs: Vec<&[f64]> = traces
            .iter()
            .flat_map(|t| t.outputs.iter().map(|o| o.as_slice()))
            .collect();
        let states = fit_states(&outputs, k, seed)?;
        let mut counts = CountMatrices::new(states.n_states());
        for t in traces {
            for tr in states.trace_to_transitions(t) {
                counts.add(&tr)?;
            }
        }
        Ok(Self {
            states,
            counts,
            n_traces: traces.len(),
        })
    }

    /// Builds every observed token's matrix plus `<unk>`.
    pub fn assemble(&self, cfg: &BuildConfig) -> Result<Wfa> {
        cfg.validate()?;
        let n = self.states.n_states();
        let weights = SoftminWeights::new(self.states.distance());
        let mut tokens: Vec<Token> = self.counts.tokens().cloned().collect();
        if !tokens.iter().any(Token::is_unk) {
            tokens.push(Token::unk());
        }
        let zeros = vec![0u64; n * n];
        let build = |t: &Token| {
            let counts = self.counts.get(t.as_str()).unwrap_or(&zeros);
            let e = transition_matrix_with(counts, &weights, cfg);
            enhance_context(&e, cfg.alpha)
        };
        #[cfg(feature = "parallel")]
        let matrices: Vec<Matrix> = {
            use rayon::prelude::*;
            tokens.par_iter().map(build).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let matrices: Vec<Matrix> = tokens.iter().map(build).collect();

        let stats = tokens
            .iter()
            .map(|t| TokenStats {
                transitions: self.counts.get(t.as_str()).map_or(0, |m| m.iter().sum()),
                missing_rows: self.counts.missing_rows(t.as_str()),
            })
            .collect();
        Wfa::new(self.states.clone(), tokens, matrices, *cfg, stats)
    }
}

pub fn build_wfa(traces: &[Trace], k: usize, cfg: &BuildConfig, seed: u64) -> Result<Wfa> {
    ExtractionBasis::fit(traces, k, seed)?.assemble(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenStats {
    /// Observed transitions on this token.
    pub transitions: u64,
    /// Rows that had no observations before filling.
    pub missing_rows: usize,
}

/// An extracted weighted automaton: one-hot initial vector on state 0,
/// per-token enhanced transition matrices, and state centers as final weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Wfa {
    states: AbstractStateSet,
    tokens: Vec<Token>,
    index: HashMap<Token, usize>,
    unk: usize,
    matrices: Vec<Matrix>,
    initial: Vec<f64>,
    final_weights: Matrix,
    config: BuildConfig,
    stats: Vec<TokenStats>,
}

impl Wfa {
    pub fn new(
        states: AbstractStateSet,
        tokens: Vec<Token>,
        matrices: Vec<Matrix>,
        config: BuildConfig,
        stats: Vec<TokenStats>,
    ) -> Result<Self> {
        let n = states.n_states();
        if tokens.len() != matrices.len() || stats.len() != tokens.len() {
            return Err(Error::Model("token, matrix and stats counts differ".into()));
        }
        if let Some((t, _)) = tokens.iter().zip(&matrices).find(|(_, m)| m.rows() != n || m.cols() != n) {
            return Err(Error::Model(format!("matrix for `{t}` is not {n}×{n}")));
        }
        let index: HashMap<Token, usize> = tokens.iter().cloned().enumerate().map(|(i, t)| (t, i)).collect();
        if index.len() != tokens.len() {
            return Err(Error::Model("duplicate tokens".into()));
        }
        let unk = *index
            .get(crate::corpus::UNK)
            .ok_or_else(|| Error::Model("model has no `<unk>` matrix".into()))?;
        let mut initial = vec![0.0; n];
        initial[0] = 1.0;
        let final_weights = Matrix::from_rows(states.centers());
        Ok(Self {
            states,
            tokens,
            index,
            unk,
            matrices,
            initial,
            final_weights,
            config,
            stats,
        })
    }

    pub fn states(&self) -> &AbstractStateSet {
        &self.states
    }

    pub fn n_states(&self) -> usize {
        self.states.n_states()
    }

    pub fn labels(&self) -> usize {
        self.final_weights.cols()
    }

    pub fn config(&self) -> &BuildConfig {
        &self.config
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// Final weights `F`, one row per state.
    pub fn final_weights(&self) -> &Matrix {
        &self.final_weights
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Enhanced matrix for `token`, falling back to `<unk>` for unknown tokens.
    pub fn matrix(&self, token: &str) -> &Matrix {
        &self.matrices[self.index.get(token).copied().unwrap_or(self.unk)]
    }

    /// The matrix before context enhancement, recovered by inverting the blend.
    /// With `alpha = 1` the original is not recoverable and the identity is returned.
    pub fn base_matrix(&self, token: &str) -> Matrix {
        let alpha = self.config.alpha;
        let enhanced = self.matrix(token);
        if alpha >= 1.0 {
            return enhanced.clone();
        }
        let n = enhanced.rows();
        let mut e = Matrix::from_vec(n, n, enhanced.as_slice().iter().map(|x| x / (1.0 - alpha)).collect());
        for i in 0..n {
            e[(i, i)] -= alpha / (1.0 - alpha);
        }
        e
    }

    pub fn stats(&self, token: &str) -> Option<TokenStats> {
        self.index.get(token).map(|&i| self.stats[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Token, &Matrix)> {
        self.tokens.iter().zip(&self.matrices)
    }

    pub fn to_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, &ModelFile::from(self))?;
        Ok(())
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&ModelFile::from(self)).expect("model serializes")
    }

    pub fn from_json<R: Read>(r: R) -> Result<Self> {
        let file: ModelFile = serde_json::from_reader(r)?;
        file.into_wfa()
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str::<ModelFile>(s)?.into_wfa()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: String,
    k: usize,
    m: usize,
    alpha: f64,
    beta: f64,
    fill_strategy: FillStrategy,
    centers: Vec<Vec<f64>>,
    alphabet: BTreeMap<String, usize>,
    matrices: BTreeMap<String, Vec<f64>>,
    initial: Vec<f64>,
    #[serde(default)]
    cluster_sizes: Vec<usize>,
    #[serde(default)]
    token_stats: BTreeMap<String, TokenStats>,
}

impl From<&Wfa> for ModelFile {
    fn from(w: &Wfa) -> Self {
        Self {
            version: MODEL_VERSION.to_owned(),
            k: w.states.n_clusters(),
            m: w.labels(),
            alpha: w.config.alpha,
            beta: w.config.beta,
            fill_strategy: w.config.fill,
            centers: w.states.centers().to_vec(),
            alphabet: w.tokens.iter().enumerate().map(|(i, t)| (t.to_string(), i)).collect(),
            matrices: w.iter().map(|(t, m)| (t.to_string(), m.as_slice().to_vec())).collect(),
            initial: w.initial.clone(),
            cluster_sizes: w.states.sizes().to_vec(),
            token_stats: w.tokens.iter().zip(&w.stats).map(|(t, s)| (t.to_string(), *s)).collect(),
        }
    }
}

impl ModelFile {
    fn into_wfa(self) -> Result<Wfa> {
        if self.version != MODEL_VERSION {
            return Err(Error::Model(format!("unsupported model version `{}`", self.version)));
        }
        let n = self.k + 1;
        if self.centers.len() != n || self.centers.iter().any(|c| c.len() != self.m) {
            return Err(Error::Model(format!("centers must be {n}×{}", self.m)));
        }
        let mut one_hot = vec![0.0; n];
        one_hot[0] = 1.0;
        if self.initial != one_hot {
            return Err(Error::Model("initial vector must be one-hot at state 0".into()));
        }
        let mut slots: Vec<Option<Token>> = vec![None; self.alphabet.len()];
        for (t, i) in &self.alphabet {
            let tok = Token::parse(t).ok_or_else(|| Error::Model(format!("invalid token {t:?}")))?;
            match slots.get_mut(*i) {
                Some(slot @ None) => *slot = Some(tok),
                _ => return Err(Error::Model(format!("bad alphabet index {i} for `{t}`"))),
            }
        }
        let tokens: Vec<Token> = slots.into_iter().map(|t| t.expect("slots filled")).collect();
        let mut matrices = Vec::with_capacity(tokens.len());
        let mut stats = Vec::with_capacity(tokens.len());
        let mut raw = self.matrices;
        for t in &tokens {
            let data = raw
                .remove(t.as_str())
                .ok_or_else(|| Error::Model(format!("no matrix for `{t}`")))?;
            if data.len() != n * n {
                return Err(Error::Model(format!("matrix for `{t}` has {} entries, expected {}", data.len(), n * n)));
            }
            matrices.push(Matrix::from_vec(n, n, data));
            stats.push(self.token_stats.get(t.as_str()).copied().unwrap_or(TokenStats {
                transitions: 0,
                missing_rows: 0,
            }));
        }
        if let Some(extra) = raw.keys().next() {
            return Err(Error::Model(format!("matrix for `{extra}` missing from alphabet")));
        }
        let states = AbstractStateSet::from_centers(self.centers, self.cluster_sizes)?;
        let config = BuildConfig {
            alpha: self.alpha,
            beta: self.beta,
            fill: self.fill_strategy,
        };
        config.validate()?;
        Wfa::new(states, tokens, matrices, config, stats)
    }
}
