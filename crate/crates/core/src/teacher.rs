//! Black-box probabilistic classifiers and their per-prefix output traces.
//!
//! The extractor only ever sees recorded traces, so the JSON Lines trace file
//! is the boundary to any external model. [`SyntheticTeacher`] is a
//! hidden-state machine whose output after each prefix is its normalized
//! belief state pushed through a label-emission matrix.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use crate::corpus::{Alphabet, Sentence, Token, UNK};
use crate::error::{Error, Result};
use crate::linalg::{argmax, Matrix};
use crate::seed;

/// Row tolerance accepted when reading traces from disk.
pub const TRACE_ROW_TOLERANCE: f64 = 1e-4;

/// A label distribution emitted by the classifier after one prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbOutput(Vec<f64>);

impl ProbOutput {
    /// Checks non-negativity and that entries sum to 1 within `tol`.
    pub fn new(probs: Vec<f64>, tol: f64) -> std::result::Result<Self, String> {
        if probs.is_empty() {
            return Err("empty probability row".into());
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(format!("invalid probability {p}"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > tol {
            return Err(format!("probability row sums to {sum}"));
        }
        Ok(Self(probs))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub sentence: Sentence,
    pub outputs: Vec<ProbOutput>,
}

impl Trace {
    /// The classifier's prediction for the whole sentence: argmax of the last output.
    pub fn predicted_label(&self) -> usize {
        self.outputs.last().map_or(0, ProbOutput::argmax)
    }

    pub fn labels(&self) -> usize {
        self.outputs.first().map_or(0, ProbOutput::len)
    }
}

/// Anything that labels sentences; both teachers and extracted automata.
pub trait Classifier {
    fn predict(&self, s: &Sentence) -> Result<usize>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTeacher {
    hidden_states: usize,
    labels: usize,
    start: Vec<f64>,
    trans: BTreeMap<Token, Matrix>,
    emit: Matrix,
}

impl SyntheticTeacher {
    pub fn new(start: Vec<f64>, trans: BTreeMap<Token, Matrix>, emit: Matrix) -> Result<Self> {
        let h = start.len();
        let invalid = |m: String| Err(Error::InvalidParameter(m));
        if h == 0 {
            return invalid("teacher needs at least one hidden state".into());
        }
        if emit.rows() != h || emit.cols() < 1 {
            return invalid(format!("emit matrix must be {h}×m"));
        }
        if (start.iter().sum::<f64>() - 1.0).abs() > 1e-9 || start.iter().any(|p| *p < 0.0) {
            return invalid("start is not a distribution".into());
        }
        let stochastic = |m: &Matrix| m.max_row_sum_error() <= 1e-9 && m.as_slice().iter().all(|p| *p >= 0.0);
        if !stochastic(&emit) {
            return invalid("emit matrix is not row-stochastic".into());
        }
        for (tok, m) in &trans {
            if m.rows() != h || m.cols() != h {
                return invalid(format!("matrix for `{tok}` must be {h}×{h}"));
            }
            if !stochastic(m) {
                return invalid(format!("matrix for `{tok}` is not row-stochastic"));
            }
        }
        Ok(Self {
            hidden_states: h,
            labels: emit.cols(),
            start,
            trans,
            emit,
        })
    }

    pub fn hidden_states(&self) -> usize {
        self.hidden_states
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn emit(&self) -> &Matrix {
        &self.emit
    }

    pub fn transition(&self, token: &str) -> Option<&Matrix> {
        self.trans.get(token)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &Token> {
        self.trans.keys()
    }

    fn matrix_for(&self, token: &Token) -> Result<&Matrix> {
        self.trans
            .get(token)
            .or_else(|| self.trans.get(UNK))
            .ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    /// Per-prefix label distributions for `s`.
    pub fn run_trace(&self, s: &Sentence) -> Result<Trace> {
        let mut belief = self.start.clone();
        let mut outputs = Vec::with_capacity(s.len());
        for w in &s.words {
            belief = self.matrix_for(w)?.left_mul(&belief);
            let z: f64 = belief.iter().sum();
            if z > 0.0 {
                belief.iter_mut().for_each(|b| *b /= z);
            }
            let mut out = self.emit.left_mul(&belief);
            let zo: f64 = out.iter().sum();
            out.iter_mut().for_each(|p| *p /= zo);
            outputs.push(ProbOutput(out));
        }
        Ok(Trace {
            sentence: s.clone(),
            outputs,
        })
    }

    pub fn run_traces(&self, sentences: &[Sentence]) -> Result<Vec<Trace>> {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            sentences.par_iter().map(|s| self.run_trace(s)).collect()
        }
        #[cfg(not(feature = "parallel"))]
        sentences.iter().map(|s| self.run_trace(s)).collect()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let f = BufWriter::new(fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let raw: Self = serde_json::from_reader(BufReader::new(fs::File::open(path)?))?;
        // re-run validation on untrusted input
        Self::new(raw.start, raw.trans, raw.emit)
    }
}

impl Classifier for SyntheticTeacher {
    /// Argmax of the final output; ties go to the lowest label.
    fn predict(&self, s: &Sentence) -> Result<usize> {
        if s.is_empty() {
            return Err(Error::EmptySentence);
        }
        Ok(self.run_trace(s)?.predicted_label())
    }
}

pub fn run_trace(teacher: &SyntheticTeacher, s: &Sentence) -> Result<Trace> {
    teacher.run_trace(s)
}

pub fn teacher_predict(teacher: &SyntheticTeacher, s: &Sentence) -> Result<usize> {
    teacher.predict(s)
}

const DIRICHLET_CONCENTRATION: f64 = 0.5;

fn dirichlet_row<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let gamma = Gamma::new(DIRICHLET_CONCENTRATION, 1.0).expect("valid gamma parameters");
    loop {
        let mut row: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let z: f64 = row.iter().sum();
        if z > 0.0 && z.is_finite() {
            row.iter_mut().for_each(|x| *x /= z);
            return row;
        }
    }
}

fn dirichlet_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows).flat_map(|_| dirichlet_row(rng, cols)).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Random teacher over `alphabet` plus `<unk>`, every row drawn from a
/// symmetric Dirichlet(0.5).
pub fn sample_teacher(alphabet: &Alphabet, h: usize, m: usize, seed: u64) -> Result<SyntheticTeacher> {
    if h < 1 || m < 2 {
        return Err(Error::InvalidParameter(format!(
            "teacher needs h >= 1 and m >= 2 (got h={h}, m={m})"
        )));
    }
    let mut rng = seed::rng(seed);
    let start = dirichlet_row(&mut rng, h);
    let emit = dirichlet_matrix(&mut rng, h, m);
    let mut trans = BTreeMap::new();
    for t in alphabet.tokens().iter().cloned().chain([Token::unk()]) {
        if !trans.contains_key(&t) {
            let mat = dirichlet_matrix(&mut rng, h, h);
            trans.insert(t, mat);
        }
    }
    SyntheticTeacher::new(start, trans, emit)
}

/// Draws sentences whose words follow a Zipf law over `vocab` (index 0 most
/// frequent), with uniformly distributed lengths in `len_min..=len_max`.
/// Labels are left empty.
pub fn sample_sentences(
    vocab: &[Token],
    n: usize,
    len_min: usize,
    len_max: usize,
    zipf_exponent: f64,
    seed: u64,
) -> Result<Vec<Sentence>> {
    if vocab.is_empty() || len_min == 0 || len_min > len_max {
        return Err(Error::InvalidParameter("bad sentence sampler parameters".into()));
    }
    let weights = (1..=vocab.len()).map(|i| (i as f64).powf(-zipf_exponent));
    let dist = WeightedIndex::new(weights).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = seed::rng(seed);
    Ok((0..n)
        .map(|_| {
            let len = rng.random_range(len_min..=len_max);
            let words = (0..len).map(|_| vocab[dist.sample(&mut rng)].clone()).collect();
            Sentence::new(words, None)
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
struct TraceRecord {
    tokens: Vec<String>,
    label: usize,
    outputs: Vec<Vec<f64>>,
}

pub fn write_traces<W: Write>(w: W, traces: &[Trace]) -> Result<()> {
    let mut w = BufWriter::new(w);
    for t in traces {
        let rec = TraceRecord {
            tokens: t.sentence.words.iter().map(|w| w.as_str().to_owned()).collect(),
            label: t.sentence.label.unwrap_or_else(|| t.predicted_label()),
            outputs: t.outputs.iter().map(|o| o.0.clone()).collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_traces_file(path: &Path, traces: &[Trace]) -> Result<()> {
    write_traces(fs::File::create(path)?, traces)
}

/// Parses and validates trace records; errors name the 0-based record index.
pub fn read_traces<R: Read>(r: R) -> Result<Vec<Trace>> {
    let mut out = Vec::new();
    let mut width: Option<usize> = None;
    for line in BufReader::new(r).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let index = out.len();
        let bad = |message: String| Error::TraceRecord { index, message };
        let rec: TraceRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if rec.tokens.is_empty() {
            return Err(bad("no tokens".into()));
        }
        if rec.tokens.len() != rec.outputs.len() {
            return Err(bad(format!(
                "{} tokens but {} outputs",
                rec.tokens.len(),
                rec.outputs.len()
            )));
        }
        let words = rec
            .tokens
            .iter()
            .map(|t| Token::parse(t).ok_or_else(|| bad(format!("invalid token {t:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let mut outputs = Vec::with_capacity(rec.outputs.len());
        for (step, row) in rec.outputs.into_iter().enumerate() {
            let m = *width.get_or_insert(row.len());
            if row.len() != m {
                return Err(bad(format!("output {step} has {} labels, expected {m}", row.len())));
            }
            outputs.push(ProbOutput::new(row, TRACE_ROW_TOLERANCE).map_err(|e| bad(format!("output {step}: {e}")))?);
        }
        out.push(Trace {
            sentence: Sentence::new(words, Some(rec.label)),
            outputs,
        });
    }
    Ok(out)
}

pub fn read_traces_file(path: &Path) -> Result<Vec<Trace>> {
    read_traces(fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_alphabet;
    use proptest::prelude::*;

    fn swap_teacher() -> SyntheticTeacher {
        let mut trans = BTreeMap::new();
        trans.insert(Token::new("a"), Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]));
        SyntheticTeacher::new(vec![1.0, 0.0], trans, Matrix::identity(2)).unwrap()
    }

    fn random_teacher(seed: u64) -> (Alphabet, SyntheticTeacher) {
        let corpus = vec![Sentence::from_text("a b c d e", None)];
        let alphabet = build_alphabet(&corpus).unwrap();
        let t = sample_teacher(&alphabet, 4, 3, seed).unwrap();
        (alphabet, t)
    }

    #[test]
    fn hand_propagated_belief() {
        let tr = swap_teacher().run_trace(&Sentence::from_text("a a", None)).unwrap();
        assert_eq!(tr.outputs[0].as_slice(), &[0.0, 1.0]);
        assert_eq!(tr.outputs[1].as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn single_state_teacher_is_constant() {
        let mut trans = BTreeMap::new();
        trans.insert(Token::new("x"), Matrix::identity(1));
        trans.insert(Token::unk(), Matrix::identity(1));
        let t = SyntheticTeacher::new(vec![1.0], trans, Matrix::from_rows(&[[0.9, 0.1]])).unwrap();
        let s = Sentence::from_text("x y x", None);
        let tr = t.run_trace(&s).unwrap();
        assert!(tr.outputs.iter().all(|o| o.as_slice() == [0.9, 0.1]));
        assert_eq!(t.predict(&s).unwrap(), 0);
    }

    #[test]
    fn identity_transitions_fix_output() {
        let mut trans = BTreeMap::new();
        trans.insert(Token::new("x"), Matrix::identity(2));
        let emit = Matrix::from_rows(&[[0.2, 0.8], [0.6, 0.4]]);
        let t = SyntheticTeacher::new(vec![0.5, 0.5], trans, emit).unwrap();
        let tr = t.run_trace(&Sentence::from_text("x x x", None)).unwrap();
        for o in &tr.outputs {
            assert!((o.as_slice()[0] - 0.4).abs() < 1e-15);
            assert!((o.as_slice()[1] - 0.6).abs() < 1e-15);
        }
        assert_eq!(t.predict(&Sentence::from_text("x", None)).unwrap(), 1);
    }

    #[test]
    fn argmax_tie_goes_low() {
        let mut trans = BTreeMap::new();
        trans.insert(Token::new("x"), Matrix::identity(1));
        let t = SyntheticTeacher::new(vec![1.0], trans, Matrix::from_rows(&[[0.5, 0.5]])).unwrap();
        assert_eq!(t.predict(&Sentence::from_text("x", None)).unwrap(), 0);
    }

    #[test]
    fn unknown_word_without_unk_errors() {
        let err = swap_teacher().run_trace(&Sentence::from_text("a b", None)).unwrap_err();
        assert!(matches!(err, Error::UnknownToken(t) if t == "b"));
    }

    #[test]
    fn sampled_teacher_shape_and_determinism() {
        let vocab: Vec<Sentence> = vec![Sentence::new((0..50).map(|i| Token::new(format!("w{i}"))).collect(), None)];
        let alphabet = build_alphabet(&vocab).unwrap();
        let t = sample_teacher(&alphabet, 5, 3, 11).unwrap();
        assert_eq!(t.tokens().filter(|t| !t.is_unk()).count(), 50);
        assert!(t.transition(UNK).is_some());
        for tok in t.tokens() {
            let m = t.transition(tok.as_str()).unwrap();
            assert_eq!((m.rows(), m.cols()), (5, 5));
            assert!(m.max_row_sum_error() < 1e-9);
        }
        assert_eq!((t.emit().rows(), t.emit().cols()), (5, 3));
        assert!(t.emit().max_row_sum_error() < 1e-9);
        assert_eq!(t, sample_teacher(&alphabet, 5, 3, 11).unwrap());
        assert_ne!(t, sample_teacher(&alphabet, 5, 3, 12).unwrap());
    }

    #[test]
    fn sample_teacher_rejects_bad_shape() {
        let (alphabet, _) = random_teacher(0);
        assert!(sample_teacher(&alphabet, 0, 3, 0).is_err());
        assert!(sample_teacher(&alphabet, 2, 1, 0).is_err());
    }

    #[test]
    fn trace_file_validation() {
        assert!(read_traces("".as_bytes()).unwrap().is_empty());
        let mut buf = Vec::new();
        write_traces(&mut buf, &[]).unwrap();
        assert!(buf.is_empty());

        let short = r#"{"tokens":["a","b"],"label":0,"outputs":[[0.5,0.5]]}"#;
        assert!(matches!(read_traces(short.as_bytes()), Err(Error::TraceRecord { index: 0, .. })));

        let bad_sum = "{\"tokens\":[\"a\"],\"label\":0,\"outputs\":[[0.5,0.5]]}\n{\"tokens\":[\"a\"],\"label\":0,\"outputs\":[[0.5,0.4]]}";
        let err = read_traces(bad_sum.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::TraceRecord { index: 1, .. }), "{err}");

        let ragged = r#"{"tokens":["a","b"],"label":0,"outputs":[[1.0],[0.5,0.5]]}"#;
        assert!(read_traces(ragged.as_bytes()).is_err());
    }

    #[test]
    fn teacher_json_round_trip() {
        let (_, t) = random_teacher(5);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("teacher.json");
        t.write_json(&p).unwrap();
        assert_eq!(SyntheticTeacher::read_json(&p).unwrap(), t);
    }

    fn arb_sentence() -> impl Strategy<Value = Sentence> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e", "zz"]), 1..12)
            .prop_map(|ws| Sentence::new(ws.into_iter().map(Token::new).collect(), None))
    }

    proptest! {
        #[test]
        fn outputs_on_simplex_and_prefix_causal(seed in any::<u64>(), s in arb_sentence(), cut in 1usize..12) {
            let (_, t) = random_teacher(seed);
            let full = t.run_trace(&s).unwrap();
            prop_assert_eq!(full.outputs.len(), s.len());
            for o in &full.outputs {
                prop_assert!(o.as_slice().iter().all(|p| *p >= 0.0));
                prop_assert!((o.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            let cut = cut.min(s.len());
            let prefix = Sentence::new(s.words[..cut].to_vec(), None);
            let part = t.run_trace(&prefix).unwrap();
            prop_assert_eq!(&part.outputs[..], &full.outputs[..cut]);
        }

        #[test]
        fn trace_io_round_trip(seed in any::<u64>(), ss in prop::collection::vec(arb_sentence(), 0..6)) {
            let (_, t) = random_teacher(seed);
            let traces: Vec<Trace> = ss
                .iter()
                .map(|s| {
                    let mut tr = t.run_trace(s).unwrap();
                    tr.sentence.label = Some(tr.predicted_label());
                    tr
                })
                .collect();
            let mut buf = Vec::new();
            write_traces(&mut buf, &traces).unwrap();
            let back = read_traces(buf.as_slice()).unwrap();
            prop_assert_eq!(back, traces);
        }
    }
}
