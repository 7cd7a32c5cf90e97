//! Tokens, the ranked alphabet, corpus files and word embeddings.

use std::borrow::Borrow;
use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::squared_distance;

/// Surface form of the unknown word.
pub const UNK: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(String);

impl Token {
    /// Panics on empty or whitespace-containing text; use [`Token::parse`]
    /// for untrusted input.
    pub fn new(text: impl Into<String>) -> Self {
        let text = text.into();
        assert!(
            !text.is_empty() && !text.contains(char::is_whitespace),
            "invalid token {text:?}"
        );
        Token(text)
    }

    pub fn parse(text: &str) -> Option<Self> {
        (!text.is_empty() && !text.contains(char::is_whitespace)).then(|| Token(text.to_owned()))
    }

    pub fn unk() -> Self {
        Token(UNK.to_owned())
    }

    pub fn is_unk(&self) -> bool {
        self.0 == UNK
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Borrow<str> for Token {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Token {
    fn from(s: &str) -> Self {
        Token::new(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub words: Vec<Token>,
    pub label: Option<usize>,
}

impl Sentence {
    pub fn new(words: Vec<Token>, label: Option<usize>) -> Self {
        Self { words, label }
    }

    /// Convenience for tests and examples: whitespace-separated tokens, verbatim.
    pub fn from_text(text: &str, label: Option<usize>) -> Self {
        Self {
            words: text.split_whitespace().map(Token::new).collect(),
            label,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Lowercases, splits on whitespace and strips punctuation at word
/// boundaries. The literal `<unk>` passes through untouched.
pub fn tokenize(text: &str) -> Vec<Token> {
    text.split_whitespace()
        .filter_map(|raw| {
            if raw == UNK {
                return Some(Token::unk());
            }
            let lowered = raw.to_lowercase();
            let trimmed = lowered.trim_matches(|c: char| !c.is_alphanumeric());
            Token::parse(trimmed)
        })
        .collect()
}

/// The corpus vocabulary ranked by descending frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct Alphabet {
    tokens: Vec<Token>,
    ranks: HashMap<Token, usize>,
    counts: HashMap<Token, u64>,
}

impl Alphabet {
    /// Counts every token; ranks by descending count, ties by first occurrence.
    pub fn build<'a, I>(sentences: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Sentence>,
    {
        let mut order: Vec<Token> = Vec::new();
        let mut counts: HashMap<Token, u64> = HashMap::new();
        for s in sentences {
            for w in &s.words {
                let c = counts.entry(w.clone()).or_insert_with(|| {
                    order.push(w.clone());
                    0
                });
                *c += 1;
            }
        }
        if order.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        // stable sort keeps first-occurrence order among equal counts
        order.sort_by(|a, b| counts[b].cmp(&counts[a]));
        let ranks = order
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i + 1))
            .collect();
        Ok(Self {
            tokens: order,
            ranks,
            counts,
        })
    }

    /// Adds `<unk>` with count 0 at the last rank if it is not already present.
    pub fn with_unk(mut self) -> Self {
        let unk = Token::unk();
        if !self.ranks.contains_key(&unk) {
            self.tokens.push(unk.clone());
            self.ranks.insert(unk.clone(), self.tokens.len());
            self.counts.insert(unk, 0);
        }
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens in rank order (most frequent first).
    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn rank(&self, token: &str) -> Option<usize> {
        self.ranks.get(token).copied()
    }

    pub fn count(&self, token: &str) -> u64 {
        self.counts.get(token).copied().unwrap_or(0)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ranks.contains_key(token)
    }

    /// Total number of word occurrences, `N`.
    pub fn total_count(&self) -> u64 {
        self.counts.values().sum()
    }
}

pub fn build_alphabet(sentences: &[Sentence]) -> Result<Alphabet> {
    Alphabet::build(sentences)
}

/// Reads `<label>\t<tokens>` lines. Blank lines are skipped.
pub fn read_corpus(path: &Path) -> Result<Vec<Sentence>> {
    let file = fs::File::open(path)?;
    parse_corpus(file, path)
}

pub fn parse_corpus<R: Read>(reader: R, path: &Path) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: &str| Error::Parse {
            path: path.to_owned(),
            line: lineno,
            message: message.to_owned(),
        };
        let (label, text) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected `<label>\\t<tokens>`"))?;
        let label: usize = label
            .trim()
            .parse()
            .map_err(|_| parse_err("label is not a non-negative integer"))?;
        let words = tokenize(text);
        if words.is_empty() {
            return Err(parse_err("sentence has no tokens"));
        }
        out.push(Sentence::new(words, Some(label)));
    }
    Ok(out)
}

pub fn write_corpus<W: Write>(mut w: W, sentences: &[Sentence]) -> Result<()> {
    for (i, s) in sentences.iter().enumerate() {
        let label = s
            .label
            .ok_or_else(|| Error::InvalidParameter(format!("sentence {i} has no label")))?;
        let text: Vec<&str> = s.words.iter().map(Token::as_str).collect();
        writeln!(w, "{label}\t{}", text.join(" "))?;
    }
    Ok(())
}

/// Word vectors restricted to the alphabet, carrying ranks for tie-breaking.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<Token, Vec<f64>>,
    // table vocabulary in alphabet rank order
    order: Vec<Token>,
    ranks: HashMap<Token, usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingReport {
    /// Alphabet tokens that received a vector.
    pub covered: usize,
    /// Alphabet tokens absent from the file, in rank order.
    pub skipped: Vec<Token>,
    /// Tokens that appeared more than once, with the line that won.
    pub duplicates: Vec<(Token, usize)>,
    /// File entries that are not in the alphabet.
    pub outside_alphabet: usize,
}

impl EmbeddingReport {
    pub fn coverage(&self) -> f64 {
        let total = self.covered + self.skipped.len();
        if total == 0 {
            0.0
        } else {
            self.covered as f64 / total as f64
        }
    }
}

impl EmbeddingTable {
    /// Builds a table directly from vectors. Tokens outside the alphabet are dropped.
    pub fn from_vectors(
        vectors: impl IntoIterator<Item = (Token, Vec<f64>)>,
        alphabet: &Alphabet,
    ) -> Result<Self> {
        let mut dim = None;
        let mut kept = HashMap::new();
        for (i, (tok, v)) in vectors.into_iter().enumerate() {
            let d = *dim.get_or_insert(v.len());
            if v.len() != d || d == 0 {
                return Err(Error::EmbeddingDim {
                    line: i + 1,
                    expected: d,
                    found: v.len(),
                });
            }
            if alphabet.contains(tok.as_str()) {
                kept.insert(tok, v);
            }
        }
        Ok(Self::assemble(dim.unwrap_or(0), kept, alphabet))
    }

    fn assemble(dim: usize, vectors: HashMap<Token, Vec<f64>>, alphabet: &Alphabet) -> Self {
        let order: Vec<Token> = alphabet
            .tokens()
            .iter()
            .filter(|t| vectors.contains_key(*t))
            .cloned()
            .collect();
        let ranks = order
            .iter()
            .map(|t| (t.clone(), alphabet.rank(t.as_str()).unwrap_or(usize::MAX)))
            .collect();
        Self {
            dim,
            vectors,
            order,
            ranks,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }

    /// The `k` nearest other tokens by Euclidean distance, ascending; equal
    /// distances are ordered by alphabet rank.
    pub fn synonyms(&self, token: &str, k: usize) -> Result<Vec<Token>> {
        let query = self
            .get(token)
            .ok_or_else(|| Error::NoEmbedding(token.to_owned()))?;
        let available = self.len() - 1;
        if k == 0 || k > available {
            return Err(Error::KTooLarge {
                requested: k,
                available,
            });
        }
        let mut scored: Vec<(f64, usize, &Token)> = self
            .order
            .iter()
            .filter(|t| t.as_str() != token)
            .map(|t| (squared_distance(query, &self.vectors[t]), self.ranks[t], t))
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(scored.into_iter().take(k).map(|(_, _, t)| t.clone()).collect())
    }
}

/// Loads a GloVe-style text file (`token v1 .. vd` per line), keeping only
/// alphabet tokens.
pub fn load_embeddings(path: &Path, alphabet: &Alphabet) -> Result<(EmbeddingTable, EmbeddingReport)> {
    let file = fs::File::open(path)?;
    parse_embeddings(file, path, alphabet)
}

pub fn parse_embeddings<R: Read>(
    reader: R,
    path: &Path,
    alphabet: &Alphabet,
) -> Result<(EmbeddingTable, EmbeddingReport)> {
    let mut dim: Option<usize> = None;
    let mut vectors: HashMap<Token, Vec<f64>> = HashMap::new();
    let mut seen_at: HashMap<Token, usize> = HashMap::new();
    let mut report = EmbeddingReport::default();

    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let values = fields
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_owned(),
                line: lineno,
                message: format!("bad vector component: {e}"),
            })?;
        if values.is_empty() {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: lineno,
                message: "missing vector components".into(),
            });
        }
        let expected = *dim.get_or_insert(values.len());
        if values.len() != expected {
            return Err(Error::EmbeddingDim {
                line: lineno,
                expected,
                found: values.len(),
            });
        }
        let token = Token::new(word);
        let first = seen_at.insert(token.clone(), lineno).is_none();
        if !first {
            log::warn!(
                "{}:{lineno}: duplicate embedding for `{token}`, keeping the later one",
                path.display()
            );
            report.duplicates.push((token.clone(), lineno));
        }
        if alphabet.contains(word) {
            vectors.insert(token, values);
        } else if first {
            report.outside_alphabet += 1;
        }
    }

    let table = EmbeddingTable::assemble(dim.unwrap_or(0), vectors, alphabet);
    report.covered = table.len();
    report.skipped = alphabet
        .tokens()
        .iter()
        .filter(|t| !t.is_unk() && !table.contains(t.as_str()))
        .cloned()
        .collect();
    Ok((table, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sents(texts: &[&str]) -> Vec<Sentence> {
        texts.iter().map(|t| Sentence::from_text(t, Some(0))).collect()
    }

    fn table(pairs: &[(&str, &[f64])]) -> EmbeddingTable {
        let corpus: Vec<Sentence> = pairs.iter().map(|(t, _)| Sentence::from_text(t, None)).collect();
        let alphabet = Alphabet::build(&corpus).unwrap();
        EmbeddingTable::from_vectors(
            pairs.iter().map(|(t, v)| (Token::new(*t), v.to_vec())),
            &alphabet,
        )
        .unwrap()
    }

    #[test]
    fn counts_and_ranks() {
        let a = build_alphabet(&sents(&["a b a"])).unwrap();
        assert_eq!(a.count("a"), 2);
        assert_eq!(a.count("b"), 1);
        assert_eq!(a.rank("a"), Some(1));
        assert_eq!(a.rank("b"), Some(2));
    }

    #[test]
    fn ties_ranked_by_first_occurrence() {
        let a = build_alphabet(&sents(&["a", "b"])).unwrap();
        assert_eq!(a.rank("a"), Some(1));
        assert_eq!(a.rank("b"), Some(2));
    }

    #[test]
    fn empty_corpus_rejected() {
        let err = build_alphabet(&[]).unwrap_err();
        assert_eq!(err.to_string(), "empty corpus");
    }

    #[test]
    fn unk_appended_last() {
        let a = build_alphabet(&sents(&["x y"])).unwrap().with_unk();
        assert_eq!(a.rank(UNK), Some(3));
        assert_eq!(a.total_count(), 2);
    }

    #[test]
    fn tokenizer_lowercases_and_strips() {
        let toks = tokenize("Hello, World! <unk> (it's) --");
        let texts: Vec<&str> = toks.iter().map(Token::as_str).collect();
        assert_eq!(texts, ["hello", "world", "<unk>", "it's"]);
    }

    #[test]
    fn corpus_parse_errors_carry_line() {
        let err = parse_corpus("0\tok\nnot-a-label text\n".as_bytes(), Path::new("c.tsv")).unwrap_err();
        assert!(err.to_string().contains("c.tsv:2"), "{err}");
    }

    #[test]
    fn corpus_round_trip() {
        let s = sents(&["a b", "c"]);
        let mut buf = Vec::new();
        write_corpus(&mut buf, &s).unwrap();
        assert_eq!(parse_corpus(buf.as_slice(), Path::new("x")).unwrap(), s);
    }

    #[test]
    fn embedding_parse() {
        let alphabet = build_alphabet(&sents(&["a b c"])).unwrap();
        let (t, rep) = parse_embeddings("a 1.0 0.0\nb 0.0 1.0\n".as_bytes(), Path::new("e"), &alphabet).unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.len(), 2);
        assert_eq!(rep.skipped, vec![Token::new("c")]);
        assert_eq!(rep.covered, 2);
    }

    #[test]
    fn embedding_duplicate_last_wins() {
        let alphabet = build_alphabet(&sents(&["a"])).unwrap();
        let (t, rep) = parse_embeddings("a 1 0\na 2 0\n".as_bytes(), Path::new("e"), &alphabet).unwrap();
        assert_eq!(t.get("a"), Some(&[2.0, 0.0][..]));
        assert_eq!(rep.duplicates, vec![(Token::new("a"), 2)]);
    }

    #[test]
    fn embedding_errors() {
        let alphabet = build_alphabet(&sents(&["a"])).unwrap();
        let err = parse_embeddings("a 1 0\nb 1\n".as_bytes(), Path::new("e"), &alphabet).unwrap_err();
        assert!(matches!(err, Error::EmbeddingDim { line: 2, expected: 2, found: 1 }));
        let err = parse_embeddings("a 1 0\nb 1 x\n".as_bytes(), Path::new("e"), &alphabet).unwrap_err();
        assert!(err.to_string().contains("e:2"), "{err}");
    }

    #[test]
    fn nearest_synonyms() {
        let t = table(&[("a", &[0.0, 0.0]), ("b", &[1.0, 0.0]), ("c", &[3.0, 0.0])]);
        assert_eq!(t.synonyms("a", 1).unwrap(), vec![Token::new("b")]);
        assert_eq!(t.synonyms("a", 2).unwrap(), vec![Token::new("b"), Token::new("c")]);
    }

    #[test]
    fn equidistant_synonyms_by_rank() {
        // rank order here is a, c, b (first occurrence)
        let t = table(&[("a", &[0.0, 0.0]), ("c", &[-1.0, 0.0]), ("b", &[1.0, 0.0])]);
        assert_eq!(t.synonyms("a", 2).unwrap(), vec![Token::new("c"), Token::new("b")]);
    }

    #[test]
    fn synonym_errors() {
        let t = table(&[("a", &[0.0]), ("b", &[1.0])]);
        assert!(matches!(t.synonyms("zzz", 1), Err(Error::NoEmbedding(_))));
        assert!(matches!(t.synonyms("a", 2), Err(Error::KTooLarge { .. })));
    }

    fn arb_corpus() -> impl Strategy<Value = Vec<Sentence>> {
        prop::collection::vec(prop::collection::vec(0u8..12, 1..8), 1..20).prop_map(|ss| {
            ss.into_iter()
                .map(|ws| Sentence::new(ws.iter().map(|w| Token::new(format!("w{w}"))).collect(), None))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn ranks_are_a_bijection_and_counts_conserve(corpus in arb_corpus()) {
            let a = build_alphabet(&corpus).unwrap();
            let mut ranks: Vec<usize> = a.tokens().iter().map(|t| a.rank(t.as_str()).unwrap()).collect();
            ranks.sort_unstable();
            prop_assert_eq!(ranks, (1..=a.len()).collect::<Vec<_>>());
            let n: usize = corpus.iter().map(Sentence::len).sum();
            prop_assert_eq!(a.total_count(), n as u64);
            for w in a.tokens().windows(2) {
                prop_assert!(a.count(w[0].as_str()) >= a.count(w[1].as_str()));
            }
        }

        #[test]
        fn synonyms_shift_invariant(
            pts in prop::collection::vec(prop::collection::vec(-10i32..10, 3), 4..12),
            shift in prop::collection::vec(-50i32..50, 3),
            k in 1usize..3,
        ) {
            let names: Vec<String> = (0..pts.len()).map(|i| format!("t{i}")).collect();
            let corpus = vec![Sentence::new(names.iter().map(|n| Token::new(n.as_str())).collect(), None)];
            let alphabet = build_alphabet(&corpus).unwrap();
            let mk = |off: &[i32]| {
                EmbeddingTable::from_vectors(
                    names.iter().zip(&pts).map(|(n, p)| {
                        (Token::new(n.as_str()), p.iter().zip(off).map(|(x, o)| f64::from(x + o)).collect())
                    }),
                    &alphabet,
                )
                .unwrap()
            };
            let base = mk(&[0, 0, 0]);
            let moved = mk(&shift);
            let got = base.synonyms("t0", k).unwrap();
            prop_assert_eq!(got.len(), k);
            prop_assert!(!got.contains(&Token::new("t0")));
            prop_assert_eq!(got, moved.synonyms("t0", k).unwrap());
        }
    }
}
