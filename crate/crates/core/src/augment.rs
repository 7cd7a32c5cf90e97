//! Dataset augmentation by frequency-weighted synonym replacement and dropout
//! to `<unk>`.
//!
//! Every generated sentence keeps the length and label of its source. A word
//! of frequency rank `i` is swapped for one of its nearest embedding
//! neighbours with probability `1/(i+1)`; words that were not swapped are
//! then dropped to `<unk>` with the configured dropout probability.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Alphabet, EmbeddingTable, Sentence, Token};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Generated copies per original sentence.
    pub epochs: usize,
    pub synonym_k: usize,
    pub dropout_prob: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            epochs: 2,
            synonym_k: 5,
            dropout_prob: 0.1,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.dropout_prob) {
            return Err(Error::InvalidParameter(format!(
                "dropout probability {} outside [0, 1]",
                self.dropout_prob
            )));
        }
        if self.synonym_k == 0 {
            return Err(Error::InvalidParameter("synonym_k must be positive".into()));
        }
        Ok(())
    }
}

/// Chance that the word of frequency rank `rank` is replaced by a synonym.
pub fn replace_probability(rank: usize) -> Result<f64> {
    if rank < 1 {
        return Err(Error::InvalidRank);
    }
    Ok(1.0 / (rank as f64 + 1.0))
}

/// Augmentation context with synonym lists precomputed for the alphabet.
#[derive(Debug, Clone)]
pub struct Augmenter<'a> {
    alphabet: &'a Alphabet,
    synonyms: HashMap<Token, Vec<Token>>,
    cfg: AugmentConfig,
}

impl<'a> Augmenter<'a> {
    /// `synonym_k` is clamped to the table vocabulary minus one.
    pub fn new(alphabet: &'a Alphabet, table: &EmbeddingTable, cfg: AugmentConfig) -> Result<Self> {
        cfg.validate()?;
        let k = cfg.synonym_k.min(table.len().saturating_sub(1));
        let mut synonyms = HashMap::new();
        if k > 0 {
            for t in alphabet.tokens() {
                if table.contains(t.as_str()) {
                    synonyms.insert(t.clone(), table.synonyms(t.as_str(), k)?);
                }
            }
        }
        Ok(Self {
            alphabet,
            synonyms,
            cfg,
        })
    }

    pub fn config(&self) -> &AugmentConfig {
        &self.cfg
    }

    pub fn synonyms_of(&self, token: &str) -> Option<&[Token]> {
        self.synonyms.get(token).map(Vec::as_slice)
    }

    pub fn augment_sentence<R: Rng + ?Sized>(&self, s: &Sentence, rng: &mut R) -> Sentence {
        let words = s
            .words
            .iter()
            .map(|w| {
                if let (Some(rank), Some(syns)) = (self.alphabet.rank(w.as_str()), self.synonyms.get(w)) {
                    let p = 1.0 / (rank as f64 + 1.0);
                    if rng.random::<f64>() < p {
                        return syns[rng.random_range(0..syns.len())].clone();
                    }
                }
                if self.cfg.dropout_prob > 0.0 && rng.random::<f64>() < self.cfg.dropout_prob {
                    Token::unk()
                } else {
                    w.clone()
                }
            })
            .collect();
        Sentence::new(words, s.label)
    }

    /// Returns `D0` followed by `epochs` rounds of generated variants, one
    /// variant per original sentence per round.
    pub fn augment_dataset(&self, d0: &[Sentence]) -> Vec<Sentence> {
        let t = self.cfg.epochs;
        let variants = |(i, s): (usize, &Sentence)| -> Vec<Sentence> {
            let mut rng = seed::stream(self.cfg.seed, i as u64);
            (0..t).map(|_| self.augment_sentence(s, &mut rng)).collect()
        };

        #[cfg(feature = "parallel")]
        let per_sentence: Vec<Vec<Sentence>> = {
            use rayon::prelude::*;
            d0.par_iter().enumerate().map(variants).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let per_sentence: Vec<Vec<Sentence>> = d0.iter().enumerate().map(variants).collect();

        let mut out = Vec::with_capacity((t + 1) * d0.len());
        out.extend_from_slice(d0);
        for epoch in 0..t {
            out.extend(per_sentence.iter().map(|v| v[epoch].clone()));
        }
        out
    }
}

/// One-off augmentation of a single sentence.
pub fn augment_sentence<R: Rng + ?Sized>(
    s: &Sentence,
    alphabet: &Alphabet,
    table: &EmbeddingTable,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Sentence> {
    if s.is_empty() {
        return Err(Error::EmptySentence);
    }
    Ok(Augmenter::new(alphabet, table, cfg.clone())?.augment_sentence(s, rng))
}

pub fn augment_dataset(
    d0: &[Sentence],
    alphabet: &Alphabet,
    table: &EmbeddingTable,
    cfg: &AugmentConfig,
) -> Result<Vec<Sentence>> {
    Ok(Augmenter::new(alphabet, table, cfg.clone())?.augment_dataset(d0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_alphabet;
    use proptest::prelude::*;

    fn movie_setup() -> (Vec<Sentence>, Alphabet, EmbeddingTable) {
        let d0: Vec<Sentence> = [
            "I really like this movie",
            "I like this film",
            "I appreciate this movie",
            "really great movie",
        ]
        .iter()
        .map(|t| Sentence::from_text(t, Some(1)))
        .collect();
        let alphabet = build_alphabet(&d0).unwrap();
        let vecs: Vec<(Token, Vec<f64>)> = [
            ("like", vec![1.0, 0.0]),
            ("appreciate", vec![1.1, 0.0]),
            ("film", vec![5.0, 5.0]),
            ("movie", vec![5.1, 5.0]),
        ]
        .into_iter()
        .map(|(t, v)| (Token::new(t), v))
        .collect();
        let table = EmbeddingTable::from_vectors(vecs, &alphabet).unwrap();
        (d0, alphabet, table)
    }

    fn empty_table(alphabet: &Alphabet) -> EmbeddingTable {
        EmbeddingTable::from_vectors(Vec::new(), alphabet).unwrap()
    }

    #[test]
    fn replace_probability_formula() {
        assert_eq!(replace_probability(1).unwrap(), 0.5);
        assert!((replace_probability(9).unwrap() - 0.1).abs() < 1e-15);
        assert!(replace_probability(0).is_err());
        let ps: Vec<f64> = (1..100).map(|r| replace_probability(r).unwrap()).collect();
        assert!(ps.windows(2).all(|w| w[1] < w[0]));
        assert!(replace_probability(1_000_000).unwrap() < 1e-5);
    }

    #[test]
    fn reproduces_the_movie_rewrite() {
        // Some seed must yield the textbook rewrite: "like" swapped for its
        // synonym and "really" dropped, everything else kept.
        let (d0, alphabet, table) = movie_setup();
        let cfg = AugmentConfig {
            epochs: 1,
            synonym_k: 1,
            dropout_prob: 0.3,
            seed: 0,
        };
        let aug = Augmenter::new(&alphabet, &table, cfg).unwrap();
        assert_eq!(aug.synonyms_of("like").unwrap(), &[Token::new("appreciate")]);
        let want = Sentence::from_text("I <unk> appreciate this movie", Some(1));
        let hit = (0..5000u64).any(|s| aug.augment_sentence(&d0[0], &mut seed::stream(s, 0)) == want);
        assert!(hit);
    }

    #[test]
    fn inert_stages_keep_input() {
        let (d0, alphabet, _) = movie_setup();
        let cfg = AugmentConfig {
            dropout_prob: 0.0,
            ..Default::default()
        };
        let table = empty_table(&alphabet);
        let out = augment_sentence(&d0[0], &alphabet, &table, &cfg, &mut seed::rng(3)).unwrap();
        assert_eq!(out, d0[0]);
    }

    #[test]
    fn forced_dropout() {
        let (d0, alphabet, _) = movie_setup();
        let cfg = AugmentConfig {
            dropout_prob: 1.0,
            ..Default::default()
        };
        let table = empty_table(&alphabet);
        let out = augment_sentence(&d0[0], &alphabet, &table, &cfg, &mut seed::rng(3)).unwrap();
        assert!(out.words.iter().all(Token::is_unk));
        assert_eq!(out.len(), d0[0].len());
    }

    #[test]
    fn dataset_size_and_identity() {
        let d0: Vec<Sentence> = (0..100)
            .map(|i| Sentence::from_text(&format!("w{} w{}", i % 7, i % 3), Some(i % 2)))
            .collect();
        let alphabet = build_alphabet(&d0).unwrap();
        let table = empty_table(&alphabet);
        let cfg = AugmentConfig {
            epochs: 2,
            ..Default::default()
        };
        let d = augment_dataset(&d0, &alphabet, &table, &cfg).unwrap();
        assert_eq!(d.len(), 300);
        assert_eq!(&d[..100], &d0[..]);
        let cfg0 = AugmentConfig { epochs: 0, ..cfg };
        assert_eq!(augment_dataset(&d0, &alphabet, &table, &cfg0).unwrap(), d0);
    }

    #[test]
    fn invalid_config_rejected() {
        let (_, alphabet, table) = movie_setup();
        let cfg = AugmentConfig {
            dropout_prob: 1.5,
            ..Default::default()
        };
        assert!(Augmenter::new(&alphabet, &table, cfg).is_err());
    }

    proptest! {
        #[test]
        fn augmentation_invariants(seed in any::<u64>(), epochs in 0usize..4, dropout in 0.0f64..1.0) {
            let (d0, alphabet, table) = movie_setup();
            let cfg = AugmentConfig { epochs, synonym_k: 2, dropout_prob: dropout, seed };
            let d = augment_dataset(&d0, &alphabet, &table, &cfg).unwrap();
            prop_assert_eq!(d.len(), (epochs + 1) * d0.len());
            for (i, s) in d.iter().enumerate() {
                let src = &d0[i % d0.len()];
                prop_assert_eq!(s.len(), src.len());
                prop_assert_eq!(s.label, src.label);
                for w in &s.words {
                    prop_assert!(w.is_unk() || alphabet.contains(w.as_str()));
                }
            }
            prop_assert_eq!(d, augment_dataset(&d0, &alphabet, &table, &cfg).unwrap());
        }
    }
}
