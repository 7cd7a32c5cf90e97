//! Weighted finite automata extracted from black-box probabilistic sequence
//! classifiers.
//!
//! The pipeline: optionally augment a corpus ([`augment`]), record the
//! classifier's per-prefix outputs ([`teacher`]), cluster those outputs into
//! abstract states ([`abstraction`]), turn abstract transition counts into
//! stochastic matrices ([`builder`]) and evaluate the result against the
//! classifier ([`runtime`]). [`experiment`] wires the stages together for
//! in-memory studies on synthetic teachers.

pub mod abstraction;
pub mod augment;
pub mod builder;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod runtime;
pub mod seed;
pub mod teacher;

pub use abstraction::{fit_states, AbstractStateSet, Transition};
pub use augment::{augment_dataset, augment_sentence, replace_probability, AugmentConfig, Augmenter};
pub use builder::{
    build_transition_matrix, build_wfa, count_transitions, enhance_context, BuildConfig, CountMatrices,
    ExtractionBasis, FillStrategy, Wfa,
};
pub use corpus::{build_alphabet, load_embeddings, tokenize, Alphabet, EmbeddingTable, Sentence, Token, UNK};
pub use error::{Error, Result};
pub use linalg::Matrix;
pub use runtime::{
    check_context_decay, consistency_rate, estimate_median_transitions, predict, weight, EvalReport,
};
pub use teacher::{
    read_traces, run_trace, sample_teacher, teacher_predict, write_traces, Classifier, ProbOutput,
    SyntheticTeacher, Trace,
};
