//! WebAssembly bindings behind `www/index.html`. Every export takes plain
//! numbers and returns a JSON string; the `*_data` functions underneath are
//! ordinary Rust so they can be tested natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;
use wfa_extract::experiment::{compare_strategies, Benchmark, BenchmarkConfig, ComparisonTable};
use wfa_extract::runtime::majority_baseline;
use wfa_extract::{build_transition_matrix, enhance_context, BuildConfig, ExtractionBasis, FillStrategy, Matrix};

/// Distance from s1 to s3 in the three-state example; s2 sits `ln(ratio)`
/// further from s3, so s1's softmin weight toward s3 is `ratio` times s2's.
const BASE_DISTANCE: f64 = 0.9;
const EXAMPLE_COUNTS: [u64; 9] = [1, 3, 0, 1, 1, 0, 0, 0, 0];

#[derive(Debug, Serialize)]
pub struct ExampleMatrices {
    pub counts: Vec<Vec<u64>>,
    pub distance: Vec<Vec<f64>>,
    pub transition: Vec<Vec<f64>>,
    pub enhanced: Vec<Vec<f64>>,
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(<[f64]>::to_vec).collect()
}

/// The three-state count matrix whose last row was never observed, filled
/// empirically and then context-enhanced.
pub fn example_data(beta: f64, alpha: f64, ratio: f64) -> Result<ExampleMatrices, String> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(format!("ratio must be positive, got {ratio}"));
    }
    let d13 = BASE_DISTANCE;
    let d23 = d13 + ratio.ln();
    let d12 = 0.3;
    let distance = Matrix::from_rows(&[[0.0, d12, d13], [d12, 0.0, d23], [d13, d23, 0.0]]);
    let cfg = BuildConfig {
        beta,
        alpha,
        fill: FillStrategy::Empirical,
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let e = build_transition_matrix(&EXAMPLE_COUNTS, &distance, &cfg);
    let enhanced = enhance_context(&e, alpha);
    Ok(ExampleMatrices {
        counts: EXAMPLE_COUNTS.chunks(3).map(<[u64]>::to_vec).collect(),
        distance: rows(&distance),
        transition: rows(&e),
        enhanced: rows(&enhanced),
    })
}

#[derive(Debug, Serialize)]
pub struct DecayCurve {
    /// Share of the final state vector contributed by the word at each
    /// position (1-based), oldest first.
    pub positions: Vec<f64>,
    /// Share still sitting in the initial state.
    pub initial: f64,
}

/// Runs a sentence of `length` words through enhanced matrices whose word j
/// sends every state to state j, so the final state vector reads off how much
/// each prefix position still contributes.
pub fn decay_data(alpha: f64, length: usize) -> Result<DecayCurve, String> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(format!("alpha must be in [0, 1], got {alpha}"));
    }
    let n = length + 1;
    let mut f = vec![0.0; n];
    f[0] = 1.0;
    for j in 1..=length {
        let mut e = Matrix::zeros(n, n);
        for i in 0..n {
            e[(i, j)] = 1.0;
        }
        f = enhance_context(&e, alpha).left_mul(&f);
    }
    Ok(DecayCurve {
        initial: f[0],
        positions: f[1..].to_vec(),
    })
}

#[derive(Debug, Serialize)]
pub struct Sweep {
    pub majority_baseline: f64,
    pub kmeans_iterations: usize,
    pub table: ComparisonTable,
}

/// Samples a small synthetic teacher, extracts one clustering from its
/// traces and scores every fill strategy with and without context.
pub fn sweep_data(seed: u64, k: usize, n_train: usize, alpha: f64, beta: f64) -> Result<Sweep, String> {
    let cfg = BenchmarkConfig {
        n_train,
        n_test: 500,
        seed,
        ..Default::default()
    };
    let run = || -> wfa_extract::Result<Sweep> {
        let bench = Benchmark::sample(&cfg)?;
        let traces = bench.teacher.run_traces(&bench.train)?;
        let basis = ExtractionBasis::fit(&traces, k, seed)?;
        let test = bench.labelled_test();
        Ok(Sweep {
            majority_baseline: majority_baseline(&test),
            kmeans_iterations: basis.states.iterations(),
            table: compare_strategies(&basis, &test, alpha, beta)?,
        })
    };
    run().map_err(|e| e.to_string())
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn worked_example(beta: f64, alpha: f64, ratio: f64) -> Result<String, JsError> {
    to_js(example_data(beta, alpha, ratio))
}

#[wasm_bindgen]
pub fn context_decay(alpha: f64, length: usize) -> Result<String, JsError> {
    to_js(decay_data(alpha, length))
}

#[wasm_bindgen]
pub fn fidelity_sweep(seed: u64, k: usize, n_train: usize, alpha: f64, beta: f64) -> Result<String, JsError> {
    to_js(sweep_data(seed, k, n_train, alpha, beta))
}
