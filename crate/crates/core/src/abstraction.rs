//! State abstraction: k-means over the classifier's output distributions.
//!
//! State 0 is the initial state and sits outside the clustering; clusters are
//! states `1..=k`. Each state's center is the mean of the outputs mapped to
//! it (uniform for the initial state), and distances between states are
//! Euclidean distances between centers.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Token;
use crate::error::{Error, Result};
use crate::linalg::{euclidean, squared_distance, Matrix};
use crate::seed;
use crate::teacher::Trace;

pub const MAX_ITERATIONS: usize = 300;
pub const TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractStateSet {
    n_clusters: usize,
    centroids: Vec<Vec<f64>>,
    centers: Vec<Vec<f64>>,
    distance: Matrix,
    sizes: Vec<usize>,
    iterations: usize,
}

impl AbstractStateSet {
    /// Rebuilds a state set from stored centers (index 0 = initial state).
    /// Centroids are taken to be the cluster centers.
    pub fn from_centers(centers: Vec<Vec<f64>>, sizes: Vec<usize>) -> Result<Self> {
        if centers.len() < 2 {
            return Err(Error::Model("need at least one cluster besides the initial state".into()));
        }
        let m = centers[0].len();
        if centers.iter().any(|c| c.len() != m) {
            return Err(Error::Model("ragged centers".into()));
        }
        let k = centers.len() - 1;
        let sizes = if sizes.len() == k { sizes } else { vec![0; k] };
        let centroids = centers[1..].to_vec();
        let distance = distance_matrix(&centers);
        Ok(Self {
            n_clusters: k,
            centroids,
            centers,
            distance,
            sizes,
            iterations: 0,
        })
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    /// Number of abstract states including the initial one.
    pub fn n_states(&self) -> usize {
        self.n_clusters + 1
    }

    pub fn labels(&self) -> usize {
        self.centers[0].len()
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn distance(&self) -> &Matrix {
        &self.distance
    }

    /// Members per cluster in the fitting data, clusters `1..=k` at indices `0..k`.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Nearest centroid, as a state index in `1..=k`; ties go to the lower index.
    pub fn assign(&self, o: &[f64]) -> usize {
        nearest(&self.centroids, o).0 + 1
    }

    pub fn trace_to_transitions(&self, trace: &Trace) -> Vec<Transition> {
        let mut from = 0;
        trace
            .sentence
            .words
            .iter()
            .zip(&trace.outputs)
            .map(|(w, o)| {
                let to = self.assign(o.as_slice());
                let t = Transition {
                    from,
                    token: w.clone(),
                    to,
                };
                from = to;
                t
            })
            .collect()
    }
}

/// An abstract transition `(from, token, to)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Transition {
    pub from: usize,
    pub token: Token,
    pub to: usize,
}

fn nearest(centroids: &[Vec<f64>], p: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(c, p);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

pub fn distance_matrix(centers: &[Vec<f64>]) -> Matrix {
    let n = centers.len();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let d = euclidean(&centers[i], &centers[j]);
            m[(i, j)] = d;
            m[(j, i)] = d;
        }
    }
    m
}

/// Per-point Lloyd state: assigned cluster, an upper bound on the distance to
/// its centroid and a lower bound on the distance to every other centroid.
#[derive(Debug, Clone, Copy)]
struct Bounds {
    label: usize,
    upper: f64,
    lower: f64,
}

fn nearest_two(centroids: &[Vec<f64>], p: &[f64]) -> Bounds {
    let (mut best, mut d1, mut d2) = (0, f64::INFINITY, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(c, p);
        if d < d1 {
            d2 = d1;
            d1 = d;
            best = j;
        } else if d < d2 {
            d2 = d;
        }
    }
    Bounds {
        label: best,
        upper: d1.sqrt(),
        lower: d2.sqrt(),
    }
}

fn for_each_point<F>(flat: &[f64], m: usize, bounds: &mut [Bounds], f: F)
where
    F: Fn(&[f64], &mut Bounds) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        flat.par_chunks_exact(m).zip(bounds.par_iter_mut()).for_each(|(p, b)| f(p, b));
    }
    #[cfg(not(feature = "parallel"))]
    flat.chunks_exact(m).zip(bounds.iter_mut()).for_each(|(p, b)| f(p, b));
}

fn plus_plus_init<R: Rng>(points: &[&[f64]], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = d2.iter().rposition(|d| *d > 0.0).unwrap_or(0);
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick].to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

struct Sums {
    sums: Vec<Vec<f64>>,
    sizes: Vec<usize>,
}

impl Sums {
    fn from_labels(points: &[&[f64]], bounds: &[Bounds], k: usize, m: usize) -> Self {
        let mut s = Self {
            sums: vec![vec![0.0; m]; k],
            sizes: vec![0; k],
        };
        for (p, b) in points.iter().zip(bounds) {
            s.add(b.label, p, 1.0);
        }
        s
    }

    fn add(&mut self, j: usize, p: &[f64], sign: f64) {
        if sign > 0.0 {
            self.sizes[j] += 1;
        } else {
            self.sizes[j] -= 1;
        }
        for (s, x) in self.sums[j].iter_mut().zip(p) {
            *s += sign * x;
        }
    }
}

// slack on bound comparisons so rounding in the running bounds never skips a
// point that needs a full check
const BOUND_SLACK: f64 = 1e-12;

/// Clusters `outputs` into `k` abstract states: k-means++ seeding followed by
/// Lloyd iterations (at most [`MAX_ITERATIONS`], stopping once assignments
/// are stable or no centroid moves more than [`TOLERANCE`]). Distance bounds
/// (Hamerly's method) skip points that provably keep their cluster; the
/// result is the same as plain Lloyd iterations.
pub fn fit_states(outputs: &[&[f64]], k: usize, seed: u64) -> Result<AbstractStateSet> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be positive".into()));
    }
    let Some(first) = outputs.first() else {
        return Err(Error::KTooLarge {
            requested: k,
            available: 0,
        });
    };
    let m = first.len();
    if outputs.iter().any(|o| o.len() != m) {
        return Err(Error::InvalidParameter("outputs have different lengths".into()));
    }
    let mut distinct: HashSet<Vec<u64>> = HashSet::new();
    for o in outputs {
        distinct.insert(o.iter().map(|x| x.to_bits()).collect());
        if distinct.len() >= k {
            break;
        }
    }
    if distinct.len() < k {
        return Err(Error::KTooLarge {
            requested: k,
            available: distinct.len(),
        });
    }

    // one contiguous copy: the Lloyd passes stream through it instead of
    // chasing a pointer per output
    let flat: Vec<f64> = outputs.iter().flat_map(|o| o.iter().copied()).collect();
    let points: Vec<&[f64]> = flat.chunks_exact(m).collect();
    let outputs = &points[..];

    let mut rng = seed::rng(seed);
    let mut centroids = plus_plus_init(outputs, k, &mut rng);
    let placeholder = Bounds {
        label: 0,
        upper: 0.0,
        lower: 0.0,
    };
    let mut bounds = vec![placeholder; outputs.len()];
    for_each_point(&flat, m, &mut bounds, |p, b| *b = nearest_two(&centroids, p));
    let mut sums = Sums::from_labels(outputs, &bounds, k, m);
    // the labels `sums` currently reflects
    let mut assigned: Vec<usize> = bounds.iter().map(|b| b.label).collect();
    let mut iterations = 0;

    loop {
        iterations += 1;

        let empty: Vec<usize> = (0..k).filter(|&j| sums.sizes[j] == 0).collect();
        if !empty.is_empty() {
            // re-seed empty clusters at the points farthest from their centroids
            let mut order: Vec<usize> = (0..outputs.len()).collect();
            let dist = |i: usize| squared_distance(outputs[i], &centroids[bounds[i].label]);
            order.sort_by(|&a, &b| dist(b).total_cmp(&dist(a)).then(a.cmp(&b)));
            let mut used: HashSet<Vec<u64>> = HashSet::new();
            let mut candidates = order.into_iter().filter(|&i| {
                let key: Vec<u64> = outputs[i].iter().map(|x| x.to_bits()).collect();
                sums.sizes[bounds[i].label] > 1 && used.insert(key)
            });
            for j in empty {
                if let Some(i) = candidates.next() {
                    centroids[j] = outputs[i].to_vec();
                }
            }
            for_each_point(&flat, m, &mut bounds, |p, b| *b = nearest_two(&centroids, p));
            sums = Sums::from_labels(outputs, &bounds, k, m);
            assigned = bounds.iter().map(|b| b.label).collect();
            if iterations >= MAX_ITERATIONS {
                break;
            }
            continue;
        }

        // update step: centroids become the means of their members
        let mut moves = vec![0.0; k];
        for (j, c) in centroids.iter_mut().enumerate() {
            let n = sums.sizes[j] as f64;
            let mean: Vec<f64> = sums.sums[j].iter().map(|x| x / n).collect();
            moves[j] = euclidean(c, &mean);
            *c = mean;
        }
        let (far, max_move) = moves
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |acc, (j, &d)| if d > acc.1 { (j, d) } else { acc });
        let second_move = moves
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != far)
            .fold(0.0f64, |acc, (_, &d)| acc.max(d));
        if max_move < TOLERANCE || iterations >= MAX_ITERATIONS {
            break;
        }

        // half the distance from each centroid to its nearest neighbour
        let half_gap: Vec<f64> = (0..k)
            .map(|j| {
                (0..k)
                    .filter(|&l| l != j)
                    .map(|l| euclidean(&centroids[j], &centroids[l]))
                    .fold(f64::INFINITY, f64::min)
                    / 2.0
            })
            .collect();

        // assignment step
        for_each_point(&flat, m, &mut bounds, |p, b| {
            b.upper += moves[b.label];
            b.lower -= if b.label == far { second_move } else { max_move };
            let bound = half_gap[b.label].max(b.lower);
            if b.upper + BOUND_SLACK < bound {
                return;
            }
            b.upper = euclidean(p, &centroids[b.label]);
            if b.upper + BOUND_SLACK < bound {
                return;
            }
            *b = nearest_two(&centroids, p);
        });
        let mut changed = false;
        for ((p, b), old) in outputs.iter().zip(&bounds).zip(assigned.iter_mut()) {
            if b.label != *old {
                sums.add(*old, p, -1.0);
                sums.add(b.label, p, 1.0);
                *old = b.label;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut centers = Vec::with_capacity(k + 1);
    centers.push(vec![1.0 / m as f64; m]);
    centers.extend(centroids.iter().cloned());
    let distance = distance_matrix(&centers);
    Ok(AbstractStateSet {
        n_clusters: k,
        centroids,
        centers,
        distance,
        sizes: sums.sizes,
        iterations,
    })
}
