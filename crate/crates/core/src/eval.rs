//! k-means++ baseline, SSE, minimum-distance classification, Hungarian
//! matching and Bayes-error estimation.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Centroids, DataMatrix};

const SAMPLES_PER_CHUNK: usize = 1024;
/// Lloyd stops when the centroids move less than this (Frobenius).
pub const LLOYD_TOL: f64 = 1e-9;
pub const LLOYD_MAX_ITERS: usize = 300;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &Centroids) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.centers().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn check_dims(data: &DataMatrix, centroids: &Centroids) -> Result<()> {
    if data.dim() != centroids.dim() {
        return Err(Error::DimensionMismatch {
            expected: centroids.dim(),
            got: data.dim(),
        });
    }
    Ok(())
}

/// Nearest-centroid label (0-based) and squared distance of every sample.
pub fn assign(data: &DataMatrix, centroids: &Centroids) -> Result<Vec<(usize, f64)>> {
    check_dims(data, centroids)?;
    Ok(data
        .as_slice()
        .par_chunks(data.dim() * SAMPLES_PER_CHUNK)
        .flat_map_iter(|block| {
            block
                .chunks_exact(data.dim())
                .map(|x| nearest(x, centroids))
                .collect::<Vec<_>>()
        })
        .collect())
}

/// Sum of squared errors `sum_t min_k |x_t - c_k|^2`.
pub fn sse(data: &DataMatrix, centroids: &Centroids) -> Result<f64> {
    check_dims(data, centroids)?;
    let partials: Vec<f64> = data
        .as_slice()
        .par_chunks(data.dim() * SAMPLES_PER_CHUNK)
        .map(|block| {
            block
                .chunks_exact(data.dim())
                .map(|x| nearest(x, centroids).1)
                .sum()
        })
        .collect();
    Ok(partials.iter().sum())
}

/// D^2-weighted seeding.
pub fn kmeanspp_seed<R: Rng>(data: &DataMatrix, k: usize, rng: &mut R) -> Result<Centroids> {
    if k == 0 {
        return Err(Error::InvalidConfig("K must be at least 1".into()));
    }
    if k > data.len() {
        return Err(Error::TooFewSamples {
            k,
            available: data.len(),
        });
    }
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(data.sample(rng.random_range(0..data.len())).to_vec());
    let mut d2: Vec<f64> = data.samples().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = d2.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..data.len())
        };
        let c = data.sample(idx).to_vec();
        for (d, x) in d2.iter_mut().zip(data.samples()) {
            *d = d.min(sq_dist(x, &c));
        }
        centers.push(c);
    }
    Centroids::from_centers(&centers)
}

/// Lloyd iterations from `init`.
#[derive(Debug, Clone, PartialEq)]
pub struct LloydOutput {
    pub centroids: Centroids,
    /// SSE of the centroids entering each iteration, then of the final centroids.
    pub sse_history: Vec<f64>,
    pub iterations: usize,
}

/// Lloyd's algorithm. An empty cluster is re-seeded at the sample farthest
/// from its assigned centroid. An update that would raise the SSE (possible
/// only through rounding near convergence) is rejected and ends the run, so
/// `sse_history` is non-increasing.
pub fn lloyd(
    data: &DataMatrix,
    init: &Centroids,
    tol: f64,
    max_iters: usize,
) -> Result<LloydOutput> {
    check_dims(data, init)?;
    let (n, k) = (data.dim(), init.count());
    let mut current = init.clone();
    let mut labels = assign(data, &current)?;
    let mut current_sse: f64 = labels.iter().map(|l| l.1).sum();
    let mut history = vec![current_sse];
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let mut sums = vec![0.0; n * k];
        let mut counts = vec![0usize; k];
        for (x, &(l, _)) in data.samples().zip(&labels) {
            counts[l] += 1;
            sums[l * n..(l + 1) * n]
                .iter_mut()
                .zip(x)
                .for_each(|(s, v)| *s += v);
        }
        let mut next = current.clone();
        let mut taken = Vec::new();
        for kk in 0..k {
            if counts[kk] > 0 {
                let inv = 1.0 / counts[kk] as f64;
                next.center_mut(kk)
                    .iter_mut()
                    .zip(&sums[kk * n..(kk + 1) * n])
                    .for_each(|(c, s)| *c = s * inv);
            } else {
                let far = labels
                    .iter()
                    .enumerate()
                    .filter(|(t, _)| !taken.contains(t))
                    .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
                    .map(|(t, _)| t)
                    .unwrap_or(0);
                taken.push(far);
                next.center_mut(kk).copy_from_slice(data.sample(far));
            }
        }
        let moved = next.distance(&current);
        let next_labels = assign(data, &next)?;
        let next_sse: f64 = next_labels.iter().map(|l| l.1).sum();
        if next_sse > current_sse {
            break;
        }
        current = next;
        labels = next_labels;
        current_sse = next_sse;
        history.push(current_sse);
        if moved <= tol {
            break;
        }
    }
    Ok(LloydOutput {
        centroids: current,
        sse_history: history,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansOutput {
    pub centroids: Centroids,
    /// SSE of the winning replicate on its own subsample.
    pub subsample_sse: f64,
    pub best_replicate: usize,
}

/// k-means++: for each replicate, subsample the data at `subsample_rate`,
/// seed by D^2 sampling and run Lloyd; keep the replicate with the lowest
/// SSE on its subsample.
pub fn kmeans_pp(
    data: &DataMatrix,
    k: usize,
    replicates: usize,
    subsample_rate: f64,
    seed: u64,
) -> Result<KMeansOutput> {
    if replicates == 0 {
        return Err(Error::InvalidConfig("replicates must be at least 1".into()));
    }
    if !(subsample_rate > 0.0 && subsample_rate <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "subsample rate must lie in (0, 1], got {subsample_rate}"
        )));
    }
    let size = ((subsample_rate * data.len() as f64).round() as usize).clamp(1, data.len());
    if k > size {
        return Err(Error::TooFewSamples { k, available: size });
    }
    let runs: Vec<Result<(Centroids, f64)>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let sub = if size < data.len() {
                let mut idx = sample_indices(&mut rng, data.len(), size).into_vec();
                idx.sort_unstable();
                data.select(&idx)?
            } else {
                data.clone()
            };
            let init = kmeanspp_seed(&sub, k, &mut rng)?;
            let out = lloyd(&sub, &init, LLOYD_TOL, LLOYD_MAX_ITERS)?;
            let s = *out.sse_history.last().expect("history is never empty");
            Ok((out.centroids, s))
        })
        .collect();
    let mut best: Option<(usize, Centroids, f64)> = None;
    for (r, run) in runs.into_iter().enumerate() {
        let (c, s) = run?;
        if best.as_ref().is_none_or(|b| s < b.2) {
            best = Some((r, c, s));
        }
    }
    let (best_replicate, centroids, subsample_sse) = best.expect("at least one replicate");
    Ok(KMeansOutput {
        centroids,
        subsample_sse,
        best_replicate,
    })
}

/// Minimum-cost assignment for a square cost matrix. Returns `perm` with
/// row `i` assigned to column `perm[i]`, and the total cost.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    let n = cost.len();
    for row in cost {
        if row.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("assignment cost".into()));
        }
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    // Shortest augmenting paths with row/column potentials, 1-based with a
    // virtual column 0.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[matched_row[j] - 1] = j - 1;
    }
    let total = perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    Ok((perm, total))
}

/// Test-set classification scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationScore {
    pub error_rate: f64,
    pub bayes_rate: f64,
    /// Monte-Carlo standard deviation of the Bayes estimate.
    pub bayes_std: f64,
}

/// Classifies each test sample by its nearest estimated centroid, maps
/// estimated clusters to true clusters with the Hungarian algorithm on
/// negative match counts, and compares with nearest-true-mean classification.
pub fn classify_and_score(
    test: &DataMatrix,
    true_labels: &[usize],
    centroids: &Centroids,
    true_means: &Centroids,
) -> Result<ClassificationScore> {
    if true_labels.len() != test.len() {
        return Err(Error::DimensionMismatch {
            expected: test.len(),
            got: true_labels.len(),
        });
    }
    let k = true_means.count();
    if centroids.count() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: centroids.count(),
        });
    }
    if let Some(&bad) = true_labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidConfig(format!(
            "label {bad} out of range for K={k}"
        )));
    }
    let est = assign(test, centroids)?;
    let bayes = assign(test, true_means)?;
    let mut counts = vec![vec![0.0; k]; k];
    for (&(e, _), &t) in est.iter().zip(true_labels) {
        counts[e][t] += 1.0;
    }
    let cost: Vec<Vec<f64>> = counts
        .iter()
        .map(|row| row.iter().map(|c| -c).collect())
        .collect();
    let (_, total) = hungarian(&cost)?;
    let t = test.len() as f64;
    let matched = (-total).round() as usize;
    let error_rate = (test.len() - matched.min(test.len())) as f64 / t;
    let bayes_errors = bayes
        .iter()
        .zip(true_labels)
        .filter(|(b, &l)| b.0 != l)
        .count();
    let bayes_rate = bayes_errors as f64 / t;
    Ok(ClassificationScore {
        error_rate,
        bayes_rate,
        bayes_std: (bayes_rate * (1.0 - bayes_rate) / t).sqrt(),
    })
}

/// One benchmark/evaluation result, serialized as a CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub algorithm: String,
    pub k: usize,
    pub n: usize,
    pub t: usize,
    /// Sketch size for CL-AMP, subsampling rate for k-means++.
    pub m_or_rate: String,
    pub replicates: usize,
    pub sse: f64,
    pub error_rate: f64,
    pub bayes_rate: f64,
    pub runtime_seconds: f64,
    pub sketch_seconds: f64,
    pub seed: String,
}

pub const REPORT_HEADER: &str =
    "algorithm,k,n,t,m_or_rate,replicates,sse,error_rate,bayes_rate,runtime_seconds,sketch_seconds,seed";
