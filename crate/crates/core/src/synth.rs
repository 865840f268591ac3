//! Synthetic GMM data: centers `c_k ~ N(0, 1.5^2 K^(2/N) I)`, uniform
//! weights, identity covariances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Centroids, DataMatrix};

const CENTER_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub k: usize,
    pub n: usize,
    pub t: usize,
    /// Test-set size; 0 skips the test set.
    pub test_t: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(k: usize, n: usize, t: usize, seed: u64) -> Self {
        Self {
            k,
            n,
            t,
            test_t: 0,
            seed,
        }
    }

    /// Per-coordinate variance of the centers, `1.5^2 K^(2/N)`.
    pub fn center_variance(&self) -> f64 {
        1.5f64.powi(2) * (self.k as f64).powf(2.0 / self.n as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub train: DataMatrix,
    pub train_labels: Vec<usize>,
    pub test: Option<DataMatrix>,
    pub test_labels: Vec<usize>,
    pub means: Centroids,
}

/// Draws `K` centers from the center law.
pub fn draw_centers(spec: &SynthSpec) -> Result<Centroids> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(CENTER_STREAM);
    let sd = spec.center_variance().sqrt();
    let values = (0..spec.k * spec.n)
        .map(|_| sd * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect::<Vec<f64>>();
    Centroids::new(spec.n, spec.k, values)
}

fn draw_samples(
    means: &Centroids,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(DataMatrix, Vec<usize>)> {
    let (n, k) = (means.dim(), means.count());
    let mut values = Vec::with_capacity(n * count);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let l = rng.random_range(0..k);
        labels.push(l);
        values.extend(
            means
                .center(l)
                .iter()
                .map(|c| c + Distribution::<f64>::sample(&StandardNormal, rng)),
        );
    }
    Ok((DataMatrix::new(n, count, values)?, labels))
}

/// Training set, optional test set, true means and labels. Train and test
/// samples come from separate random streams of the same seed.
pub fn gen_gmm(spec: &SynthSpec) -> Result<SynthData> {
    if spec.k == 0 || spec.n == 0 || spec.t == 0 {
        return Err(Error::InvalidDimensions(format!(
            "synthetic data needs K, N, T >= 1, got K={}, N={}, T={}",
            spec.k, spec.n, spec.t
        )));
    }
    let means = draw_centers(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(TRAIN_STREAM);
    let (train, train_labels) = draw_samples(&means, spec.t, &mut rng)?;
    let (test, test_labels) = if spec.test_t > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(TEST_STREAM);
        let (d, l) = draw_samples(&means, spec.test_t, &mut rng)?;
        (Some(d), l)
    } else {
        (None, Vec::new())
    };
    Ok(SynthData {
        train,
        train_labels,
        test,
        test_labels,
        means,
    })
}
