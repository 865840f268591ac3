use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `N x T` dataset; column `t` is the sample `x_t`, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    dim: usize,
    len: usize,
    values: Vec<f64>,
}

impl DataMatrix {
    /// Builds a dataset from sample-major values (`values[t * dim + n]`).
    pub fn new(dim: usize, len: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || len == 0 {
            return Err(Error::InvalidDimensions(format!(
                "dataset needs N >= 1 and T >= 1, got N={dim}, T={len}"
            )));
        }
        if values.len() != dim * len {
            return Err(Error::DimensionMismatch {
                expected: dim * len,
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "sample {} coordinate {}",
                i / dim,
                i % dim
            )));
        }
        Ok(Self { dim, len, values })
    }

    pub fn from_samples(samples: &[Vec<f64>]) -> Result<Self> {
        let dim = samples.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(dim * samples.len());
        for s in samples {
            if s.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.len(),
                });
            }
            values.extend_from_slice(s);
        }
        Self::new(dim, samples.len(), values)
    }

    /// Dimension `N`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of samples `T`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn sample(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn samples(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Dataset restricted to the given sample indices, in order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.dim);
        for &t in indices {
            values.extend_from_slice(self.sample(t));
        }
        Self::new(self.dim, indices.len(), values)
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.dim,
            self.len,
            self.values.iter().map(|v| v * factor).collect(),
        )
    }
}

/// `N x K` centroid matrix; column `k` is the center `c_k`, stored contiguously.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroids {
    dim: usize,
    count: usize,
    values: Vec<f64>,
}

impl Centroids {
    /// Builds centroids from center-major values (`values[k * dim + n]`).
    pub fn new(dim: usize, count: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || count == 0 {
            return Err(Error::InvalidDimensions(format!(
                "centroids need N >= 1 and K >= 1, got N={dim}, K={count}"
            )));
        }
        if values.len() != dim * count {
            return Err(Error::DimensionMismatch {
                expected: dim * count,
                got: values.len(),
            });
        }
        Ok(Self { dim, count, values })
    }

    pub fn zeros(dim: usize, count: usize) -> Result<Self> {
        Self::new(dim, count, vec![0.0; dim * count])
    }

    pub fn from_centers(centers: &[Vec<f64>]) -> Result<Self> {
        let dim = centers.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(dim * centers.len());
        for c in centers {
            if c.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.len(),
                });
            }
            values.extend_from_slice(c);
        }
        Self::new(dim, centers.len(), values)
    }

    /// Builds centroids from an `N x K` row-major matrix (`rows[n][k]`).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let count = rows.first().map_or(0, Vec::len);
        let mut c = Self::zeros(dim, count)?;
        for (n, row) in rows.iter().enumerate() {
            if row.len() != count {
                return Err(Error::DimensionMismatch {
                    expected: count,
                    got: row.len(),
                });
            }
            for (k, &v) in row.iter().enumerate() {
                c.set(n, k, v);
            }
        }
        Ok(c)
    }

    /// Dimension `N`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of centers `K`.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn center(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn center_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn centers(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.dim)
    }

    pub fn get(&self, n: usize, k: usize) -> f64 {
        self.values[k * self.dim + n]
    }

    pub fn set(&mut self, n: usize, k: usize, v: f64) {
        self.values[k * self.dim + n] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// `N x K` row-major copy (`rows[n][k]`).
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|n| (0..self.count).map(|k| self.get(n, k)).collect())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Frobenius distance to another centroid matrix of the same shape.
    pub fn distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Copy with centers reordered so that new center `k` is old center `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for &p in perm {
            values.extend_from_slice(self.center(p));
        }
        Self {
            dim: self.dim,
            count: self.count,
            values,
        }
    }
}

/// GMM hyperparameters of the sketch likelihood and the centroid prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmHyperparams {
    /// Mixture weights, on the probability simplex.
    pub alpha: Vec<f64>,
    /// Per-cluster variance proxies `tr(R_k)/N`.
    pub tau: Vec<f64>,
    /// Prior variance of centroid coordinates; `f64::INFINITY` is the flat prior.
    #[serde(with = "nu_serde")]
    pub nu: f64,
}

impl GmmHyperparams {
    pub fn new(alpha: Vec<f64>, tau: Vec<f64>, nu: f64) -> Result<Self> {
        let h = Self { alpha, tau, nu };
        h.validate()?;
        Ok(h)
    }

    /// Uniform weights, equal `tau`, flat prior.
    pub fn uniform(k: usize, tau: f64) -> Self {
        Self {
            alpha: vec![1.0 / k as f64; k],
            tau: vec![tau; k],
            nu: f64::INFINITY,
        }
    }

    pub fn k(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_flat_prior(&self) -> bool {
        self.nu == f64::INFINITY
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_empty() || self.alpha.len() != self.tau.len() {
            return Err(Error::InvalidHyperparams(format!(
                "alpha has {} entries, tau has {}",
                self.alpha.len(),
                self.tau.len()
            )));
        }
        if self.alpha.iter().any(|&a| !(a >= 0.0) || !a.is_finite()) {
            return Err(Error::InvalidHyperparams(
                "alpha must be nonnegative".into(),
            ));
        }
        let total: f64 = self.alpha.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidHyperparams(format!(
                "alpha must sum to 1, sums to {total}"
            )));
        }
        if self.tau.iter().any(|&t| !(t >= 0.0)) {
            return Err(Error::InvalidHyperparams("tau must be nonnegative".into()));
        }
        if !(self.nu > 0.0) {
            return Err(Error::InvalidHyperparams(format!(
                "nu must be positive, got {}",
                self.nu
            )));
        }
        Ok(())
    }
}

mod nu_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(nu: &f64, s: S) -> Result<S::Ok, S::Error> {
        if nu.is_finite() {
            s.serialize_f64(*nu)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}
