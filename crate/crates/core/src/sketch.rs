//! Random frequencies, empirical sketches and the analytic GMM forward map.
//!
//! The sketch of a dataset is `y_m = (1/T) sum_t exp(j w_m^T x_t)`, the
//! empirical characteristic function sampled at the frequencies `w_m`. Each
//! frequency is stored factored as a radius `g_m = |w_m|` and a unit direction.

use std::sync::OnceLock;

use num_complex::Complex64;
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Centroids, DataMatrix, GmmHyperparams};

/// Samples per chunk when accumulating a sketch.
pub const DEFAULT_CHUNK: usize = 256;

/// Subsample size used by [`estimate_scale_subsampled`].
pub const SCALE_SUBSAMPLE: usize = 1000;

/// Distribution of the frequency radii `g_m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusLaw {
    /// `w_m ~ N(0, scale^-2 I)`, so `g_m` is a chi variable with `N` degrees of freedom over `scale`.
    Gaussian,
    /// Radius with density proportional to `r sqrt(r^2 + r^4/4) exp(-r^2/2)`, times `sqrt(N)/scale`.
    AdaptedRadius,
}

impl RadiusLaw {
    pub fn as_str(self) -> &'static str {
        match self {
            RadiusLaw::Gaussian => "gaussian",
            RadiusLaw::AdaptedRadius => "adapted_radius",
        }
    }
}

impl std::str::FromStr for RadiusLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(RadiusLaw::Gaussian),
            "adapted_radius" | "adapted" => Ok(RadiusLaw::AdaptedRadius),
            other => Err(Error::InvalidConfig(format!(
                "unknown radius law {other:?}"
            ))),
        }
    }
}

/// Everything needed to regenerate a [`FrequencyMatrix`] bit-exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyRef {
    pub seed: u64,
    pub radius_law: RadiusLaw,
    pub scale: f64,
    pub count: usize,
    pub dim: usize,
}

impl FrequencyRef {
    fn same_as(&self, other: &Self) -> bool {
        self.seed == other.seed
            && self.radius_law == other.radius_law
            && self.scale.to_bits() == other.scale.to_bits()
            && self.count == other.count
            && self.dim == other.dim
    }

    pub fn regenerate(&self) -> Result<FrequencyMatrix> {
        draw_frequencies(self.dim, self.count, self.radius_law, self.scale, self.seed)
    }
}

/// The `M x N` frequency matrix `W`, factored as `W = Diag(g) W~`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyMatrix {
    count: usize,
    dim: usize,
    directions: Vec<f64>,
    radii: Vec<f64>,
    seed: u64,
    radius_law: RadiusLaw,
    scale: f64,
}

impl FrequencyMatrix {
    /// Builds a frequency matrix from explicit parts. Rows of `directions`
    /// are renormalized to unit length.
    pub fn from_parts(
        dim: usize,
        directions: Vec<f64>,
        radii: Vec<f64>,
        seed: u64,
        radius_law: RadiusLaw,
        scale: f64,
    ) -> Result<Self> {
        let count = radii.len();
        if dim == 0 || count == 0 {
            return Err(Error::InvalidDimensions(format!(
                "frequencies need N >= 1 and M >= 1, got N={dim}, M={count}"
            )));
        }
        if directions.len() != dim * count {
            return Err(Error::DimensionMismatch {
                expected: dim * count,
                got: directions.len(),
            });
        }
        if radii.iter().any(|&g| !(g > 0.0) || !g.is_finite()) {
            return Err(Error::InvalidConfig(
                "frequency radii must be positive".into(),
            ));
        }
        let mut directions = directions;
        for row in directions.chunks_exact_mut(dim) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::InvalidConfig("zero frequency direction".into()));
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(Self {
            count,
            dim,
            directions,
            radii,
            seed,
            radius_law,
            scale,
        })
    }

    /// Number of frequencies `M`.
    pub fn count(&self) -> usize {
        self.count
    }

    /// Dimension `N`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn radius_law(&self) -> RadiusLaw {
        self.radius_law
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn radius(&self, m: usize) -> f64 {
        self.radii[m]
    }

    /// Unit direction `w~_m`.
    pub fn direction(&self, m: usize) -> &[f64] {
        &self.directions[m * self.dim..(m + 1) * self.dim]
    }

    pub fn directions(&self) -> &[f64] {
        &self.directions
    }

    /// Full frequency rows `w_m = g_m w~_m`, row-major.
    pub fn scaled_rows(&self) -> Vec<f64> {
        self.directions
            .chunks_exact(self.dim)
            .zip(&self.radii)
            .flat_map(|(row, &g)| row.iter().map(move |v| v * g))
            .collect()
    }

    pub fn reference(&self) -> FrequencyRef {
        FrequencyRef {
            seed: self.seed,
            radius_law: self.radius_law,
            scale: self.scale,
            count: self.count,
            dim: self.dim,
        }
    }
}

/// Draws `M` frequencies in dimension `N`: directions uniform on the sphere,
/// radii i.i.d. from `law` and scaled by the inverse data scale.
pub fn draw_frequencies(
    dim: usize,
    count: usize,
    law: RadiusLaw,
    scale: f64,
    seed: u64,
) -> Result<FrequencyMatrix> {
    if dim == 0 || count == 0 {
        return Err(Error::InvalidDimensions(format!(
            "frequencies need N >= 1 and M >= 1, got N={dim}, M={count}"
        )));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::NonPositiveScale(scale));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut directions = Vec::with_capacity(dim * count);
    let mut radii = Vec::with_capacity(count);
    let mut row = vec![0.0; dim];
    for _ in 0..count {
        let norm = loop {
            row.iter_mut()
                .for_each(|v| *v = StandardNormal.sample(&mut rng));
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                break norm;
            }
        };
        directions.extend(row.iter().map(|v| v / norm));
        let radius = match law {
            RadiusLaw::Gaussian => norm / scale,
            RadiusLaw::AdaptedRadius => {
                let u: f64 = rand::Rng::random(&mut rng);
                adapted_radius_quantile(u) * (dim as f64).sqrt() / scale
            }
        };
        radii.push(radius);
    }
    FrequencyMatrix::from_parts(dim, directions, radii, seed, law, scale)
}

const ADAPTED_GRID: usize = 8192;
const ADAPTED_MAX: f64 = 12.0;

fn adapted_radius_density(r: f64) -> f64 {
    r * (r * r + r.powi(4) / 4.0).sqrt() * (-r * r / 2.0).exp()
}

fn adapted_radius_cdf() -> &'static [f64] {
    static CDF: OnceLock<Vec<f64>> = OnceLock::new();
    CDF.get_or_init(|| {
        let h = ADAPTED_MAX / ADAPTED_GRID as f64;
        let mut cdf = Vec::with_capacity(ADAPTED_GRID + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        for i in 0..ADAPTED_GRID {
            let a = adapted_radius_density(i as f64 * h);
            let b = adapted_radius_density((i + 1) as f64 * h);
            acc += 0.5 * h * (a + b);
            cdf.push(acc);
        }
        cdf.iter_mut().for_each(|c| *c /= acc);
        cdf
    })
}

/// Inverse CDF of the adapted-radius density (unit scale), by linear
/// interpolation of a tabulated trapezoid CDF.
pub fn adapted_radius_quantile(u: f64) -> f64 {
    let cdf = adapted_radius_cdf();
    let u = u.clamp(0.0, 1.0);
    let i = cdf.partition_point(|&c| c < u).clamp(1, ADAPTED_GRID);
    let (lo, hi) = (cdf[i - 1], cdf[i]);
    let h = ADAPTED_MAX / ADAPTED_GRID as f64;
    let frac = if hi > lo { (u - lo) / (hi - lo) } else { 0.0 };
    ((i - 1) as f64 + frac) * h
}

/// RMS data radius proxy: `sqrt(N * mean_n var_n)` over the given samples.
pub fn estimate_scale(sample: &DataMatrix) -> Result<f64> {
    let dim = sample.dim();
    let t = sample.len() as f64;
    let mut mean = vec![0.0; dim];
    for x in sample.samples() {
        mean.iter_mut().zip(x).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= t);
    let mut var = vec![0.0; dim];
    for x in sample.samples() {
        var.iter_mut()
            .zip(x.iter().zip(&mean))
            .for_each(|(s, (v, m))| *s += (v - m) * (v - m));
    }
    let mean_var = var.iter().sum::<f64>() / (t * dim as f64);
    let scale = (mean_var * dim as f64).sqrt();
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::DegenerateScale);
    }
    Ok(scale)
}

/// [`estimate_scale`] on a uniform subsample of at most [`SCALE_SUBSAMPLE`] points.
pub fn estimate_scale_subsampled(data: &DataMatrix, seed: u64) -> Result<f64> {
    if data.len() <= SCALE_SUBSAMPLE {
        return estimate_scale(data);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample_indices(&mut rng, data.len(), SCALE_SUBSAMPLE).into_vec();
    idx.sort_unstable();
    estimate_scale(&data.select(&idx)?)
}

/// A length-`M` complex sketch together with the provenance of its frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct Sketch {
    pub values: Vec<Complex64>,
    pub seed: u64,
    pub radius_law: RadiusLaw,
    pub scale: f64,
    pub sample_count: u64,
    pub dimension: usize,
}

impl Sketch {
    /// Sketch of an empty dataset (`T = 0`); the identity for [`merge_sketches`].
    pub fn empty(freqs: &FrequencyMatrix) -> Self {
        Self::with_values(freqs, vec![Complex64::new(0.0, 0.0); freqs.count()], 0)
    }

    /// Wraps values (e.g. an analytic sketch) with the provenance of `freqs`.
    pub fn with_values(freqs: &FrequencyMatrix, values: Vec<Complex64>, sample_count: u64) -> Self {
        Self {
            values,
            seed: freqs.seed(),
            radius_law: freqs.radius_law(),
            scale: freqs.scale(),
            sample_count,
            dimension: freqs.dim(),
        }
    }

    /// Sketch length `M`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn reference(&self) -> FrequencyRef {
        FrequencyRef {
            seed: self.seed,
            radius_law: self.radius_law,
            scale: self.scale,
            count: self.values.len(),
            dim: self.dimension,
        }
    }

    /// Regenerates the frequencies this sketch was computed with.
    pub fn frequencies(&self) -> Result<FrequencyMatrix> {
        self.reference().regenerate()
    }
}

/// Empirical sketch with the default chunking, accumulated in parallel.
pub fn compute_sketch(data: &DataMatrix, freqs: &FrequencyMatrix) -> Result<Sketch> {
    compute_sketch_chunked(data, freqs, DEFAULT_CHUNK, true)
}

/// Empirical sketch accumulated over chunks of `chunk` samples.
///
/// Chunk partial sums are combined by a pairwise tree over chunk index, so
/// the result depends on `chunk` but not on `parallel` or the thread count.
pub fn compute_sketch_chunked(
    data: &DataMatrix,
    freqs: &FrequencyMatrix,
    chunk: usize,
    parallel: bool,
) -> Result<Sketch> {
    if data.dim() != freqs.dim() {
        return Err(Error::DimensionMismatch {
            expected: freqs.dim(),
            got: data.dim(),
        });
    }
    if chunk == 0 {
        return Err(Error::InvalidConfig("chunk size must be positive".into()));
    }
    let rows = freqs.scaled_rows();
    let dim = data.dim();
    let m = freqs.count();
    let chunk_sum = |block: &[f64]| -> Vec<Complex64> {
        let mut acc = vec![Complex64::new(0.0, 0.0); m];
        for x in block.chunks_exact(dim) {
            for (a, w) in acc.iter_mut().zip(rows.chunks_exact(dim)) {
                let phase: f64 = w.iter().zip(x).map(|(wi, xi)| wi * xi).sum();
                let (s, c) = phase.sin_cos();
                a.re += c;
                a.im += s;
            }
        }
        acc
    };
    let blocks = data.as_slice().chunks(chunk * dim);
    let partials: Vec<Vec<Complex64>> = if parallel {
        blocks
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(chunk_sum)
            .collect()
    } else {
        blocks.map(chunk_sum).collect()
    };
    let total = tree_sum(partials);
    let inv_t = 1.0 / data.len() as f64;
    let values = total.into_iter().map(|s| clamp_unit(s * inv_t)).collect();
    Ok(Sketch::with_values(freqs, values, data.len() as u64))
}

fn tree_sum(mut level: Vec<Vec<Complex64>>) -> Vec<Complex64> {
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        let mut it = level.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
            next.push(a);
        }
        level = next;
    }
    level.pop().unwrap_or_default()
}

// Rounding in sin/cos can push an average of unit-modulus terms a few ulps past 1.
fn clamp_unit(z: Complex64) -> Complex64 {
    let r = z.norm();
    if r > 1.0 {
        z / r
    } else {
        z
    }
}

/// Combines sketches of disjoint datasets into the sketch of their union.
pub fn merge_sketches(a: &Sketch, b: &Sketch) -> Result<Sketch> {
    if !a.reference().same_as(&b.reference()) {
        return Err(Error::ProvenanceMismatch);
    }
    let total = a.sample_count + b.sample_count;
    if total == 0 {
        return Ok(a.clone());
    }
    let wa = a.sample_count as f64 / total as f64;
    let wb = b.sample_count as f64 / total as f64;
    let values = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| clamp_unit(x * wa + y * wb))
        .collect();
    Ok(Sketch {
        values,
        sample_count: total,
        ..a.clone()
    })
}

fn check_model_shapes(
    centroids: &Centroids,
    hyper: &GmmHyperparams,
    freqs: &FrequencyMatrix,
) -> Result<()> {
    hyper.validate()?;
    if centroids.dim() != freqs.dim() {
        return Err(Error::DimensionMismatch {
            expected: freqs.dim(),
            got: centroids.dim(),
        });
    }
    if centroids.count() != hyper.k() {
        return Err(Error::DimensionMismatch {
            expected: hyper.k(),
            got: centroids.count(),
        });
    }
    Ok(())
}

/// Large-`T` sketch of a GMM: `sum_k alpha_k exp(j g_m z_mk - g_m^2 tau_k / 2)`
/// with `z_mk = w~_m^T c_k`.
pub fn analytic_sketch(
    centroids: &Centroids,
    hyper: &GmmHyperparams,
    freqs: &FrequencyMatrix,
) -> Result<Vec<Complex64>> {
    check_model_shapes(centroids, hyper, freqs)?;
    Ok((0..freqs.count())
        .map(|m| analytic_entry(centroids, hyper, freqs.direction(m), freqs.radius(m)))
        .collect())
}

fn analytic_entry(centroids: &Centroids, hyper: &GmmHyperparams, dir: &[f64], g: f64) -> Complex64 {
    centroids
        .centers()
        .zip(hyper.alpha.iter().zip(&hyper.tau))
        .map(|(c, (&a, &tau))| {
            let z: f64 = dir.iter().zip(c).map(|(w, x)| w * x).sum();
            let (s, co) = (g * z).sin_cos();
            Complex64::new(co, s) * (a * (-g * g * tau / 2.0).exp())
        })
        .sum()
}

/// `sum_m |y_m - yhat_m|^2` between a sketch and the analytic sketch of a GMM.
pub fn sketch_residual(
    y: &Sketch,
    centroids: &Centroids,
    hyper: &GmmHyperparams,
    freqs: &FrequencyMatrix,
) -> Result<f64> {
    if y.len() != freqs.count() {
        return Err(Error::DimensionMismatch {
            expected: freqs.count(),
            got: y.len(),
        });
    }
    let model = analytic_sketch(centroids, hyper, freqs)?;
    Ok(y.values
        .iter()
        .zip(&model)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum())
}
