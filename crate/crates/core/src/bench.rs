//! Benchmark sweeps: CL-AMP over a grid of sketch sizes and k-means++ over
//! subsampling rates and replicate counts, on freshly drawn synthetic data
//! per trial.

use std::cmp::Ordering;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::engine::{self, EngineConfig};
use crate::error::{Error, Result};
use crate::eval::{classify_and_score, kmeans_pp, sse, EvalReport};
use crate::sketch::{compute_sketch, draw_frequencies, estimate_scale_subsampled, RadiusLaw};
use crate::synth::{gen_gmm, SynthSpec};

pub const CLAMP: &str = "clamp";
pub const KMEANS: &str = "kmeans++";
/// Replicate counts above this are clipped to keep sweeps at desk scale.
pub const MAX_REPLICATES: usize = 64;
pub const DEFAULT_TRIALS: usize = 10;
pub const DEFAULT_TEST_SIZE: usize = 100_000;
pub const MEDIAN_SEED: &str = "median";

// Offsets that separate the random streams used inside one trial.
const FREQ_SEED_OFFSET: u64 = 0x5EED_F00D;
const KMEANS_SEED_OFFSET: u64 = 0x0C1A_55E5;
const ENGINE_SEED_OFFSET: u64 = 0x00E1_61E5;

/// `points` sketch sizes log-spaced over `[KN, 10KN]`, rounded and deduplicated.
pub fn default_m_grid(k: usize, n: usize, points: usize) -> Vec<usize> {
    let lo = (k * n) as f64;
    let points = points.max(1);
    let mut grid: Vec<usize> = (0..points)
        .map(|i| {
            let frac = if points == 1 {
                0.0
            } else {
                i as f64 / (points - 1) as f64
            };
            (lo * 10f64.powf(frac)).round() as usize
        })
        .collect();
    grid.dedup();
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub k: usize,
    pub n: usize,
    pub t: usize,
    pub test_t: usize,
    pub m_grid: Vec<usize>,
    pub kmeans_rates: Vec<f64>,
    pub kmeans_replicates: Vec<usize>,
    pub trials: usize,
    /// Trial `i` uses seed `seed + i`.
    pub seed: u64,
    pub radius_law: RadiusLaw,
    pub engine: EngineConfig,
}

impl SweepSpec {
    /// Desk-scale defaults for a given `(K, N, T)`.
    pub fn new(k: usize, n: usize, t: usize) -> Self {
        Self {
            k,
            n,
            t,
            test_t: DEFAULT_TEST_SIZE,
            m_grid: default_m_grid(k, n, 5),
            kmeans_rates: vec![1.0],
            kmeans_replicates: vec![1],
            trials: DEFAULT_TRIALS,
            seed: 0,
            radius_law: RadiusLaw::AdaptedRadius,
            engine: EngineConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n == 0 || self.t == 0 {
            return Err(Error::InvalidConfig("K, N and T must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig(
                "at least one trial is required".into(),
            ));
        }
        if self.m_grid.is_empty()
            && (self.kmeans_rates.is_empty() || self.kmeans_replicates.is_empty())
        {
            return Err(Error::InvalidConfig("both sweep grids are empty".into()));
        }
        if self.m_grid.contains(&0) {
            return Err(Error::InvalidConfig("sketch sizes must be positive".into()));
        }
        if let Some(r) = self
            .kmeans_rates
            .iter()
            .find(|r| !(**r > 0.0 && **r <= 1.0))
        {
            return Err(Error::InvalidConfig(format!(
                "k-means++ rate {r} outside (0, 1]"
            )));
        }
        if self.kmeans_replicates.contains(&0) {
            return Err(Error::InvalidConfig(
                "replicate counts must be positive".into(),
            ));
        }
        self.engine.validate()
    }

    /// Replicate grid after clipping to [`MAX_REPLICATES`].
    pub fn effective_replicates(&self) -> Vec<usize> {
        let mut r: Vec<usize> = self
            .kmeans_replicates
            .iter()
            .map(|&r| r.min(MAX_REPLICATES))
            .collect();
        r.sort_unstable();
        r.dedup();
        r
    }
}

/// Sidecar metadata written next to the bench CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchMeta {
    pub spec: SweepSpec,
    pub replicate_cap: usize,
    pub clipped_replicates: Vec<usize>,
    pub note: String,
}

impl BenchMeta {
    pub fn new(spec: &SweepSpec) -> Self {
        let clipped: Vec<usize> = spec
            .kmeans_replicates
            .iter()
            .copied()
            .filter(|&r| r > MAX_REPLICATES)
            .collect();
        let note = if clipped.is_empty() {
            "no replicate counts clipped".to_string()
        } else {
            format!("replicate counts {clipped:?} clipped to {MAX_REPLICATES}")
        };
        Self {
            spec: spec.clone(),
            replicate_cap: MAX_REPLICATES,
            clipped_replicates: clipped,
            note,
        }
    }
}

/// All rows of one trial: CL-AMP at every grid size, then k-means++ at every
/// (rate, replicates) pair.
pub fn run_trial(spec: &SweepSpec, trial: usize) -> Result<Vec<EvalReport>> {
    let seed = spec.seed.wrapping_add(trial as u64);
    let data = gen_gmm(&SynthSpec {
        test_t: spec.test_t,
        ..SynthSpec::new(spec.k, spec.n, spec.t, seed)
    })?;
    let row = |algorithm: &str, m_or_rate: String, replicates: usize| EvalReport {
        algorithm: algorithm.into(),
        k: spec.k,
        n: spec.n,
        t: spec.t,
        m_or_rate,
        replicates,
        sse: 0.0,
        error_rate: f64::NAN,
        bayes_rate: f64::NAN,
        runtime_seconds: 0.0,
        sketch_seconds: 0.0,
        seed: seed.to_string(),
    };
    let score = |report: &mut EvalReport, centroids: &crate::types::Centroids| -> Result<()> {
        report.sse = sse(&data.train, centroids)?;
        if let Some(test) = &data.test {
            let s = classify_and_score(test, &data.test_labels, centroids, &data.means)?;
            report.error_rate = s.error_rate;
            report.bayes_rate = s.bayes_rate;
        }
        Ok(())
    };

    let mut rows = Vec::new();
    for &m in &spec.m_grid {
        let start = Instant::now();
        let fseed = seed.wrapping_add(FREQ_SEED_OFFSET).wrapping_add(m as u64);
        let scale = estimate_scale_subsampled(&data.train, fseed)?;
        let freqs = draw_frequencies(spec.n, m, spec.radius_law, scale, fseed)?;
        let y = compute_sketch(&data.train, &freqs)?;
        let sketch_seconds = start.elapsed().as_secs_f64();
        let config = EngineConfig {
            seed: seed.wrapping_add(ENGINE_SEED_OFFSET),
            ..spec.engine.clone()
        };
        let out = engine::run(&y, &freqs, spec.k, &config, None)?;
        let mut r = row(CLAMP, m.to_string(), config.restarts);
        r.runtime_seconds = start.elapsed().as_secs_f64();
        r.sketch_seconds = sketch_seconds;
        score(&mut r, &out.centroids)?;
        rows.push(r);
    }
    for &rate in &spec.kmeans_rates {
        for replicates in spec.effective_replicates() {
            let start = Instant::now();
            let out = kmeans_pp(
                &data.train,
                spec.k,
                replicates,
                rate,
                seed.wrapping_add(KMEANS_SEED_OFFSET),
            )?;
            let mut r = row(KMEANS, rate.to_string(), replicates);
            r.runtime_seconds = start.elapsed().as_secs_f64();
            score(&mut r, &out.centroids)?;
            rows.push(r);
        }
    }
    Ok(rows)
}

fn grid_value(s: &str) -> f64 {
    s.parse().unwrap_or(f64::NAN)
}

fn seed_key(s: &str) -> (u8, u64) {
    match s.parse::<u64>() {
        Ok(v) => (0, v),
        Err(_) => (1, 0),
    }
}

/// Row order: algorithm, grid value, replicates, then seed with median rows last.
pub fn compare_rows(a: &EvalReport, b: &EvalReport) -> Ordering {
    a.algorithm
        .cmp(&b.algorithm)
        .then_with(|| grid_value(&a.m_or_rate).total_cmp(&grid_value(&b.m_or_rate)))
        .then_with(|| a.replicates.cmp(&b.replicates))
        .then_with(|| seed_key(&a.seed).cmp(&seed_key(&b.seed)))
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// One median row per (algorithm, grid point, replicates) group of `rows`.
pub fn median_rows(rows: &[EvalReport]) -> Vec<EvalReport> {
    let mut sorted = rows.to_vec();
    sorted.sort_by(compare_rows);
    let mut out = Vec::new();
    for group in sorted.chunk_by(|a, b| {
        a.algorithm == b.algorithm && a.m_or_rate == b.m_or_rate && a.replicates == b.replicates
    }) {
        let col = |f: fn(&EvalReport) -> f64| median(&mut group.iter().map(f).collect::<Vec<_>>());
        out.push(EvalReport {
            sse: col(|r| r.sse),
            error_rate: col(|r| r.error_rate),
            bayes_rate: col(|r| r.bayes_rate),
            runtime_seconds: col(|r| r.runtime_seconds),
            sketch_seconds: col(|r| r.sketch_seconds),
            seed: MEDIAN_SEED.into(),
            ..group[0].clone()
        });
    }
    out
}

/// Runs every trial and returns per-trial rows followed by median rows,
/// sorted by [`compare_rows`]. Trials run one after another so that the
/// runtime columns are not distorted by competing trials; each trial
/// parallelizes internally.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<EvalReport>> {
    spec.validate()?;
    let mut rows = Vec::new();
    for trial in 0..spec.trials {
        rows.extend(run_trial(spec, trial)?);
    }
    let medians = median_rows(&rows);
    rows.extend(medians);
    rows.sort_by(compare_rows);
    Ok(rows)
}
