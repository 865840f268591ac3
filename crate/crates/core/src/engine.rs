//! The CL-AMP iteration: SHyGAMP with scalar (per-cluster) variances between
//! the sketch-likelihood output denoiser and the Gaussian input denoiser,
//! with damping, EM hyperparameter updates and random restarts.
//!
//! One sweep of [`Engine::step`], with `W~` the unit-norm frequency directions:
//!
//! ```text
//! q^p <- mean_n q^c_n
//! P   <- W~ C - S Diag(q^p)
//! Z, q^z <- output denoiser, row by row
//! (alpha, tau) <- EM                                  (optional)
//! q^s <- 1 / q^p - mean_m(q^z_m) / (q^p)^2            (floored)
//! S   <- (Z - P) Diag(q^p)^-1                         (damped)
//! q^r <- (N / M) / q^s
//! R   <- C + W~^T S Diag(q^r)
//! C, q^c <- input denoiser, row by row                (damped)
//! ```

use std::io::Write;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoisers::{
    denoise_c, denoise_z, DenoiserStats, PosteriorMomentsC, PosteriorMomentsZ, PseudoPriorZ,
};
use crate::em::{em_objective, update_hyperparams, EmWorkspace, InputMoments};
use crate::error::{Error, Result};
use crate::sketch::{sketch_residual, FrequencyMatrix, Sketch};
use crate::types::{Centroids, GmmHyperparams};

/// Ratio of the initial `tau` guess to the initial centroid prior variance.
const TAU_INIT_RATIO: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub max_iters: usize,
    /// Relative Frobenius change of `C` below which a restart stops.
    pub tol: f64,
    /// Weight of the new iterate in `C` and `S` updates; 1 disables damping.
    pub damping: f64,
    pub restarts: usize,
    pub em_enabled: bool,
    /// EM runs on iterations `i` with `i % em_period == 0`.
    pub em_period: usize,
    /// Learn the centroid prior variance `nu` (otherwise the prior stays as given).
    pub learn_nu: bool,
    pub seed: u64,
    pub variance_floor: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-6,
            damping: 0.7,
            restarts: 2,
            em_enabled: true,
            em_period: 1,
            learn_nu: false,
            seed: 0,
            variance_floor: 1e-12,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol >= 0.0) {
            return Err(Error::InvalidConfig("tol must be nonnegative".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidConfig("damping must lie in (0, 1]".into()));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidConfig("restarts must be at least 1".into()));
        }
        if self.em_period == 0 {
            return Err(Error::InvalidConfig("em_period must be at least 1".into()));
        }
        if !(self.variance_floor > 0.0) {
            return Err(Error::InvalidConfig(
                "variance_floor must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-iteration SHyGAMP quantities. Matrices are row-major: `chat`, `rhat`
/// are `N x K`; `phat`, `zhat`, `qz`, `shat` are `M x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineState {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub chat: Vec<f64>,
    pub qc: Vec<f64>,
    pub phat: Vec<f64>,
    pub qp: Vec<f64>,
    pub zhat: Vec<f64>,
    pub qz: Vec<f64>,
    pub shat: Vec<f64>,
    pub qs: Vec<f64>,
    pub rhat: Vec<f64>,
    pub qr: Vec<f64>,
    pub iteration: usize,
}

impl EngineState {
    /// State with `C = centroids`, `q^c = qc_init`, `S = 0`.
    pub fn new(m: usize, centroids: &Centroids, qc_init: f64) -> Self {
        let (n, k) = (centroids.dim(), centroids.count());
        let mut chat = vec![0.0; n * k];
        for kk in 0..k {
            for (i, &v) in centroids.center(kk).iter().enumerate() {
                chat[i * k + kk] = v;
            }
        }
        Self {
            m,
            n,
            k,
            chat,
            qc: vec![qc_init; k],
            phat: vec![0.0; m * k],
            qp: vec![qc_init; k],
            zhat: vec![0.0; m * k],
            qz: vec![qc_init; m * k],
            shat: vec![0.0; m * k],
            qs: vec![0.0; k],
            rhat: vec![0.0; n * k],
            qr: vec![qc_init; k],
            iteration: 0,
        }
    }

    pub fn centroids(&self) -> Centroids {
        let mut values = vec![0.0; self.n * self.k];
        for i in 0..self.n {
            for kk in 0..self.k {
                values[kk * self.n + i] = self.chat[i * self.k + kk];
            }
        }
        Centroids::new(self.n, self.k, values).expect("state shapes are consistent")
    }

    pub fn is_finite(&self) -> bool {
        [
            &self.chat, &self.qc, &self.phat, &self.qp, &self.zhat, &self.qz, &self.shat, &self.qs,
            &self.rhat, &self.qr,
        ]
        .iter()
        .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// The pair of denoisers the iteration alternates between.
pub trait Denoise: Sync {
    fn output(
        &self,
        y: Complex64,
        pseudo: &PseudoPriorZ,
        hyper: &GmmHyperparams,
        g: f64,
    ) -> Result<(PosteriorMomentsZ, DenoiserStats)>;

    fn input(&self, rhat: &[f64], qr: &[f64], nu: f64) -> Result<PosteriorMomentsC>;
}

/// Sketch-likelihood output denoiser and Gaussian-prior input denoiser.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClAmpDenoisers;

impl Denoise for ClAmpDenoisers {
    fn output(
        &self,
        y: Complex64,
        pseudo: &PseudoPriorZ,
        hyper: &GmmHyperparams,
        g: f64,
    ) -> Result<(PosteriorMomentsZ, DenoiserStats)> {
        denoise_z(y, pseudo, hyper, g)
    }

    fn input(&self, rhat: &[f64], qr: &[f64], nu: f64) -> Result<PosteriorMomentsC> {
        denoise_c(rhat, qr, nu)
    }
}

/// What happened during one [`Engine::step`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StepReport {
    pub denoiser_fallbacks: usize,
    pub denoiser_clamps: usize,
    pub negligible_components: usize,
    pub variance_clamps: usize,
    pub em_objective: Option<f64>,
}

/// One line of the JSON-lines trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub restart: usize,
    pub iteration: usize,
    pub residual: f64,
    pub change: f64,
    #[serde(flatten)]
    pub report: StepReport,
}

/// Summary of one restart.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestartSummary {
    pub restart: usize,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    /// Final sketch residual, or `None` when the restart failed.
    pub residual: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub restarts: Vec<RestartSummary>,
    pub best_restart: usize,
    pub records: Vec<IterationRecord>,
}

impl Diagnostics {
    /// Writes the per-iteration records as JSON lines.
    pub fn write_trace<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Output of [`run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub centroids: Centroids,
    pub hyper: GmmHyperparams,
    pub residual: f64,
    pub diagnostics: Diagnostics,
}

/// `true` iff `|next - prev|_F <= tol (|prev|_F + 1e-30)`.
pub fn should_terminate(prev: &Centroids, next: &Centroids, tol: f64) -> bool {
    next.distance(prev) <= tol * (prev.frobenius_norm() + 1e-30)
}

/// Initial centroid prior variance implied by the frequency scale: the
/// per-coordinate variance `scale^2 / N` of the data the scale was estimated from.
pub fn initial_prior_variance(freqs: &FrequencyMatrix) -> f64 {
    freqs.scale() * freqs.scale() / freqs.dim() as f64
}

/// Random restart point: centroid columns i.i.d. `N(0, nu_hat I)`, uniform
/// weights, `tau` proportional to `nu_hat`, and the flat centroid prior.
pub fn default_init(
    y: &Sketch,
    freqs: &FrequencyMatrix,
    k: usize,
    seed: u64,
) -> Result<(Centroids, GmmHyperparams)> {
    if k == 0 {
        return Err(Error::InvalidConfig("K must be at least 1".into()));
    }
    if y.len() != freqs.count() {
        return Err(Error::DimensionMismatch {
            expected: freqs.count(),
            got: y.len(),
        });
    }
    let nu_hat = initial_prior_variance(freqs);
    let normal = Normal::new(0.0, nu_hat.sqrt())
        .map_err(|e| Error::InvalidConfig(format!("initial prior: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..k * freqs.dim())
        .map(|_| normal.sample(&mut rng))
        .collect();
    let centroids = Centroids::new(freqs.dim(), k, values)?;
    Ok((
        centroids,
        GmmHyperparams::uniform(k, TAU_INIT_RATIO * nu_hat),
    ))
}

/// A sketch, its frequencies and the denoisers, ready to iterate.
pub struct Engine<'a, D: Denoise = ClAmpDenoisers> {
    y: &'a [Complex64],
    freqs: &'a FrequencyMatrix,
    /// `N x M` transpose of the unit directions.
    directions_t: Vec<f64>,
    denoisers: D,
}

impl<'a> Engine<'a, ClAmpDenoisers> {
    pub fn new(y: &'a Sketch, freqs: &'a FrequencyMatrix) -> Result<Self> {
        Self::with_denoisers(y, freqs, ClAmpDenoisers)
    }
}

impl<'a, D: Denoise> Engine<'a, D> {
    pub fn with_denoisers(y: &'a Sketch, freqs: &'a FrequencyMatrix, denoisers: D) -> Result<Self> {
        if y.len() != freqs.count() {
            return Err(Error::DimensionMismatch {
                expected: freqs.count(),
                got: y.len(),
            });
        }
        if y.dimension != freqs.dim() {
            return Err(Error::DimensionMismatch {
                expected: freqs.dim(),
                got: y.dimension,
            });
        }
        let (m, n) = (freqs.count(), freqs.dim());
        let mut directions_t = vec![0.0; n * m];
        for mm in 0..m {
            for (i, &w) in freqs.direction(mm).iter().enumerate() {
                directions_t[i * m + mm] = w;
            }
        }
        Ok(Self {
            y: &y.values,
            freqs,
            directions_t,
            denoisers,
        })
    }

    pub fn freqs(&self) -> &FrequencyMatrix {
        self.freqs
    }

    /// `W~ C` as an `M x K` row-major matrix, for `C` in `N x K` row-major.
    pub fn project(&self, chat: &[f64], k: usize) -> Vec<f64> {
        let n = self.freqs.dim();
        let mut out = vec![0.0; self.freqs.count() * k];
        out.par_chunks_mut(k).enumerate().for_each(|(mm, row)| {
            for (i, &w) in self.freqs.direction(mm).iter().enumerate() {
                let c = &chat[i * k..(i + 1) * k];
                row.iter_mut().zip(c).for_each(|(r, cv)| *r += w * cv);
            }
        });
        debug_assert_eq!(chat.len(), n * k);
        out
    }

    /// `W~^T S` as an `N x K` row-major matrix, for `S` in `M x K` row-major.
    fn back_project(&self, shat: &[f64], k: usize) -> Vec<f64> {
        let m = self.freqs.count();
        let mut out = vec![0.0; self.freqs.dim() * k];
        out.par_chunks_mut(k).enumerate().for_each(|(i, row)| {
            let wt = &self.directions_t[i * m..(i + 1) * m];
            for (mm, &w) in wt.iter().enumerate() {
                let s = &shat[mm * k..(mm + 1) * k];
                row.iter_mut().zip(s).for_each(|(r, sv)| *r += w * sv);
            }
        });
        out
    }

    /// One SHyGAMP sweep. `hyper` is updated in place when EM runs.
    pub fn step(
        &self,
        state: &mut EngineState,
        hyper: &mut GmmHyperparams,
        config: &EngineConfig,
    ) -> Result<StepReport> {
        let (m, n, k) = (state.m, state.n, state.k);
        if m != self.freqs.count() || n != self.freqs.dim() || k != hyper.k() {
            return Err(Error::InvalidConfig("engine state shape mismatch".into()));
        }
        let floor = config.variance_floor;
        let mut report = StepReport::default();

        // q^p: the input variances are shared by every row.
        for (p, &c) in state.qp.iter_mut().zip(&state.qc) {
            *p = if c < floor {
                report.variance_clamps += 1;
                floor
            } else {
                c
            };
        }

        // P = W~ C - S Diag(q^p)
        let mut phat = self.project(&state.chat, k);
        for (row, s) in phat.chunks_exact_mut(k).zip(state.shat.chunks_exact(k)) {
            for ((p, sv), q) in row.iter_mut().zip(s).zip(&state.qp) {
                *p -= sv * q;
            }
        }
        state.phat = phat;

        // Output denoiser, row by row.
        let qp = state.qp.clone();
        let outputs: Vec<Result<(PosteriorMomentsZ, DenoiserStats)>> = (0..m)
            .into_par_iter()
            .map(|mm| {
                let pseudo = PseudoPriorZ {
                    mean: state.phat[mm * k..(mm + 1) * k].to_vec(),
                    variance: qp.clone(),
                };
                self.denoisers
                    .output(self.y[mm], &pseudo, hyper, self.freqs.radius(mm))
            })
            .collect();
        for (mm, out) in outputs.into_iter().enumerate() {
            let (post, stats) = out?;
            state.zhat[mm * k..(mm + 1) * k].copy_from_slice(&post.mean);
            state.qz[mm * k..(mm + 1) * k].copy_from_slice(&post.variance);
            report.denoiser_fallbacks += stats.fallbacks;
            report.denoiser_clamps += stats.clamps;
            report.negligible_components += stats.negligible;
        }

        if config.em_enabled && state.iteration.is_multiple_of(config.em_period) {
            let ws = EmWorkspace::new(
                state.zhat.clone(),
                state.qz.clone(),
                self.y.to_vec(),
                self.freqs.radii().to_vec(),
                k,
            )?;
            let input = config.learn_nu.then_some(InputMoments {
                chat: &state.chat,
                qc: &state.qc,
            });
            let up = update_hyperparams(&hyper.alpha, &hyper.tau, hyper.nu, &ws, input)?;
            hyper.alpha = up.alpha;
            hyper.tau = up.tau;
            hyper.nu = up.nu;
            report.em_objective = Some(up.objective_after);
        }

        // q^s = 1/q^p - mean_m(q^z) / (q^p)^2
        let mut mean_qz = vec![0.0; k];
        for row in state.qz.chunks_exact(k) {
            mean_qz.iter_mut().zip(row).for_each(|(a, q)| *a += q);
        }
        // A column whose q^s collapses carried no information this sweep; it
        // is frozen (S zeroed, C and q^c kept) instead of taking an unbounded step.
        let mut frozen = vec![false; k];
        for (kk, s) in state.qs.iter_mut().enumerate() {
            let p = state.qp[kk];
            let v = 1.0 / p - (mean_qz[kk] / m as f64) / (p * p);
            *s = if v > floor && v.is_finite() {
                v
            } else {
                report.variance_clamps += 1;
                frozen[kk] = true;
                floor
            };
        }

        // S = (Z - P) Diag(q^p)^-1, damped.
        let delta = config.damping;
        for ((s, (z, p)), kk) in state
            .shat
            .iter_mut()
            .zip(state.zhat.iter().zip(&state.phat))
            .zip((0..k).cycle())
        {
            let fresh = (z - p) / state.qp[kk];
            *s = if frozen[kk] {
                0.0
            } else {
                delta * fresh + (1.0 - delta) * *s
            };
        }

        // q^r = (N/M) / q^s;  R = C + W~^T S Diag(q^r)
        let ratio = n as f64 / m as f64;
        for (r, s) in state.qr.iter_mut().zip(&state.qs) {
            *r = ratio / s;
        }
        let back = self.back_project(&state.shat, k);
        for ((r, c), (b, kk)) in state
            .rhat
            .iter_mut()
            .zip(&state.chat)
            .zip(back.iter().zip((0..k).cycle()))
        {
            *r = c + b * state.qr[kk];
        }

        // Input denoiser, row by row, damped.
        let mut qc_new = vec![0.0; k];
        for (i, (r, c)) in state
            .rhat
            .chunks_exact(k)
            .zip(state.chat.chunks_exact_mut(k))
            .enumerate()
        {
            let post = self.denoisers.input(r, &state.qr, hyper.nu)?;
            for ((cv, &fresh), &skip) in c.iter_mut().zip(&post.mean).zip(&frozen) {
                if !skip {
                    *cv = delta * fresh + (1.0 - delta) * *cv;
                }
            }
            if i == 0 {
                qc_new = post.variance;
            }
        }
        for ((q, fresh), &skip) in state.qc.iter_mut().zip(qc_new).zip(&frozen) {
            if skip {
                continue;
            }
            *q = if fresh > floor {
                fresh
            } else {
                report.variance_clamps += 1;
                floor
            };
        }

        state.iteration += 1;
        if !state.is_finite() {
            return Err(Error::NonFinite(format!(
                "engine state after iteration {}",
                state.iteration
            )));
        }
        Ok(report)
    }

    /// Sketch residual of a centroid estimate under `hyper`.
    pub fn residual(&self, centroids: &Centroids, hyper: &GmmHyperparams) -> Result<f64> {
        let y = Sketch::with_values(self.freqs, self.y.to_vec(), 0);
        sketch_residual(&y, centroids, hyper, self.freqs)
    }

    /// Runs one restart from `init` until convergence or `max_iters`.
    pub fn run_from(
        &self,
        init: &Centroids,
        hyper: &GmmHyperparams,
        config: &EngineConfig,
        restart: usize,
    ) -> Result<(Centroids, GmmHyperparams, usize, bool, Vec<IterationRecord>)> {
        config.validate()?;
        hyper.validate()?;
        let qc_init = if hyper.nu.is_finite() {
            hyper.nu
        } else {
            initial_prior_variance(self.freqs)
        };
        let mut state = EngineState::new(self.freqs.count(), init, qc_init);
        let mut hyper = hyper.clone();
        let mut prev = init.clone();
        let mut records = Vec::new();
        let mut converged = false;
        for _ in 0..config.max_iters {
            let report = self.step(&mut state, &mut hyper, config)?;
            let next = state.centroids();
            let change = next.distance(&prev) / (prev.frobenius_norm() + 1e-30);
            records.push(IterationRecord {
                restart,
                iteration: state.iteration,
                residual: self.residual(&next, &hyper)?,
                change,
                report,
            });
            let done = should_terminate(&prev, &next, config.tol);
            prev = next;
            if done {
                converged = true;
                break;
            }
        }
        Ok((prev, hyper, state.iteration, converged, records))
    }
}

/// Recovers centroids from a sketch: runs `config.restarts` restarts (the
/// first from `init` when given) and keeps the one with the smallest sketch
/// residual. `k` is taken from `init` when present.
pub fn run(
    y: &Sketch,
    freqs: &FrequencyMatrix,
    k: usize,
    config: &EngineConfig,
    init: Option<&Centroids>,
) -> Result<RunOutput> {
    config.validate()?;
    let engine = Engine::new(y, freqs)?;
    let k = init.map_or(k, Centroids::count);
    if let Some(c) = init {
        if c.dim() != freqs.dim() {
            return Err(Error::DimensionMismatch {
                expected: freqs.dim(),
                got: c.dim(),
            });
        }
    }
    let outcomes: Vec<_> = (0..config.restarts)
        .into_par_iter()
        .map(|r| {
            let seed = restart_seed(config.seed, r);
            let attempt = default_init(y, freqs, k, seed).and_then(|(random, hyper)| {
                let start = match (r, init) {
                    (0, Some(c)) => c.clone(),
                    _ => random,
                };
                let (c, h, iters, converged, records) =
                    engine.run_from(&start, &hyper, config, r)?;
                let residual = engine.residual(&c, &h)?;
                Ok((c, h, iters, converged, records, residual))
            });
            (r, seed, attempt)
        })
        .collect();

    let mut summaries = Vec::with_capacity(outcomes.len());
    let mut records = Vec::new();
    let mut best: Option<(usize, Centroids, GmmHyperparams, f64)> = None;
    for (r, seed, attempt) in outcomes {
        match attempt {
            Ok((c, h, iterations, converged, recs, residual)) => {
                summaries.push(RestartSummary {
                    restart: r,
                    seed,
                    iterations,
                    converged,
                    residual: Some(residual),
                    error: None,
                });
                records.extend(recs);
                if best.as_ref().is_none_or(|b| residual < b.3) {
                    best = Some((r, c, h, residual));
                }
            }
            Err(e) => summaries.push(RestartSummary {
                restart: r,
                seed,
                iterations: 0,
                converged: false,
                residual: None,
                error: Some(e.to_string()),
            }),
        }
    }
    let Some((best_restart, centroids, hyper, residual)) = best else {
        return Err(Error::AllRestartsFailed(config.restarts));
    };
    Ok(RunOutput {
        centroids,
        hyper,
        residual,
        diagnostics: Diagnostics {
            restarts: summaries,
            best_restart,
            records,
        },
    })
}

fn restart_seed(seed: u64, restart: usize) -> u64 {
    seed.wrapping_add((restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// EM objective at the current state, for diagnostics.
pub fn state_em_objective(
    state: &EngineState,
    hyper: &GmmHyperparams,
    y: &[Complex64],
    freqs: &FrequencyMatrix,
) -> Result<f64> {
    let ws = EmWorkspace::new(
        state.zhat.clone(),
        state.qz.clone(),
        y.to_vec(),
        freqs.radii().to_vec(),
        state.k,
    )?;
    em_objective(&hyper.alpha, &hyper.tau, &ws)
}
