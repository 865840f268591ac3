//! EM learning of the mixture weights `alpha` and variance proxies `tau`.
//!
//! With the Dirac likelihood smoothed to a narrow Gaussian, the EM surrogate is
//! (up to a positive factor) the negated expected squared sketch residual
//!
//! `J(alpha, tau) = -sum_m E |y_m - sum_k beta_mk exp(j g_m z_mk)|^2`,
//!
//! with `beta_mk = alpha_k exp(-g_m^2 tau_k / 2)` and `z_m ~ N(z_hat_m, Diag(q^z_m))`.
//! Writing `u_mk = E exp(j g_m z_mk) = exp(j g_m z_hat_mk - g_m^2 q^z_mk / 2)` and
//! `S_m = sum_k beta_mk u_mk`, the expectation is
//! `|y_m - S_m|^2 + sum_k beta_mk^2 (1 - |u_mk|^2)`. `J` is maximized over
//! `alpha` on the simplex and `tau >= 0` by projected gradient ascent.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};

const ARMIJO: f64 = 1e-4;
const MAX_INNER_STEPS: usize = 50;
const MAX_HALVINGS: usize = 60;
const MIN_IMPROVEMENT: f64 = 1e-9;
const ROWS_PER_CHUNK: usize = 256;

/// Posterior moments of `Z` and the measurement data EM works from.
#[derive(Debug, Clone, PartialEq)]
pub struct EmWorkspace {
    /// `M x K`, row-major.
    pub zhat: Vec<f64>,
    /// `M x K`, row-major.
    pub qz: Vec<f64>,
    pub y: Vec<Complex64>,
    pub g: Vec<f64>,
    pub k: usize,
    /// `u_mk`, which does not depend on `(alpha, tau)`.
    u: Vec<Complex64>,
}

impl EmWorkspace {
    pub fn new(
        zhat: Vec<f64>,
        qz: Vec<f64>,
        y: Vec<Complex64>,
        g: Vec<f64>,
        k: usize,
    ) -> Result<Self> {
        let m = y.len();
        if g.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: g.len(),
            });
        }
        for len in [zhat.len(), qz.len()] {
            if len != m * k {
                return Err(Error::DimensionMismatch {
                    expected: m * k,
                    got: len,
                });
            }
        }
        if qz.iter().any(|&q| !(q >= 0.0)) {
            return Err(Error::InvalidConfig("q^z must be nonnegative".into()));
        }
        let u = (0..m * k)
            .map(|i| {
                let gm = g[i / k.max(1)];
                Complex64::from_polar((-gm * gm * qz[i] / 2.0).exp(), gm * zhat[i])
            })
            .collect();
        Ok(Self {
            zhat,
            qz,
            y,
            g,
            k,
            u,
        })
    }

    pub fn rows(&self) -> usize {
        self.y.len()
    }
}

fn check_shapes(alpha: &[f64], tau: &[f64], ws: &EmWorkspace) -> Result<()> {
    if alpha.len() != ws.k || tau.len() != ws.k {
        return Err(Error::DimensionMismatch {
            expected: ws.k,
            got: alpha.len().min(tau.len()),
        });
    }
    if alpha.iter().any(|&a| !(a >= 0.0)) || tau.iter().any(|&t| !(t >= 0.0)) {
        return Err(Error::InvalidHyperparams(
            "alpha and tau must be nonnegative".into(),
        ));
    }
    Ok(())
}

fn check_params(alpha: &[f64], tau: &[f64], ws: &EmWorkspace) -> Result<()> {
    check_shapes(alpha, tau, ws)?;
    let total: f64 = alpha.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidHyperparams(
            "alpha must lie on the simplex".into(),
        ));
    }
    Ok(())
}

/// Objective and gradient accumulated over rows `range`.
fn accumulate(
    alpha: &[f64],
    tau: &[f64],
    ws: &EmWorkspace,
    rows: std::ops::Range<usize>,
    with_grad: bool,
) -> (f64, Vec<f64>, Vec<f64>) {
    let k = ws.k;
    let mut obj = 0.0;
    let mut ga = vec![0.0; if with_grad { k } else { 0 }];
    let mut gt = vec![0.0; if with_grad { k } else { 0 }];
    let mut u = vec![Complex64::new(0.0, 0.0); k];
    let mut damp = vec![0.0; k];
    for m in rows {
        let g = ws.g[m];
        let g2 = g * g;
        let urow = &ws.u[m * k..(m + 1) * k];
        let mut s = Complex64::new(0.0, 0.0);
        let mut spread = 0.0;
        for j in 0..k {
            u[j] = urow[j];
            damp[j] = (-g2 * tau[j] / 2.0).exp();
            let beta = alpha[j] * damp[j];
            s += u[j] * beta;
            spread += beta * beta * (1.0 - u[j].norm_sqr());
        }
        let resid = ws.y[m] - s;
        obj -= resid.norm_sqr() + spread;
        if with_grad {
            for j in 0..k {
                let beta = alpha[j] * damp[j];
                let d_beta = 2.0 * (resid.conj() * u[j]).re - 2.0 * beta * (1.0 - u[j].norm_sqr());
                ga[j] += d_beta * damp[j];
                gt[j] -= d_beta * beta * g2 / 2.0;
            }
        }
    }
    (obj, ga, gt)
}

fn reduce(
    alpha: &[f64],
    tau: &[f64],
    ws: &EmWorkspace,
    with_grad: bool,
) -> (f64, Vec<f64>, Vec<f64>) {
    let m = ws.rows();
    let chunks: Vec<_> = (0..m.div_ceil(ROWS_PER_CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * ROWS_PER_CHUNK;
            accumulate(alpha, tau, ws, lo..(lo + ROWS_PER_CHUNK).min(m), with_grad)
        })
        .collect();
    tree_reduce(chunks).unwrap_or_else(|| (0.0, vec![0.0; ws.k], vec![0.0; ws.k]))
}

fn tree_reduce(mut level: Vec<(f64, Vec<f64>, Vec<f64>)>) -> Option<(f64, Vec<f64>, Vec<f64>)> {
    while level.len() > 1 {
        let mut next = Vec::with_capacity(level.len().div_ceil(2));
        let mut it = level.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.0 += b.0;
                a.1.iter_mut().zip(b.1).for_each(|(x, y)| *x += y);
                a.2.iter_mut().zip(b.2).for_each(|(x, y)| *x += y);
            }
            next.push(a);
        }
        level = next;
    }
    level.pop()
}

/// EM surrogate `J(alpha, tau)`, evaluated in closed form. Defined for any
/// nonnegative `alpha`; only [`update_hyperparams`] restricts it to the simplex.
pub fn em_objective(alpha: &[f64], tau: &[f64], ws: &EmWorkspace) -> Result<f64> {
    check_shapes(alpha, tau, ws)?;
    Ok(reduce(alpha, tau, ws, false).0)
}

/// Analytic gradient `(dJ/dalpha, dJ/dtau)`.
pub fn em_gradient(alpha: &[f64], tau: &[f64], ws: &EmWorkspace) -> Result<(Vec<f64>, Vec<f64>)> {
    check_shapes(alpha, tau, ws)?;
    let (_, ga, gt) = reduce(alpha, tau, ws, true);
    Ok((ga, gt))
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if s - t > 0.0 {
            theta = t;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|&x| (x - theta).max(0.0)).collect();
    // Absorb rounding so the weights sum to one.
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        out.iter_mut().for_each(|x| *x /= total);
    }
    out
}

/// Optional moments of `C` for the `nu` update: `c_hat` (`N x K`, any order)
/// and the per-cluster posterior variance `q^c`.
#[derive(Debug, Clone, Copy)]
pub struct InputMoments<'a> {
    pub chat: &'a [f64],
    pub qc: &'a [f64],
}

/// Result of [`update_hyperparams`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmUpdate {
    pub alpha: Vec<f64>,
    pub tau: Vec<f64>,
    pub nu: f64,
    pub objective_before: f64,
    pub objective_after: f64,
    /// Accepted ascent steps.
    pub steps: usize,
    /// Objective after each accepted step.
    pub history: Vec<f64>,
}

/// Projected-gradient ascent on `J` with Armijo backtracking, followed by the
/// Gaussian-prior `nu` update when `input` is given.
pub fn update_hyperparams(
    alpha: &[f64],
    tau: &[f64],
    nu: f64,
    ws: &EmWorkspace,
    input: Option<InputMoments<'_>>,
) -> Result<EmUpdate> {
    check_params(alpha, tau, ws)?;
    let mut a = alpha.to_vec();
    let mut t = tau.to_vec();
    let (mut obj, mut ga, mut gt) = reduce(&a, &t, ws, true);
    let start = obj;
    let mut steps = 0;
    let mut history = Vec::new();
    // Each search starts from twice the last accepted step.
    let mut trial_step = 1.0;
    for _ in 0..MAX_INNER_STEPS {
        let mut accepted = None;
        let mut step = trial_step;
        for _ in 0..MAX_HALVINGS {
            let a_try = project_simplex(
                &a.iter()
                    .zip(&ga)
                    .map(|(x, d)| x + step * d)
                    .collect::<Vec<_>>(),
            );
            let t_try: Vec<f64> = t
                .iter()
                .zip(&gt)
                .map(|(x, d)| (x + step * d).max(0.0))
                .collect();
            let slope: f64 = a_try
                .iter()
                .zip(&a)
                .zip(&ga)
                .map(|((n, o), d)| (n - o) * d)
                .chain(t_try.iter().zip(&t).zip(&gt).map(|((n, o), d)| (n - o) * d))
                .sum();
            if !(slope > 0.0) {
                break;
            }
            let (obj_try, ga_try, gt_try) = reduce(&a_try, &t_try, ws, true);
            if obj_try > obj && obj_try >= obj + ARMIJO * slope {
                accepted = Some((a_try, t_try, obj_try, ga_try, gt_try));
                trial_step = 2.0 * step;
                break;
            }
            step *= 0.5;
        }
        let Some((a_new, t_new, obj_new, ga_new, gt_new)) = accepted else {
            break;
        };
        let gain = obj_new - obj;
        a = a_new;
        t = t_new;
        obj = obj_new;
        ga = ga_new;
        gt = gt_new;
        steps += 1;
        history.push(obj);
        if gain < MIN_IMPROVEMENT {
            break;
        }
    }
    let nu = match input {
        Some(im) if !im.chat.is_empty() && !im.qc.is_empty() => {
            let kk = im.qc.len();
            let rows = im.chat.len() / kk;
            let second: f64 = im.chat.iter().map(|c| c * c).sum::<f64>()
                + rows as f64 * im.qc.iter().sum::<f64>();
            let v = second / im.chat.len() as f64;
            if v > 0.0 && v.is_finite() {
                v
            } else {
                nu
            }
        }
        _ => nu,
    };
    Ok(EmUpdate {
        alpha: a,
        tau: t,
        nu,
        objective_before: start,
        objective_after: obj,
        steps,
        history,
    })
}
