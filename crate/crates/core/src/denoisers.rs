//! Output and input denoisers of the CL-AMP iteration.
//!
//! The output denoiser approximates the posterior moments of `z_m` under the
//! sketch likelihood. For each cluster `k` the other components are replaced
//! by a Gaussian interference term, which turns the likelihood of the phase
//! `theta_k = g z_k` into a generalized von Mises (GvM) density. Combined with
//! the Gaussian pseudo-prior, the phase posterior is
//! `exp(kappa cos(t - zeta) + kappa2 cos 2(t - zeta2) - (t - g p)^2 / (2 g^2 q))`,
//! whose mode and curvature give Laplace estimates of the mean and variance.
//!
//! The input denoiser is the Gaussian prior `N(0, nu)` fused with the
//! pseudo-measurement `r = c + N(0, q^r)`.

use std::f64::consts::PI;
use std::ops::AddAssign;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::types::GmmHyperparams;

/// Added to the diagonal of `Sigma_k` before it is inverted.
pub const SIGMA_REGULARIZATION: f64 = 1e-10;
/// Lower clamp on posterior variances.
pub const Q_MIN: f64 = 1e-12;
/// Largest posterior-to-prior variance ratio the floor may impose.
pub const FLOOR_PRIOR_RATIO: f64 = 1e-3;
/// Posterior variances are clamped to this multiple of the prior variance.
pub const VARIANCE_CAP_FACTOR: f64 = 10.0;
/// Components with `beta_k` below this are invisible in the measurement.
pub const BETA_MIN: f64 = 1e-300;
/// Iteration cap of the root search per bracketed stationary point.
pub const BISECTION_STEPS: usize = 60;
const MIN_GRID_POINTS: usize = 64;
const MAX_GRID_STEP: f64 = PI / 32.0;

/// Gaussian pseudo-prior `z ~ N(mean, Diag(variance))` on one row of `Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoPriorZ {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl PseudoPriorZ {
    pub fn new(mean: Vec<f64>, variance: Vec<f64>) -> Result<Self> {
        if mean.len() != variance.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: variance.len(),
            });
        }
        if variance.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "pseudo-prior variances must be positive and finite".into(),
            ));
        }
        Ok(Self { mean, variance })
    }
}

/// Gaussian approximation of the interference from the other clusters on
/// `[Re y, Im y]`, plus the amplitude `beta_k` of cluster `k` itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterferenceMoments {
    pub mu: [f64; 2],
    pub sigma: [[f64; 2]; 2],
    pub beta: f64,
}

/// Standardized quantities the GvM parameters are built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardized {
    /// `(Re y - mu_1) / beta`
    pub nu: f64,
    /// `(Im y - mu_2) / beta`
    pub nu_bar: f64,
    pub sigma: f64,
    pub sigma_bar: f64,
    pub rho: f64,
}

/// GvM density `exp(kappa1 cos(t - zeta1) + kappa2 cos 2(t - zeta2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GvmParams {
    pub kappa1: f64,
    pub zeta1: f64,
    pub kappa2: f64,
    pub zeta2: f64,
    pub standardized: Standardized,
}

impl GvmParams {
    /// GvM with no standardized record, e.g. for tests of the phase posterior.
    pub fn from_polar(kappa1: f64, zeta1: f64, kappa2: f64, zeta2: f64) -> Self {
        Self {
            kappa1,
            zeta1,
            kappa2,
            zeta2,
            standardized: Standardized {
                nu: 0.0,
                nu_bar: 0.0,
                sigma: 1.0,
                sigma_bar: 1.0,
                rho: 0.0,
            },
        }
    }

    /// Unnormalized log-density.
    pub fn log_density(&self, theta: f64) -> f64 {
        self.kappa1 * (theta - self.zeta1).cos() + self.kappa2 * (2.0 * (theta - self.zeta2)).cos()
    }

    pub fn d_log_density(&self, theta: f64) -> f64 {
        -self.kappa1 * (theta - self.zeta1).sin()
            - 2.0 * self.kappa2 * (2.0 * (theta - self.zeta2)).sin()
    }

    pub fn d2_log_density(&self, theta: f64) -> f64 {
        -self.kappa1 * (theta - self.zeta1).cos()
            - 4.0 * self.kappa2 * (2.0 * (theta - self.zeta2)).cos()
    }

    fn is_flat(&self) -> bool {
        self.kappa1 == 0.0 && self.kappa2 == 0.0
    }
}

/// Log-posterior of the phase (up to a constant) under a GvM likelihood and a
/// Gaussian prior `N(prior_mean, prior_var)`.
#[derive(Debug, Clone, Copy)]
pub struct PhasePosterior<'a> {
    pub gvm: &'a GvmParams,
    pub prior_mean: f64,
    pub prior_var: f64,
}

impl PhasePosterior<'_> {
    pub fn log_density(&self, theta: f64) -> f64 {
        let d = theta - self.prior_mean;
        self.gvm.log_density(theta) - d * d / (2.0 * self.prior_var)
    }

    pub fn derivative(&self, theta: f64) -> f64 {
        self.gvm.d_log_density(theta) - (theta - self.prior_mean) / self.prior_var
    }

    pub fn curvature(&self, theta: f64) -> f64 {
        self.gvm.d2_log_density(theta) - 1.0 / self.prior_var
    }
}

/// Counters of the documented numerical fallbacks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DenoiserStats {
    /// `theta_map` found no bracketed maximum and returned the prior mean.
    pub fallbacks: usize,
    /// Laplace variance was clamped (non-negative curvature or out of range).
    pub clamps: usize,
    /// Components skipped because `beta_k` underflowed or the result was non-finite.
    pub negligible: usize,
}

impl AddAssign for DenoiserStats {
    fn add_assign(&mut self, rhs: Self) {
        self.fallbacks += rhs.fallbacks;
        self.clamps += rhs.clamps;
        self.negligible += rhs.negligible;
    }
}

struct InterferenceTerm {
    mu: [f64; 2],
    sigma: [f64; 3],
}

fn interference_term(alpha: f64, tau: f64, p: f64, q: f64, g: f64) -> InterferenceTerm {
    let g2 = g * g;
    let amp = alpha * (-g2 * (tau + q) / 2.0).exp();
    let (sp, cp) = (g * p).sin_cos();
    let beta = alpha * (-g2 * tau / 2.0).exp();
    let e = (-g2 * q).exp();
    let coef = 0.5 * beta * beta * -(-g2 * q).exp_m1();
    let (s2, c2) = (2.0 * g * p).sin_cos();
    InterferenceTerm {
        mu: [amp * cp, amp * sp],
        sigma: [coef * (1.0 - e * c2), -coef * e * s2, coef * (1.0 + e * c2)],
    }
}

fn check_k(pseudo: &PseudoPriorZ, hyper: &GmmHyperparams) -> Result<()> {
    if pseudo.mean.len() != hyper.k() {
        return Err(Error::DimensionMismatch {
            expected: hyper.k(),
            got: pseudo.mean.len(),
        });
    }
    Ok(())
}

/// Interference moments for cluster `k` (0-based): mean and covariance of
/// `sum_{l != k} beta_l (cos theta_l, sin theta_l)` with
/// `theta_l ~ N(g p_l, g^2 q_l)`, and `beta_k = alpha_k exp(-g^2 tau_k / 2)`.
pub fn interference_moments(
    k: usize,
    pseudo: &PseudoPriorZ,
    hyper: &GmmHyperparams,
    g: f64,
) -> Result<InterferenceMoments> {
    check_k(pseudo, hyper)?;
    if k >= hyper.k() {
        return Err(Error::InvalidConfig(format!(
            "cluster index {k} out of range for K={}",
            hyper.k()
        )));
    }
    let mut mu = [0.0; 2];
    let mut sigma = [0.0; 3];
    for l in (0..hyper.k()).filter(|&l| l != k) {
        let t = interference_term(
            hyper.alpha[l],
            hyper.tau[l],
            pseudo.mean[l],
            pseudo.variance[l],
            g,
        );
        mu[0] += t.mu[0];
        mu[1] += t.mu[1];
        sigma.iter_mut().zip(t.sigma).for_each(|(a, b)| *a += b);
    }
    Ok(InterferenceMoments {
        mu,
        sigma: [[sigma[0], sigma[1]], [sigma[1], sigma[2]]],
        beta: hyper.alpha[k] * (-g * g * hyper.tau[k] / 2.0).exp(),
    })
}

/// [`interference_moments`] for every `k` in `O(K)` using prefix and suffix sums.
pub fn interference_moments_all(
    pseudo: &PseudoPriorZ,
    hyper: &GmmHyperparams,
    g: f64,
) -> Result<Vec<InterferenceMoments>> {
    check_k(pseudo, hyper)?;
    let kk = hyper.k();
    let terms: Vec<InterferenceTerm> = (0..kk)
        .map(|l| {
            interference_term(
                hyper.alpha[l],
                hyper.tau[l],
                pseudo.mean[l],
                pseudo.variance[l],
                g,
            )
        })
        .collect();
    let add = |a: [f64; 5], t: &InterferenceTerm| {
        [
            a[0] + t.mu[0],
            a[1] + t.mu[1],
            a[2] + t.sigma[0],
            a[3] + t.sigma[1],
            a[4] + t.sigma[2],
        ]
    };
    let mut prefix = vec![[0.0; 5]; kk + 1];
    for l in 0..kk {
        prefix[l + 1] = add(prefix[l], &terms[l]);
    }
    let mut suffix = vec![[0.0; 5]; kk + 1];
    for l in (0..kk).rev() {
        suffix[l] = add(suffix[l + 1], &terms[l]);
    }
    Ok((0..kk)
        .map(|k| {
            let s: Vec<f64> = prefix[k]
                .iter()
                .zip(&suffix[k + 1])
                .map(|(a, b)| a + b)
                .collect();
            InterferenceMoments {
                mu: [s[0], s[1]],
                sigma: [[s[2], s[3]], [s[3], s[4]]],
                beta: hyper.alpha[k] * (-g * g * hyper.tau[k] / 2.0).exp(),
            }
        })
        .collect())
}

fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w >= 2.0 * PI {
        0.0
    } else {
        w
    }
}

/// GvM parameters of the phase likelihood `N((cos t, sin t); (y - mu)/beta, Sigma/beta^2)`.
pub fn gvm_params(y: Complex64, im: &InterferenceMoments) -> Result<GvmParams> {
    let beta = im.beta;
    if !(beta >= BETA_MIN) {
        return Err(Error::NegligibleComponent(beta));
    }
    let inv_b2 = 1.0 / (beta * beta);
    let s11 = (im.sigma[0][0] + SIGMA_REGULARIZATION) * inv_b2;
    let s22 = (im.sigma[1][1] + SIGMA_REGULARIZATION) * inv_b2;
    let s12 = 0.5 * (im.sigma[0][1] + im.sigma[1][0]) * inv_b2;
    let det = s11 * s22 - s12 * s12;
    if !(det > 0.0) || !det.is_finite() {
        return Err(Error::NonFinite(format!(
            "interference covariance is not invertible (det = {det:e})"
        )));
    }
    // Precision matrix of the standardized Gaussian.
    let (p11, p22, p12) = (s22 / det, s11 / det, -s12 / det);
    let nu = (y.re - im.mu[0]) / beta;
    let nu_bar = (y.im - im.mu[1]) / beta;
    let a = p11 * nu + p12 * nu_bar;
    let b = p12 * nu + p22 * nu_bar;
    let c = -(p11 - p22) / 4.0;
    let d = -p12 / 2.0;
    let sigma = s11.sqrt();
    let sigma_bar = s22.sqrt();
    let params = GvmParams {
        kappa1: a.hypot(b),
        zeta1: wrap_angle(b.atan2(a)),
        kappa2: c.hypot(d),
        zeta2: wrap_angle(d.atan2(c) / 2.0),
        standardized: Standardized {
            nu,
            nu_bar,
            sigma,
            sigma_bar,
            rho: s12 / (sigma * sigma_bar),
        },
    };
    if !(params.kappa1.is_finite() && params.kappa2.is_finite()) {
        return Err(Error::NonFinite("GvM concentration".into()));
    }
    Ok(params)
}

/// Result of [`theta_map`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaMap {
    pub theta: f64,
    /// No maximum was bracketed and `theta` is the prior mean.
    pub fallback: bool,
}

/// Mode of the phase posterior under a GvM likelihood and the Gaussian prior
/// `N(prior_mean, prior_var)`.
///
/// The derivative is scanned on a uniform grid around the prior mean, every
/// `+ -> -` sign change is refined by bisection, and the refined root with
/// the largest posterior wins. The likelihood is `2 pi`-periodic, so the
/// global mode lies within `pi` of the prior mean and the window never needs
/// to extend past `prior_mean +/- 2 pi`.
pub fn theta_map(gvm: &GvmParams, prior_mean: f64, prior_var: f64) -> Result<ThetaMap> {
    if !(prior_var > 0.0) || !prior_var.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "prior variance must be positive, got {prior_var}"
        )));
    }
    if gvm.is_flat() {
        return Ok(ThetaMap {
            theta: prior_mean,
            fallback: false,
        });
    }
    let post = PhasePosterior {
        gvm,
        prior_mean,
        prior_var,
    };
    let half_width = PI + (4.0 * prior_var.sqrt()).min(PI);
    let points = ((2.0 * half_width / MAX_GRID_STEP).ceil() as usize + 1).max(MIN_GRID_POINTS);
    let lo = prior_mean - half_width;
    let step = 2.0 * half_width / (points - 1) as f64;

    let mut best: Option<(f64, f64)> = None;
    let mut consider = |theta: f64| {
        let v = post.log_density(theta);
        if best.is_none_or(|(_, bv)| v > bv) {
            best = Some((theta, v));
        }
    };
    let mut prev_x = lo;
    let mut prev_f = post.derivative(lo);
    for i in 1..points {
        let x = lo + step * i as f64;
        let f = post.derivative(x);
        if prev_f == 0.0 && post.curvature(prev_x) < 0.0 {
            consider(prev_x);
        } else if prev_f > 0.0 && f < 0.0 {
            consider(bisect(&post, prev_x, x));
        }
        prev_x = x;
        prev_f = f;
    }
    Ok(match best {
        Some((theta, _)) => ThetaMap {
            theta,
            fallback: false,
        },
        None => ThetaMap {
            theta: prior_mean,
            fallback: true,
        },
    })
}

fn bisect(post: &PhasePosterior<'_>, mut a: f64, mut b: f64) -> f64 {
    // Safeguarded Newton: keep the bracket `f(a) > 0 > f(b)` and fall back to
    // bisection whenever the Newton step leaves it.
    let mut x = 0.5 * (a + b);
    for _ in 0..BISECTION_STEPS {
        let f = post.derivative(x);
        if f > 0.0 {
            a = x;
        } else if f < 0.0 {
            b = x;
        } else {
            return x;
        }
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let slope = post.curvature(x);
        let newton = x - f / slope;
        let next = if slope < 0.0 && newton > a && newton < b {
            newton
        } else {
            mid
        };
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
            return next;
        }
        x = next;
    }
    // Return whichever endpoint has the smaller derivative magnitude.
    if post.derivative(a).abs() <= post.derivative(b).abs() {
        a
    } else {
        b
    }
}

// `Q_MIN`, kept strictly below the prior variance. A posterior variance equal
// to the prior one would make `q^s` vanish in the engine.
fn variance_floor(q_p: f64) -> f64 {
    Q_MIN.min(FLOOR_PRIOR_RATIO * q_p)
}

/// Laplace estimate of one cluster's `(z_hat, q^z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceMoments {
    pub mean: f64,
    pub variance: f64,
    pub fallback: bool,
    pub clamped: bool,
}

/// Posterior mean and variance of `z_k = theta_k / g` from the mode and
/// curvature of the phase posterior. `p_hat` and `q_p` are the pseudo-prior
/// moments of `z_k` (so the phase prior is `N(g p_hat, g^2 q_p)`).
pub fn laplace_moments(gvm: &GvmParams, p_hat: f64, q_p: f64, g: f64) -> Result<LaplaceMoments> {
    if !(g > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "radius must be positive, got {g}"
        )));
    }
    if gvm.is_flat() {
        return Ok(LaplaceMoments {
            mean: p_hat,
            variance: q_p,
            fallback: false,
            clamped: false,
        });
    }
    let prior_mean = g * p_hat;
    let prior_var = g * g * q_p;
    let map = theta_map(gvm, prior_mean, prior_var)?;
    let post = PhasePosterior {
        gvm,
        prior_mean,
        prior_var,
    };
    let precision = -post.curvature(map.theta);
    let upper = VARIANCE_CAP_FACTOR * q_p;
    let lower = variance_floor(q_p);
    let (variance, clamped) = if precision > 0.0 {
        let v = 1.0 / (precision * g * g);
        if v < lower {
            (lower, true)
        } else if v > upper {
            (upper, true)
        } else {
            (v, false)
        }
    } else {
        (lower, true)
    };
    Ok(LaplaceMoments {
        mean: map.theta / g,
        variance,
        fallback: map.fallback,
        clamped,
    })
}

/// Posterior moments of one row `z_m` of `Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMomentsZ {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Single-cluster case: `y = beta exp(j theta)` pins the phase modulo `2 pi`.
///
/// The estimate is the branch `arg y + 2 pi n` nearest the prior mean; the
/// variance is the prior-weighted spread of the other branches around it.
fn phase_constraint_moments(
    y: Complex64,
    mu: [f64; 2],
    p_hat: f64,
    q_p: f64,
    g: f64,
) -> (f64, f64) {
    let v = Complex64::new(y.re - mu[0], y.im - mu[1]);
    if v.norm() == 0.0 {
        return (p_hat, q_p);
    }
    let phi = v.arg();
    let prior_mean = g * p_hat;
    let prior_var = g * g * q_p;
    let two_pi = 2.0 * PI;
    let center = ((prior_mean - phi) / two_pi).round();
    let theta = phi + two_pi * center;
    let span = ((6.0 * prior_var.sqrt() / two_pi).ceil() as i64 + 1).min(10_000);
    let (mut wsum, mut spread) = (0.0, 0.0);
    for j in -span..=span {
        let t = theta + two_pi * j as f64;
        let d = t - prior_mean;
        let w = (-d * d / (2.0 * prior_var)).exp();
        wsum += w;
        spread += w * (t - theta) * (t - theta);
    }
    let var_theta = if wsum > 0.0 { spread / wsum } else { 0.0 };
    let variance = (var_theta / (g * g)).clamp(variance_floor(q_p), VARIANCE_CAP_FACTOR * q_p);
    (theta / g, variance)
}

/// Output denoiser: approximate posterior moments of `z_m` given `y_m`, the
/// pseudo-prior and the frequency radius `g`. Each cluster is handled
/// independently; numerical trouble for one cluster returns its prior moments.
pub fn denoise_z(
    y: Complex64,
    pseudo: &PseudoPriorZ,
    hyper: &GmmHyperparams,
    g: f64,
) -> Result<(PosteriorMomentsZ, DenoiserStats)> {
    let ims = interference_moments_all(pseudo, hyper, g)?;
    let kk = hyper.k();
    let mut stats = DenoiserStats::default();
    let mut mean = pseudo.mean.clone();
    let mut variance = pseudo.variance.clone();
    for k in 0..kk {
        let (p, q) = (pseudo.mean[k], pseudo.variance[k]);
        if !(ims[k].beta >= BETA_MIN) {
            stats.negligible += 1;
            continue;
        }
        let (zk, qk) = if kk == 1 {
            phase_constraint_moments(y, ims[k].mu, p, q, g)
        } else {
            let lm = match gvm_params(y, &ims[k]).and_then(|gvm| laplace_moments(&gvm, p, q, g)) {
                Ok(lm) => lm,
                Err(_) => {
                    stats.negligible += 1;
                    continue;
                }
            };
            stats.fallbacks += usize::from(lm.fallback);
            stats.clamps += usize::from(lm.clamped);
            (lm.mean, lm.variance)
        };
        if zk.is_finite() && qk.is_finite() && qk > 0.0 {
            mean[k] = zk;
            variance[k] = qk;
        } else {
            stats.negligible += 1;
        }
    }
    Ok((PosteriorMomentsZ { mean, variance }, stats))
}

/// Posterior moments of one row `c_n` of `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMomentsC {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Input denoiser: `N(0, nu)` prior fused with `r = c + N(0, Diag(q_r))`.
/// `nu = f64::INFINITY` is the flat prior, for which the output equals the input.
pub fn denoise_c(r_hat: &[f64], q_r: &[f64], nu: f64) -> Result<PosteriorMomentsC> {
    if r_hat.len() != q_r.len() {
        return Err(Error::DimensionMismatch {
            expected: q_r.len(),
            got: r_hat.len(),
        });
    }
    if q_r.iter().any(|&q| !(q > 0.0)) || !(nu > 0.0) {
        return Err(Error::InvalidConfig(
            "input denoiser variances must be positive".into(),
        ));
    }
    if nu == f64::INFINITY {
        return Ok(PosteriorMomentsC {
            mean: r_hat.to_vec(),
            variance: q_r.to_vec(),
        });
    }
    let variance: Vec<f64> = q_r.iter().map(|&q| 1.0 / (1.0 / nu + 1.0 / q)).collect();
    let mean = r_hat
        .iter()
        .zip(q_r.iter().zip(&variance))
        .map(|(&r, (&q, &v))| v / q * r)
        .collect();
    Ok(PosteriorMomentsC { mean, variance })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper(alpha: Vec<f64>, tau: Vec<f64>) -> GmmHyperparams {
        GmmHyperparams::new(alpha, tau, f64::INFINITY).unwrap()
    }

    #[test]
    fn single_cluster_has_no_interference() {
        let pseudo = PseudoPriorZ::new(vec![0.4], vec![0.3]).unwrap();
        let h = hyper(vec![1.0], vec![0.8]);
        let im = interference_moments(0, &pseudo, &h, 1.5).unwrap();
        assert_eq!(im.mu, [0.0, 0.0]);
        assert_eq!(im.sigma, [[0.0, 0.0], [0.0, 0.0]]);
        assert!((im.beta - (-1.5f64 * 1.5 * 0.8 / 2.0).exp()).abs() < 1e-15);
    }

    #[test]
    fn zero_tau_gives_beta_alpha() {
        let pseudo = PseudoPriorZ::new(vec![0.4, -1.0], vec![0.3, 0.2]).unwrap();
        let h = hyper(vec![0.3, 0.7], vec![0.0, 2.0]);
        let im = interference_moments(0, &pseudo, &h, 2.0).unwrap();
        assert_eq!(im.beta, 0.3);
    }

    #[test]
    fn all_k_matches_single_k() {
        let pseudo =
            PseudoPriorZ::new(vec![0.4, -1.0, 2.2, 0.1], vec![0.3, 0.2, 1.1, 0.05]).unwrap();
        let h = hyper(vec![0.1, 0.2, 0.3, 0.4], vec![0.5, 1.0, 0.1, 0.0]);
        let all = interference_moments_all(&pseudo, &h, 0.9).unwrap();
        for (k, im) in all.iter().enumerate() {
            let single = interference_moments(k, &pseudo, &h, 0.9).unwrap();
            assert!((im.mu[0] - single.mu[0]).abs() < 1e-14);
            assert!((im.mu[1] - single.mu[1]).abs() < 1e-14);
            for i in 0..2 {
                for j in 0..2 {
                    assert!((im.sigma[i][j] - single.sigma[i][j]).abs() < 1e-14);
                }
            }
            let eig_min = {
                let (a, b, d) = (im.sigma[0][0], im.sigma[0][1], im.sigma[1][1]);
                0.5 * (a + d) - (0.25 * (a - d) * (a - d) + b * b).sqrt()
            };
            assert!(eig_min >= -1e-12);
            assert!(im.beta <= h.alpha[k]);
        }
    }

    fn im_with(sigma11: f64, sigma22: f64, y: Complex64) -> (Complex64, InterferenceMoments) {
        (
            y,
            InterferenceMoments {
                mu: [0.0, 0.0],
                sigma: [
                    [sigma11 - SIGMA_REGULARIZATION, 0.0],
                    [0.0, sigma22 - SIGMA_REGULARIZATION],
                ],
                beta: 1.0,
            },
        )
    }

    #[test]
    fn isotropic_interference_has_no_second_harmonic() {
        let (y, im) = im_with(0.5, 0.5, Complex64::new(0.3, -0.2));
        let gvm = gvm_params(y, &im).unwrap();
        assert!(gvm.kappa2.abs() < 1e-12);
    }

    #[test]
    fn unit_standardized_case() {
        let (y, im) = im_with(1.0, 1.0, Complex64::new(1.0, 0.0));
        let gvm = gvm_params(y, &im).unwrap();
        assert!((gvm.kappa1 - 1.0).abs() < 1e-12);
        assert!(gvm.zeta1.abs() < 1e-12);
        assert!((gvm.standardized.rho).abs() < 1e-15);
    }

    #[test]
    fn negligible_beta_is_an_error() {
        let im = InterferenceMoments {
            mu: [0.0, 0.0],
            sigma: [[1.0, 0.0], [0.0, 1.0]],
            beta: 1e-310,
        };
        assert!(matches!(
            gvm_params(Complex64::new(0.1, 0.0), &im),
            Err(Error::NegligibleComponent(_))
        ));
    }

    #[test]
    fn flat_gvm_returns_prior_mean() {
        let gvm = GvmParams::from_polar(0.0, 0.0, 0.0, 0.0);
        let m = theta_map(&gvm, 1.234, 0.5).unwrap();
        assert_eq!(m.theta, 1.234);
        let lm = laplace_moments(&gvm, 0.7, 0.4, 1.3).unwrap();
        assert_eq!((lm.mean, lm.variance), (0.7, 0.4));
    }

    #[test]
    fn shared_maximizer() {
        let gvm = GvmParams::from_polar(3.0, 0.8, 0.0, 0.0);
        let m = theta_map(&gvm, 0.8, 2.0).unwrap();
        assert!((m.theta - 0.8).abs() < 1e-12);
    }

    #[test]
    fn peaked_likelihood_curvature() {
        let (kappa, g, q) = (500.0, 1.7, 0.3);
        let p = 0.25;
        let gvm = GvmParams::from_polar(kappa, g * p, 0.0, 0.0);
        let lm = laplace_moments(&gvm, p, q, g).unwrap();
        let expected = 1.0 / (g * g * kappa + 1.0 / q);
        assert!((lm.mean - p).abs() < 1e-12);
        assert!((lm.variance / expected - 1.0).abs() < 1e-9);
    }

    #[test]
    fn theta_map_rejects_bad_variance() {
        let gvm = GvmParams::from_polar(1.0, 0.0, 0.0, 0.0);
        assert!(theta_map(&gvm, 0.0, 0.0).is_err());
    }

    #[test]
    fn single_cluster_exact_phase() {
        let g = 2.0;
        let p_true: f64 = 0.9;
        let y = Complex64::from_polar(1.0, g * p_true);
        let pseudo = PseudoPriorZ::new(vec![0.6], vec![0.05]).unwrap();
        let h = hyper(vec![1.0], vec![0.0]);
        let (post, _) = denoise_z(y, &pseudo, &h, g).unwrap();
        assert!((post.mean[0] - p_true).abs() < 1e-12);
    }

    #[test]
    fn tiny_prior_variance_returns_prior() {
        let pseudo = PseudoPriorZ::new(vec![0.3, -0.4], vec![1e-14, 1e-14]).unwrap();
        let h = hyper(vec![0.5, 0.5], vec![0.5, 0.5]);
        let (post, _) = denoise_z(Complex64::new(0.2, 0.1), &pseudo, &h, 1.0).unwrap();
        for k in 0..2 {
            // The other component is nearly deterministic too, so the likelihood
            // is sharp and may move the mode by about `q_p * kappa`.
            assert!((post.mean[k] - pseudo.mean[k]).abs() < 1e-3, "{post:?}");
            assert!(post.variance[k] <= 1e-13);
        }
    }

    #[test]
    fn denoise_c_flat_prior_is_identity() {
        let r = [0.3, -2.0];
        let q = [0.5, 0.25];
        let post = denoise_c(&r, &q, f64::INFINITY).unwrap();
        assert_eq!(post.mean, r.to_vec());
        assert_eq!(post.variance, q.to_vec());
    }

    #[test]
    fn denoise_c_equal_precisions_halves() {
        let post = denoise_c(&[3.0], &[0.5], 0.5).unwrap();
        assert!((post.mean[0] - 1.5).abs() < 1e-15);
        assert!((post.variance[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn denoise_c_rejects_bad_variances() {
        assert!(denoise_c(&[1.0], &[0.0], 1.0).is_err());
        assert!(denoise_c(&[1.0], &[1.0], 0.0).is_err());
        assert!(denoise_c(&[1.0, 2.0], &[1.0], 1.0).is_err());
    }
}
