//! Independent reference computations for the integration and acceptance
//! tests. Nothing here calls into the library's numerical routines.

#![allow(dead_code)]

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use skcl::types::{Centroids, DataMatrix};

/// Monte-Carlo moments of `sum_{l != k} beta_l (cos theta_l, sin theta_l)`
/// with `theta_l ~ N(g p_l, g^2 q_l)` and `beta_l = alpha_l exp(-g^2 tau_l / 2)`.
pub struct McMoments {
    pub mean: [f64; 2],
    /// `[var_x, cov_xy, var_y]`
    pub cov: [f64; 3],
    pub se_mean: [f64; 2],
    pub se_cov: [f64; 3],
}

#[allow(clippy::too_many_arguments)]
pub fn mc_interference<R: Rng>(
    k: usize,
    p: &[f64],
    q: &[f64],
    alpha: &[f64],
    tau: &[f64],
    g: f64,
    draws: usize,
    rng: &mut R,
) -> McMoments {
    let mut xs = Vec::with_capacity(draws);
    for _ in 0..draws {
        let (mut x, mut y) = (0.0, 0.0);
        for l in (0..p.len()).filter(|&l| l != k) {
            let z: f64 = StandardNormal.sample(rng);
            let theta = g * p[l] + g * q[l].sqrt() * z;
            let beta = alpha[l] * (-g * g * tau[l] / 2.0).exp();
            x += beta * theta.cos();
            y += beta * theta.sin();
        }
        xs.push((x, y));
    }
    let n = draws as f64;
    let mx = xs.iter().map(|v| v.0).sum::<f64>() / n;
    let my = xs.iter().map(|v| v.1).sum::<f64>() / n;
    let prods: Vec<[f64; 3]> = xs
        .iter()
        .map(|&(x, y)| {
            let (dx, dy) = (x - mx, y - my);
            [dx * dx, dx * dy, dy * dy]
        })
        .collect();
    let mut cov = [0.0; 3];
    for p in &prods {
        for i in 0..3 {
            cov[i] += p[i] / n;
        }
    }
    let mut var_cov = [0.0; 3];
    for p in &prods {
        for i in 0..3 {
            var_cov[i] += (p[i] - cov[i]).powi(2) / n;
        }
    }
    McMoments {
        mean: [mx, my],
        cov,
        se_mean: [(cov[0] / n).sqrt(), (cov[2] / n).sqrt()],
        se_cov: var_cov.map(|v| (v / n).sqrt()),
    }
}

/// Log-density (up to a constant) of `(cos t, sin t)` under
/// `N((y - mu) / beta, (Sigma + eps I) / beta^2)`.
pub fn constrained_gaussian_log_density(
    theta: f64,
    y: Complex64,
    mu: [f64; 2],
    sigma: [[f64; 2]; 2],
    beta: f64,
    eps: f64,
) -> f64 {
    let b2 = beta * beta;
    let a = (sigma[0][0] + eps) / b2;
    let d = (sigma[1][1] + eps) / b2;
    let c = sigma[0][1] / b2;
    let det = a * d - c * c;
    let v0 = theta.cos() - (y.re - mu[0]) / beta;
    let v1 = theta.sin() - (y.im - mu[1]) / beta;
    -0.5 * (d * v0 * v0 - 2.0 * c * v0 * v1 + a * v1 * v1) / det
}

/// Mean and variance of the density proportional to `exp(log_f(x))` on
/// `[lo, hi]`, by the trapezoid rule on `points` nodes.
pub fn quadrature_moments(
    log_f: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    points: usize,
) -> (f64, f64) {
    let h = (hi - lo) / (points - 1) as f64;
    let xs: Vec<f64> = (0..points).map(|i| lo + h * i as f64).collect();
    let lf: Vec<f64> = xs.iter().map(|&x| log_f(x)).collect();
    let peak = lf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut w0, mut w1, mut w2) = (0.0, 0.0, 0.0);
    for (i, (&x, &l)) in xs.iter().zip(&lf).enumerate() {
        let edge = if i == 0 || i == points - 1 { 0.5 } else { 1.0 };
        let w = edge * (l - peak).exp();
        w0 += w;
        w1 += w * x;
        w2 += w * x * x;
    }
    let mean = w1 / w0;
    (mean, w2 / w0 - mean * mean)
}

/// Number of strict local maxima of `f` on a grid.
pub fn count_local_maxima(f: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> usize {
    let h = (hi - lo) / (points - 1) as f64;
    let v: Vec<f64> = (0..points).map(|i| f(lo + h * i as f64)).collect();
    v.windows(3).filter(|w| w[1] > w[0] && w[1] > w[2]).count()
}

/// Objective by definition: Monte-Carlo average of
/// `-sum_m |y_m - sum_k beta_mk exp(j g_m z_mk)|^2` over `z ~ N(zhat, qz)`.
#[allow(clippy::too_many_arguments)]
pub fn mc_em_objective<R: Rng>(
    alpha: &[f64],
    tau: &[f64],
    zhat: &[f64],
    qz: &[f64],
    y: &[Complex64],
    g: &[f64],
    draws: usize,
    rng: &mut R,
) -> (f64, f64) {
    let k = alpha.len();
    let mut samples = Vec::with_capacity(draws);
    for _ in 0..draws {
        let mut total = 0.0;
        for m in 0..y.len() {
            let mut s = Complex64::new(0.0, 0.0);
            for j in 0..k {
                let e: f64 = StandardNormal.sample(rng);
                let z = zhat[m * k + j] + qz[m * k + j].sqrt() * e;
                let beta = alpha[j] * (-g[m] * g[m] * tau[j] / 2.0).exp();
                s += Complex64::from_polar(beta, g[m] * z);
            }
            total -= (y[m] - s).norm_sqr();
        }
        samples.push(total);
    }
    let n = draws as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// All permutations of `0..n` (Heap's algorithm).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        heap(k - 1, a, out);
        for i in 0..k - 1 {
            if k.is_multiple_of(2) {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
            heap(k - 1, a, out);
        }
    }
    let mut out = Vec::new();
    heap(n, &mut (0..n).collect(), &mut out);
    out
}

/// Minimum total cost over all permutations.
pub fn brute_force_assignment(cost: &[Vec<f64>]) -> f64 {
    permutations(cost.len())
        .iter()
        .map(|p| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

pub fn naive_sse(data: &DataMatrix, c: &Centroids) -> f64 {
    let mut total = 0.0;
    for t in 0..data.len() {
        let mut best = f64::INFINITY;
        for k in 0..c.count() {
            let mut d = 0.0;
            for n in 0..data.dim() {
                d += (data.sample(t)[n] - c.get(n, k)).powi(2);
            }
            best = best.min(d);
        }
        total += best;
    }
    total
}

/// Euclidean projection onto the simplex by enumerating supports and
/// checking the KKT conditions.
pub fn brute_simplex_projection(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let theta = (support.iter().map(|&i| v[i]).sum::<f64>() - 1.0) / support.len() as f64;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                if mask & (1 << i) != 0 {
                    v[i] - theta
                } else {
                    0.0
                }
            })
            .collect();
        let primal = support.iter().all(|&i| x[i] >= -1e-12);
        let dual = (0..n)
            .filter(|i| mask & (1 << i) == 0)
            .all(|i| v[i] <= theta + 1e-12);
        if primal && dual {
            let d: f64 = x.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum();
            if best.as_ref().is_none_or(|b| d < b.0) {
                best = Some((d, x));
            }
        }
    }
    best.expect("a KKT point always exists").1
}

/// Largest absolute coordinate error between matched centers, minimized over
/// center permutations by enumeration.
pub fn max_center_error(est: &Centroids, truth: &Centroids) -> f64 {
    let k = truth.count();
    let err = |a: usize, b: usize| {
        est.center(a)
            .iter()
            .zip(truth.center(b))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    permutations(k)
        .iter()
        .map(|p| (0..k).map(|i| err(i, p[i])).fold(0.0, f64::max))
        .fold(f64::INFINITY, f64::min)
}

/// `sum_k alpha_k exp(j g z_mk - g^2 tau_k / 2)` evaluated directly from `W C`.
pub fn direct_analytic_sketch(
    rows: &[f64],
    n: usize,
    c: &Centroids,
    alpha: &[f64],
    tau: &[f64],
) -> Vec<Complex64> {
    rows.chunks_exact(n)
        .map(|w| {
            let g2: f64 = w.iter().map(|x| x * x).sum();
            (0..c.count())
                .map(|k| {
                    let phase: f64 = w.iter().zip(c.center(k)).map(|(a, b)| a * b).sum();
                    Complex64::from_polar(alpha[k] * (-g2 * tau[k] / 2.0).exp(), phase)
                })
                .sum()
        })
        .collect()
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
