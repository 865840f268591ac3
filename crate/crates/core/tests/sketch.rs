mod common;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use skcl::sketch::*;
use skcl::synth::{gen_gmm, SynthSpec};
use skcl::types::{Centroids, DataMatrix, GmmHyperparams};
use skcl::Error;

use common::{direct_analytic_sketch, median};

fn gaussian_data(n: usize, t: usize, sd: f64, seed: u64) -> DataMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..n * t)
        .map(|_| sd * Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect();
    DataMatrix::new(n, t, values).unwrap()
}

#[test]
fn directions_are_unit_and_deterministic() {
    for law in [RadiusLaw::Gaussian, RadiusLaw::AdaptedRadius] {
        let f = draw_frequencies(3, 5, law, 1.0, 7).unwrap();
        for m in 0..5 {
            let norm: f64 = f.direction(m).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
            assert!(f.radius(m) > 0.0);
        }
        let again = draw_frequencies(3, 5, law, 1.0, 7).unwrap();
        assert_eq!(f, again);
        assert_eq!(f.reference().regenerate().unwrap(), f);
    }
}

#[test]
fn gaussian_radius_second_moment() {
    // E g^2 = N / scale^2 for w ~ N(0, scale^-2 I).
    let (n, scale) = (2, 1.0);
    let f = draw_frequencies(n, 10_000, RadiusLaw::Gaussian, scale, 3).unwrap();
    let mean_sq = f.radii().iter().map(|g| g * g).sum::<f64>() / 10_000.0;
    assert!(
        (mean_sq / (n as f64 * scale * scale) - 1.0).abs() < 0.05,
        "{mean_sq}"
    );
    let f = draw_frequencies(n, 10_000, RadiusLaw::Gaussian, 2.0, 3).unwrap();
    let mean_sq = f.radii().iter().map(|g| g * g).sum::<f64>() / 10_000.0;
    assert!((mean_sq / 0.5 - 1.0).abs() < 0.05, "{mean_sq}");
}

#[test]
fn scale_estimate() {
    let n = 4;
    let x = gaussian_data(n, 1000, 1.0, 1);
    let s = estimate_scale(&x).unwrap();
    // sqrt(N * per-coordinate variance)
    assert!((s / (n as f64).sqrt() - 1.0).abs() < 0.1, "{s}");
    let s10 = estimate_scale(&x.scaled(10.0).unwrap()).unwrap();
    assert!((s10 / s - 10.0).abs() < 0.1);
    let same = DataMatrix::new(2, 3, vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).unwrap();
    assert!(matches!(estimate_scale(&same), Err(Error::DegenerateScale)));
}

#[test]
fn sketch_of_zeros_is_one() {
    let f = draw_frequencies(3, 20, RadiusLaw::Gaussian, 1.0, 1).unwrap();
    let y = compute_sketch(&DataMatrix::new(3, 4, vec![0.0; 12]).unwrap(), &f).unwrap();
    assert!(y.values.iter().all(|v| *v == Complex64::new(1.0, 0.0)));
}

#[test]
fn symmetric_pair_gives_cosine() {
    let f = FrequencyMatrix::from_parts(
        1,
        vec![1.0],
        vec![std::f64::consts::PI],
        0,
        RadiusLaw::Gaussian,
        1.0,
    )
    .unwrap();
    let y = compute_sketch(&DataMatrix::new(1, 2, vec![1.0, -1.0]).unwrap(), &f).unwrap();
    assert!((y.values[0].re + 1.0).abs() < 1e-15);
    assert!(y.values[0].im.abs() < 1e-15);
}

#[test]
fn single_gaussian_concentration() {
    let (n, t) = (5, 100_000);
    let c = Centroids::new(n, 1, vec![0.5, -1.0, 2.0, 0.0, 1.5]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let values: Vec<f64> = (0..t)
        .flat_map(|_| c.center(0).to_vec())
        .map(|v| v + Distribution::<f64>::sample(&StandardNormal, &mut rng))
        .collect();
    let x = DataMatrix::new(n, t, values).unwrap();
    let f = draw_frequencies(
        n,
        100,
        RadiusLaw::AdaptedRadius,
        estimate_scale(&x).unwrap(),
        4,
    )
    .unwrap();
    let y = compute_sketch(&x, &f).unwrap();
    let truth = direct_analytic_sketch(&f.scaled_rows(), n, &c, &[1.0], &[1.0]);
    let err = y
        .values
        .iter()
        .zip(&truth)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    assert!(err <= 5.0 / (t as f64).sqrt(), "{err}");
}

#[test]
fn error_halves_when_t_quadruples() {
    let (k, n, m) = (2, 4, 100);
    let (mut small, mut large) = (Vec::new(), Vec::new());
    for seed in 0..10 {
        let d = gen_gmm(&SynthSpec {
            test_t: 20_000,
            ..SynthSpec::new(k, n, 5_000, seed)
        })
        .unwrap();
        let f = draw_frequencies(
            n,
            m,
            RadiusLaw::Gaussian,
            estimate_scale(&d.train).unwrap(),
            seed,
        )
        .unwrap();
        let truth = direct_analytic_sketch(&f.scaled_rows(), n, &d.means, &[0.5, 0.5], &[1.0, 1.0]);
        let err = |x: &DataMatrix| {
            compute_sketch(x, &f)
                .unwrap()
                .values
                .iter()
                .zip(&truth)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max)
        };
        small.push(err(&d.train));
        large.push(err(d.test.as_ref().unwrap()));
    }
    let ratio = median(&mut small) / median(&mut large);
    assert!((2.0 / 1.5..=2.0 * 1.5).contains(&ratio), "{ratio}");
}

#[test]
fn chunked_parallel_sequential_agree() {
    let x = gaussian_data(3, 1001, 2.0, 5);
    let f = draw_frequencies(3, 40, RadiusLaw::AdaptedRadius, 3.0, 2).unwrap();
    let base = compute_sketch_chunked(&x, &f, 1001, false).unwrap();
    for (chunk, parallel) in [
        (1, true),
        (7, false),
        (256, true),
        (256, false),
        (5000, true),
    ] {
        let y = compute_sketch_chunked(&x, &f, chunk, parallel).unwrap();
        for (a, b) in y.values.iter().zip(&base.values) {
            assert!((a - b).norm() < 1e-12);
        }
    }
    // Same chunking, different scheduling: bit-identical.
    assert_eq!(
        compute_sketch_chunked(&x, &f, 64, true).unwrap(),
        compute_sketch_chunked(&x, &f, 64, false).unwrap()
    );
}

#[test]
fn merge_examples() {
    let x = gaussian_data(2, 300, 1.0, 8);
    let f = draw_frequencies(2, 30, RadiusLaw::Gaussian, 1.0, 1).unwrap();
    let whole = compute_sketch(&x, &f).unwrap();
    let first: Vec<usize> = (0..120).collect();
    let second: Vec<usize> = (120..300).collect();
    let a = compute_sketch(&x.select(&first).unwrap(), &f).unwrap();
    let b = compute_sketch(&x.select(&second).unwrap(), &f).unwrap();
    let ab = merge_sketches(&a, &b).unwrap();
    let ba = merge_sketches(&b, &a).unwrap();
    assert_eq!(ab.sample_count, 300);
    for ((u, v), w) in ab.values.iter().zip(&ba.values).zip(&whole.values) {
        assert!((u - w).norm() < 1e-12);
        assert!((u - v).norm() < 1e-15);
    }
    let unchanged = merge_sketches(&a, &Sketch::empty(&f)).unwrap();
    assert_eq!(unchanged.values, a.values);
    let other = draw_frequencies(2, 30, RadiusLaw::Gaussian, 1.0, 2).unwrap();
    assert!(matches!(
        merge_sketches(&a, &Sketch::empty(&other)),
        Err(Error::ProvenanceMismatch)
    ));
}

#[test]
fn analytic_sketch_examples() {
    let f = FrequencyMatrix::from_parts(
        2,
        vec![1.0, 0.0, 0.6, 0.8],
        vec![1.0, 1.0],
        0,
        RadiusLaw::Gaussian,
        1.0,
    )
    .unwrap();
    let zero = Centroids::zeros(2, 1).unwrap();
    let h = GmmHyperparams::new(vec![1.0], vec![1.0], f64::INFINITY).unwrap();
    for v in analytic_sketch(&zero, &h, &f).unwrap() {
        assert!((v.re - (-0.5f64).exp()).abs() < 1e-15 && v.im == 0.0);
    }
    let c = Centroids::new(2, 1, vec![0.3, -1.7]).unwrap();
    let h0 = GmmHyperparams::new(vec![1.0], vec![0.0], f64::INFINITY).unwrap();
    for v in analytic_sketch(&c, &h0, &f).unwrap() {
        assert!((v.norm() - 1.0).abs() < 1e-15);
    }
    let pair = Centroids::new(2, 2, vec![0.3, -1.7, -0.3, 1.7]).unwrap();
    let h2 = GmmHyperparams::new(vec![0.5, 0.5], vec![0.0, 0.0], f64::INFINITY).unwrap();
    let y = analytic_sketch(&pair, &h2, &f).unwrap();
    for (m, v) in y.iter().enumerate() {
        let phase: f64 = f
            .direction(m)
            .iter()
            .zip([0.3, -1.7])
            .map(|(w, c)| w * c)
            .sum();
        assert!((v.re - phase.cos()).abs() < 1e-15 && v.im.abs() < 1e-15);
    }
    let big = GmmHyperparams::new(vec![1.0], vec![1e6], f64::INFINITY).unwrap();
    assert!(analytic_sketch(&c, &big, &f)
        .unwrap()
        .iter()
        .all(|v| v.norm() < 1e-300));
}

#[test]
fn analytic_sketch_matches_direct_evaluation() {
    let f = draw_frequencies(4, 50, RadiusLaw::AdaptedRadius, 2.0, 11).unwrap();
    let c = Centroids::new(4, 3, (0..12).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let h = GmmHyperparams::new(vec![0.2, 0.3, 0.5], vec![0.1, 1.0, 0.4], f64::INFINITY).unwrap();
    let direct = direct_analytic_sketch(&f.scaled_rows(), 4, &c, &h.alpha, &h.tau);
    for (a, b) in analytic_sketch(&c, &h, &f).unwrap().iter().zip(&direct) {
        assert!((a - b).norm() < 1e-12);
    }
}

#[test]
fn residual_examples() {
    let f = draw_frequencies(2, 16, RadiusLaw::Gaussian, 1.0, 3).unwrap();
    let c = Centroids::new(2, 1, vec![0.4, 0.1]).unwrap();
    let h = GmmHyperparams::new(vec![1.0], vec![0.5], f64::INFINITY).unwrap();
    let y = Sketch::with_values(&f, analytic_sketch(&c, &h, &f).unwrap(), 0);
    assert!(sketch_residual(&y, &c, &h, &f).unwrap() < 1e-28);
    // Zero sketch, pure phases of modulus a = 1.
    let h0 = GmmHyperparams::new(vec![1.0], vec![0.0], f64::INFINITY).unwrap();
    let zero = Sketch::empty(&f);
    assert!((sketch_residual(&zero, &c, &h0, &f).unwrap() - 16.0).abs() < 1e-12);
}

#[test]
fn planted_residual_beats_coordinate_permutation() {
    let (k, n) = (2, 5);
    let m = 5 * k * n;
    let mut wins = 0;
    for seed in 0..100u64 {
        let d = gen_gmm(&SynthSpec::new(k, n, 10_000, seed)).unwrap();
        let f = draw_frequencies(
            n,
            m,
            RadiusLaw::AdaptedRadius,
            estimate_scale(&d.train).unwrap(),
            seed,
        )
        .unwrap();
        let y = compute_sketch(&d.train, &f).unwrap();
        let h = GmmHyperparams::new(vec![0.5; 2], vec![1.0; 2], f64::INFINITY).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift = rng.random_range(1..n);
        let corrupt = Centroids::from_centers(
            &d.means
                .centers()
                .map(|c| (0..n).map(|i| c[(i + shift) % n]).collect())
                .collect::<Vec<Vec<f64>>>(),
        )
        .unwrap();
        if sketch_residual(&y, &d.means, &h, &f).unwrap()
            <= sketch_residual(&y, &corrupt, &h, &f).unwrap()
        {
            wins += 1;
        }
    }
    assert!(wins >= 95, "{wins}");
}
