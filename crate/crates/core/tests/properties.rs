mod common;

use proptest::prelude::*;

use skcl::denoisers::denoise_c;
use skcl::em::project_simplex;
use skcl::sketch::{
    compute_sketch, compute_sketch_chunked, draw_frequencies, merge_sketches, RadiusLaw,
};
use skcl::DataMatrix;

use common::brute_simplex_projection;

fn data(dim: usize) -> impl Strategy<Value = DataMatrix> {
    prop::collection::vec(prop::collection::vec(-20.0..20.0f64, dim), 1..60)
        .prop_map(|rows| DataMatrix::from_samples(&rows).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sketch_entries_lie_in_the_unit_disk(x in data(3), seed in 0u64..1000, scale in 0.1..10.0f64) {
        let f = draw_frequencies(3, 16, RadiusLaw::AdaptedRadius, scale, seed).unwrap();
        let y = compute_sketch(&x, &f).unwrap();
        prop_assert!(y.values.iter().all(|v| v.norm() <= 1.0));
    }

    #[test]
    fn merging_splits_recovers_the_whole(x in data(2), cut in 1usize..60, seed in 0u64..100) {
        prop_assume!(x.len() >= 2);
        let cut = cut.min(x.len() - 1);
        let f = draw_frequencies(2, 12, RadiusLaw::Gaussian, 1.0, seed).unwrap();
        let first: Vec<usize> = (0..cut).collect();
        let second: Vec<usize> = (cut..x.len()).collect();
        let a = compute_sketch(&x.select(&first).unwrap(), &f).unwrap();
        let b = compute_sketch(&x.select(&second).unwrap(), &f).unwrap();
        let whole = compute_sketch(&x, &f).unwrap();
        let ab = merge_sketches(&a, &b).unwrap();
        let ba = merge_sketches(&b, &a).unwrap();
        for ((u, v), w) in ab.values.iter().zip(&ba.values).zip(&whole.values) {
            prop_assert!((u - w).norm() < 1e-12);
            prop_assert!((u - v).norm() < 1e-15);
        }
    }

    #[test]
    fn chunking_only_changes_rounding(x in data(2), chunk in 1usize..80) {
        let f = draw_frequencies(2, 10, RadiusLaw::AdaptedRadius, 3.0, 1).unwrap();
        let a = compute_sketch_chunked(&x, &f, chunk, true).unwrap();
        let b = compute_sketch_chunked(&x, &f, 1_000_000, false).unwrap();
        for (u, v) in a.values.iter().zip(&b.values) {
            prop_assert!((u - v).norm() < 1e-12);
        }
    }

    #[test]
    fn simplex_projection_properties(v in prop::collection::vec(-5.0..5.0f64, 1..7)) {
        let p = project_simplex(&v);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        for (a, b) in p.iter().zip(brute_simplex_projection(&v)) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        // Adding a constant to every entry does not move the projection.
        let shifted: Vec<f64> = v.iter().map(|x| x + 3.0).collect();
        for (a, b) in p.iter().zip(project_simplex(&shifted)) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn input_denoiser_is_linear_in_r(
        r in prop::collection::vec(-10.0..10.0f64, 1..6),
        s in -3.0..3.0f64,
        q in 0.01..5.0f64,
        nu in 0.01..5.0f64,
    ) {
        let qr = vec![q; r.len()];
        let base = denoise_c(&r, &qr, nu).unwrap();
        let scaled: Vec<f64> = r.iter().map(|x| s * x).collect();
        let out = denoise_c(&scaled, &qr, nu).unwrap();
        for (a, b) in out.mean.iter().zip(&base.mean) {
            prop_assert!((a - s * b).abs() < 1e-12 * (1.0 + a.abs()));
        }
        prop_assert_eq!(out.variance, base.variance.clone());
        prop_assert!(base.variance.iter().all(|&v| v < q && v < nu));
    }
}
