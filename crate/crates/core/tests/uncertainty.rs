mod common;

use missloc::uncertainty::{
    confidence_interval, fisher_block, invert_block, normal_quantile, FisherBlock,
};
use missloc::{IntensityField, MissingProbability, ProblemShape};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_block(rng: &mut ChaCha8Rng, zones: usize) -> FisherBlock {
    let shape = ProblemShape::uniform(1, zones, 1, rng.random_range(0.2..2.0), rng.random_range(1..200)).unwrap();
    let values: Vec<f64> = (0..zones).map(|_| rng.random_range(0.01..10.0)).collect();
    let lambda = IntensityField::new(&shape, values).unwrap();
    let p = MissingProbability::Global(rng.random_range(0.01..0.99));
    fisher_block(&lambda, &p, &shape, 0, 0).unwrap()
}

fn dense(block: &FisherBlock) -> DMatrix<f64> {
    let rows = block.dense_intensity_block();
    let n = rows.len();
    DMatrix::from_fn(n, n, |r, c| rows[r][c])
}

#[test]
fn structured_inverse_matches_dense_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for zones in [1, 2, 3, 7, 20, 76] {
        for _ in 0..5 {
            let block = random_block(&mut rng, zones);
            let m = dense(&block);
            let inv = m.clone().try_inverse().unwrap();
            let v = invert_block(&block).unwrap();
            for i in 0..zones {
                let rel = (v.lambda[i] - inv[(i, i)]).abs() / inv[(i, i)].abs();
                assert!(rel < 1e-10, "zones {zones}: {} vs {}", v.lambda[i], inv[(i, i)]);
            }
            let total: f64 = inv.iter().sum();
            assert!((v.total - total).abs() <= 1e-10 * total.abs());
            assert!((v.p - 1.0 / block.info_p).abs() <= 1e-15 * v.p);
            let residual = &m * &inv - DMatrix::identity(zones, zones);
            assert!(residual.amax() < 1e-10);
        }
    }
}

#[test]
fn information_is_positive_definite() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let zones = rng.random_range(1..30);
        let block = random_block(&mut rng, zones);
        let eig = dense(&block).symmetric_eigen();
        assert!(eig.eigenvalues.min() > 0.0);
        assert!(block.info_p > 0.0);
    }
}

#[test]
fn documented_values() {
    // one zone: p𝒟N/λ + (1−p)𝒟N/λ = 𝒟N/λ
    let shape = ProblemShape::uniform(1, 1, 1, 0.5, 10).unwrap();
    let lambda = IntensityField::new(&shape, vec![2.0]).unwrap();
    let b = fisher_block(&lambda, &MissingProbability::Global(0.3), &shape, 0, 0).unwrap();
    assert!((b.diag[0] - 0.5 * 10.0 / 2.0).abs() < 1e-12);

    // p = 0.5, 𝒟 = 1, N = 100, S = 4
    let shape = ProblemShape::uniform(1, 2, 1, 1.0, 100).unwrap();
    let lambda = IntensityField::new(&shape, vec![1.0, 3.0]).unwrap();
    let b = fisher_block(&lambda, &MissingProbability::Global(0.5), &shape, 0, 0).unwrap();
    assert!((b.info_p - 1600.0).abs() < 1e-9);
    let v = invert_block(&b).unwrap();
    assert!((v.p - 6.25e-4).abs() < 1e-15);
    assert!((v.p.sqrt() - 0.025).abs() < 1e-12);

    let lambda = IntensityField::new(&shape, vec![2.0, 2.0]).unwrap();
    let b = fisher_block(&lambda, &MissingProbability::Global(0.4), &shape, 0, 0).unwrap();
    assert_eq!(b.diag[0], b.diag[1]);

    let b = FisherBlock { c: 0, t: 0, info_p: 1.0, diag: vec![3.0, 3.0], off_diag: 1.0 };
    let v = invert_block(&b).unwrap();
    assert!((v.lambda[0] - 0.375).abs() < 1e-15 && (v.lambda[1] - 0.375).abs() < 1e-15);
    let b = FisherBlock { c: 0, t: 0, info_p: 1.0, diag: vec![2.0, 4.0, 5.0], off_diag: 0.0 };
    let v = invert_block(&b).unwrap();
    assert_eq!(v.lambda, vec![0.5, 0.25, 0.2]);
}

#[test]
fn boundary_parameters_are_singular() {
    let shape = ProblemShape::uniform(1, 2, 1, 1.0, 5).unwrap();
    let lambda = IntensityField::new(&shape, vec![1.0, 2.0]).unwrap();
    for p in [0.0, 1.0] {
        assert!(fisher_block(&lambda, &MissingProbability::Global(p), &shape, 0, 0).is_err());
    }
    let lambda = IntensityField::new(&shape, vec![0.0, 2.0]).unwrap();
    assert!(fisher_block(&lambda, &MissingProbability::Global(0.5), &shape, 0, 0).is_err());
}

#[test]
fn interval_examples() {
    let ci = confidence_interval(3.0, 0.04, 0.05, false).unwrap();
    assert!((ci.lower - 2.608).abs() < 5e-4 && (ci.upper - 3.392).abs() < 5e-4);
    assert!((ci.upper - ci.lower - 2.0 * 1.959_963_984_540_054 * 0.2).abs() < 1e-12);
    let ci = confidence_interval(3.0, 0.0, 0.05, true).unwrap();
    assert_eq!((ci.lower, ci.upper), (3.0, 3.0));
    let ci = confidence_interval(0.1, 1.0, 0.05, true).unwrap();
    assert!(ci.clipped && ci.lower == 0.0);
    assert!(confidence_interval(1.0, -1.0, 0.05, false).is_err());
    assert!(confidence_interval(1.0, 1.0, 1.0, false).is_err());
}

#[test]
fn quantile_matches_reference_values() {
    // Φ⁻¹ reference values to 1e-15 from high-precision tables
    for (p, z) in [
        (0.5, 0.0),
        (0.975, 1.959_963_984_540_054),
        (0.84, 0.994_457_883_209_753_1),
        (0.999, 3.090_232_306_167_813_5),
        (1e-10, -6.361_340_902_404_056),
    ] {
        assert!((normal_quantile(p) - z).abs() < 1e-12, "{p}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let p: f64 = rng.random_range(1e-6..1.0 - 1e-6);
        assert!((normal_quantile(p) + normal_quantile(1.0 - p)).abs() < 1e-9);
    }
}
