mod common;

use common::{counts_from, random_counts, rel_close};
use missloc::{
    estimate_lambda, estimate_p_global, estimate_p_per_ct, log_likelihood, BlockStatus,
    IntensityField, MissingProbability, ProblemShape,
};
use missloc::analytic::BlockProbabilities;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Maximizes `f` over the box by exhaustive grid search, then re-searches a
/// window around the best point with finer steps.
fn grid_argmax(lo: &[f64], hi: &[f64], steps: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let dim = lo.len();
    let mut best: Vec<f64> = lo.to_vec();
    let mut window: Vec<(f64, f64)> = lo.iter().copied().zip(hi.iter().copied()).collect();
    for (level, &h) in steps.iter().enumerate() {
        let counts: Vec<usize> = window.iter().map(|(a, b)| ((b - a) / h).round() as usize + 1).collect();
        let mut idx = vec![0usize; dim];
        let mut x = vec![0.0; dim];
        let mut best_val = f64::NEG_INFINITY;
        loop {
            for k in 0..dim {
                x[k] = (window[k].0 + idx[k] as f64 * h).min(hi[k]);
            }
            let v = f(&x);
            if v > best_val {
                best_val = v;
                best.copy_from_slice(&x);
            }
            let mut k = 0;
            while k < dim {
                idx[k] += 1;
                if idx[k] < counts[k] {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == dim {
                break;
            }
        }
        if let Some(&next) = steps.get(level + 1) {
            let half = 20.0 * next;
            window = best
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(b, (l, u))| ((b - half).max(*l), (b + half).min(*u)))
                .collect();
            // snap the window start onto the finer grid
            for w in &mut window {
                w.0 = (w.0 / next).floor() * next;
            }
        }
    }
    best
}

fn xlogy(a: f64, y: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else if y <= 0.0 {
        f64::NEG_INFINITY
    } else {
        a * y.ln()
    }
}

#[test]
fn global_p_matches_grid_search_of_likelihood() {
    let shape = ProblemShape::uniform(1, 1, 1, 1.0, 3).unwrap();
    for (m1, m0) in [([2, 1, 4], [1, 0, 2]), ([0, 1, 0], [3, 2, 2]), ([5, 5, 5], [0, 1, 0])] {
        let counts = counts_from(&shape, |_, _, _, n| m1[n], |_, _, n| m0[n]);
        let (a, b) = (counts.m1_grand() as f64, counts.m0_grand() as f64);
        let l1 = |x: &[f64]| {
            let (lam, p) = (x[0], x[1]);
            -3.0 * lam + xlogy(b, lam) + xlogy(a, lam) + xlogy(b, p) + xlogy(a, 1.0 - p)
        };
        let best = grid_argmax(&[0.0, 0.0], &[10.0, 1.0], &[1e-2, 1e-3, 1e-4], l1);
        let p_hat = estimate_p_global(&counts).unwrap();
        assert!((best[1] - p_hat).abs() <= 1e-4, "{} vs {p_hat}", best[1]);
    }
}

#[test]
fn two_zone_lambda_matches_grid_search() {
    let shape = ProblemShape::uniform(1, 2, 1, 1.0, 3).unwrap();
    let m1 = [[3, 1, 2], [0, 2, 1]];
    let m0 = [1, 2, 0];
    let counts = counts_from(&shape, |_, i, _, n| m1[i][n], |_, _, n| m0[n]);
    let (z1, z2, zm) = (6.0, 3.0, 3.0);
    let block = |x: &[f64]| -3.0 * (x[0] + x[1]) + xlogy(zm, x[0] + x[1]) + xlogy(z1, x[0]) + xlogy(z2, x[1]);
    let best = grid_argmax(&[0.0, 0.0], &[6.0, 6.0], &[2e-2, 1e-3, 1e-4], block);
    let lambda = estimate_lambda(&counts);
    assert!((best[0] - lambda.get(0, 0, 0)).abs() < 1e-3);
    assert!((best[1] - lambda.get(0, 1, 0)).abs() < 1e-3);
}

#[test]
fn worked_examples() {
    let shape = ProblemShape::uniform(1, 2, 1, 1.0, 2).unwrap();
    let m1 = [[3, 1], [0, 2]];
    let m0 = [2, 1];
    let counts = counts_from(&shape, |_, i, _, n| m1[i][n], |_, _, n| m0[n]);
    assert_eq!(counts.m1_obs_total(0, 0, 0), 4);
    assert_eq!(counts.m1_obs_total(0, 1, 0), 2);
    assert_eq!(counts.m1_zone_total(0, 0), 6);
    assert_eq!(counts.m0_total(0, 0), 3);
    assert_eq!((counts.m1_grand(), counts.m0_grand()), (6, 3));
    let lambda = estimate_lambda(&counts);
    assert!((lambda.total(0, 0) - 4.5).abs() < 1e-12);
    assert!((lambda.get(0, 0, 0) - 3.0).abs() < 1e-12);
    assert!((lambda.get(0, 1, 0) - 1.5).abs() < 1e-12);
    assert!((estimate_p_per_ct(&counts).get(0, 0).unwrap() - 1.0 / 3.0).abs() < 1e-15);

    let shape = ProblemShape::uniform(1, 1, 1, 1.0, 1).unwrap();
    let c = counts_from(&shape, |_, _, _, _| 1, |_, _, _| 3);
    assert_eq!(estimate_p_global(&c).unwrap(), 0.75);
    let c = counts_from(&shape, |_, _, _, _| 6, |_, _, _| 2);
    assert_eq!(estimate_p_per_ct(&c).get(0, 0), Some(0.25));
    let c = counts_from(&shape, |_, _, _, _| 0, |_, _, _| 0);
    assert!(estimate_p_global(&c).is_err());
    assert_eq!(estimate_p_per_ct(&c).get(0, 0), None);
}

#[test]
fn inestimable_and_empty_blocks_are_flagged() {
    let shape = ProblemShape::new(1, 2, vec![1.0, 1.0], vec![2, 0]).unwrap();
    let counts = counts_from(&shape, |_, _, _, _| 0, |_, _, _| 1);
    let lambda = estimate_lambda(&counts);
    assert_eq!(lambda.status(0, 0), BlockStatus::NoLocatedArrivals);
    assert_eq!(lambda.status(0, 1), BlockStatus::NoObservations);
    assert!(!lambda.is_estimated(0, 0));
}

#[test]
fn zero_counts_leave_only_linear_term() {
    let shape = ProblemShape::uniform(2, 3, 2, 1.0, 4).unwrap();
    let counts = counts_from(&shape, |_, _, _, _| 0, |_, _, _| 0);
    let values: Vec<f64> = (0..shape.n_cells()).map(|k| 0.5 + k as f64 * 0.1).collect();
    let lambda = IntensityField::new(&shape, values).unwrap();
    let p = MissingProbability::PerBlock(BlockProbabilities::constant(&shape, 0.3).unwrap());
    let expected: f64 = (0..2)
        .flat_map(|c| (0..2).map(move |t| (c, t)))
        .map(|(c, t)| -4.0 * lambda.total(c, t))
        .sum();
    assert!(rel_close(log_likelihood(&lambda, &p, &counts).unwrap(), expected, 1e-12));
}

#[test]
fn estimate_beats_random_perturbations() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let shape = ProblemShape::uniform(2, 3, 2, 0.5, 4).unwrap();
    let counts = loop {
        let c = random_counts(&shape, &mut rng, 6);
        let ok = (0..2).all(|c0| {
            (0..2).all(|t| {
                (0..3).all(|i| c.m1_obs_total(c0, i, t) > 0) && c.m0_total(c0, t) > 0
            })
        });
        if ok {
            break c;
        }
    };
    let lambda = estimate_lambda(&counts);
    let p_hat = estimate_p_per_ct(&counts);
    let best = log_likelihood(&lambda, &MissingProbability::PerBlock(p_hat.clone()), &counts).unwrap();
    for _ in 0..100 {
        let values: Vec<f64> = lambda
            .values()
            .iter()
            .map(|v| (v * (1.0 + rng.random_range(-0.2..0.2))).max(1e-9))
            .collect();
        let probs: Vec<Option<f64>> = p_hat
            .values()
            .iter()
            .map(|v| Some((v.unwrap() + rng.random_range(-0.05..0.05)).clamp(1e-6, 1.0 - 1e-6)))
            .collect();
        let other = log_likelihood(
            &IntensityField::new(&shape, values).unwrap(),
            &MissingProbability::PerBlock(BlockProbabilities::new(&shape, probs).unwrap()),
            &counts,
        )
        .unwrap();
        assert!(best >= other);
    }
}

fn shape_strategy() -> impl Strategy<Value = ProblemShape> {
    (1usize..3, 1usize..4, 1usize..3, 1usize..5)
        .prop_map(|(c, i, t, n)| ProblemShape::uniform(c, i, t, 0.5, n).unwrap())
}

fn counts_strategy() -> impl Strategy<Value = missloc::CountData> {
    (shape_strategy(), any::<u64>()).prop_map(|(shape, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_counts(&shape, &mut rng, 7)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn observation_permutation_leaves_aggregates(counts in counts_strategy(), rot in 0usize..4) {
        let shape = counts.shape().clone();
        let n_obs = shape.max_obs();
        let permuted = counts_from(
            &shape,
            |c, i, t, n| counts.m1(c, i, t, (n + rot) % n_obs) as i64,
            |c, t, n| counts.m0(c, t, (n + rot) % n_obs) as i64,
        );
        prop_assert!(permuted.aggregates_consistent());
        for c in 0..shape.n_types() {
            for t in 0..shape.n_periods() {
                prop_assert_eq!(permuted.m0_total(c, t), counts.m0_total(c, t));
                prop_assert_eq!(permuted.m1_zone_total(c, t), counts.m1_zone_total(c, t));
                for i in 0..shape.n_zones() {
                    prop_assert_eq!(permuted.m1_obs_total(c, i, t), counts.m1_obs_total(c, i, t));
                }
            }
        }
        prop_assert_eq!(permuted.m1_grand(), counts.m1_grand());
        prop_assert_eq!(permuted.m0_grand(), counts.m0_grand());
    }

    #[test]
    fn zone_sums_match_totals(counts in counts_strategy()) {
        let lambda = estimate_lambda(&counts);
        prop_assert!(lambda.totals_error() <= 1e-12);
        let shape = counts.shape();
        for c in 0..shape.n_types() {
            for t in 0..shape.n_periods() {
                if lambda.is_estimated(c, t) {
                    let s: f64 = (0..shape.n_zones()).map(|i| lambda.get(c, i, t)).sum();
                    let expected = (counts.m1_zone_total(c, t) + counts.m0_total(c, t)) as f64
                        / (shape.n_obs(c, t) as f64 * shape.duration(t));
                    prop_assert!((s - expected).abs() <= 1e-12 * expected.max(1.0));
                }
            }
        }
    }

    #[test]
    fn doubling_counts_doubles_lambda(counts in counts_strategy()) {
        let shape = counts.shape().clone();
        let doubled = counts_from(
            &shape,
            |c, i, t, n| 2 * counts.m1(c, i, t, n) as i64,
            |c, t, n| 2 * counts.m0(c, t, n) as i64,
        );
        let a = estimate_lambda(&counts);
        let b = estimate_lambda(&doubled);
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((2.0 * x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn global_p_is_weighted_average(counts in counts_strategy()) {
        let Ok(global) = estimate_p_global(&counts) else { return Ok(()); };
        let per = estimate_p_per_ct(&counts);
        let shape = counts.shape();
        let mut num = 0.0;
        let mut den = 0.0;
        for c in 0..shape.n_types() {
            for t in 0..shape.n_periods() {
                let w = (counts.m1_zone_total(c, t) + counts.m0_total(c, t)) as f64;
                if let Some(p) = per.get(c, t) {
                    num += w * p;
                    den += w;
                }
            }
        }
        prop_assert!((global - num / den).abs() <= 1e-12);
    }

    #[test]
    fn probabilities_lie_in_unit_interval(counts in counts_strategy()) {
        for p in estimate_p_per_ct(&counts).values().iter().flatten() {
            prop_assert!((0.0..=1.0).contains(p));
        }
    }

    #[test]
    fn no_missing_gives_classical_mle(counts in counts_strategy()) {
        let located = counts.without_unlocated();
        let lambda = estimate_lambda(&located);
        let shape = located.shape();
        for c in 0..shape.n_types() {
            for t in 0..shape.n_periods() {
                if !lambda.is_estimated(c, t) { continue; }
                for i in 0..shape.n_zones() {
                    let mle = located.m1_obs_total(c, i, t) as f64
                        / (shape.n_obs(c, t) as f64 * shape.duration(t));
                    prop_assert!((lambda.get(c, i, t) - mle).abs() <= 1e-12 * mle.max(1.0));
                }
            }
        }
    }

    #[test]
    fn constant_block_p_equals_global_form(counts in counts_strategy(), p in 0.05f64..0.95) {
        let shape = counts.shape();
        let values: Vec<f64> = (0..shape.n_cells()).map(|k| 0.3 + (k % 5) as f64).collect();
        let lambda = IntensityField::new(shape, values).unwrap();
        let a = log_likelihood(&lambda, &MissingProbability::Global(p), &counts).unwrap();
        let b = log_likelihood(
            &lambda,
            &MissingProbability::PerBlock(BlockProbabilities::constant(shape, p).unwrap()),
            &counts,
        )
        .unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }
}
