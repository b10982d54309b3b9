#![allow(dead_code)]

use missloc::{CountData, ProblemShape};
use rand::Rng;

/// Builds counts from closures over `(c, i, t, n)` and `(c, t, n)`.
pub fn counts_from(
    shape: &ProblemShape,
    m1: impl Fn(usize, usize, usize, usize) -> i64,
    m0: impl Fn(usize, usize, usize) -> i64,
) -> CountData {
    let mut a = shape.zeros_m1();
    let mut b = shape.zeros_m0();
    for c in 0..shape.n_types() {
        for t in 0..shape.n_periods() {
            for n in 0..shape.n_obs(c, t) {
                b[shape.m0_index(c, t, n)] = m0(c, t, n);
                for i in 0..shape.n_zones() {
                    a[shape.m1_index(c, i, t, n)] = m1(c, i, t, n);
                }
            }
        }
    }
    CountData::aggregate(shape.clone(), a, b).unwrap()
}

/// Uniform counts in `0..=max` for every valid cell.
pub fn random_counts(shape: &ProblemShape, rng: &mut impl Rng, max: i64) -> CountData {
    let mut a = shape.zeros_m1();
    let mut b = shape.zeros_m0();
    for c in 0..shape.n_types() {
        for t in 0..shape.n_periods() {
            for n in 0..shape.n_obs(c, t) {
                b[shape.m0_index(c, t, n)] = rng.random_range(0..=max);
                for i in 0..shape.n_zones() {
                    a[shape.m1_index(c, i, t, n)] = rng.random_range(0..=max);
                }
            }
        }
    }
    CountData::aggregate(shape.clone(), a, b).unwrap()
}

/// Central differences of `f` at `x` with step `h·max(|x_k|, 1)`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|k| {
            let step = h * x[k].abs().max(1.0);
            y[k] = x[k] + step;
            let up = f(&y);
            y[k] = x[k] - step;
            let down = f(&y);
            y[k] = x[k];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Largest `|a−b| / max(|a|, |b|, floor)` over both vectors.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
