//! Closed-form maximum-likelihood estimators for the thinned Poisson model.
//!
//! Every arrival in cell `(c, i, t)` independently loses its location with
//! probability `p` (or `p_{c,t}`). The located stream per zone and the
//! unlocated stream per block are then independent Poisson processes, which
//! gives the estimators below in closed form.

use crate::error::{Error, Result};
use crate::model::{BlockStatus, CountData, IntensityField, ProblemShape};

/// Per-block table of missing-location probabilities. `None` marks a block
/// with no arrivals at all, where the estimate is undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockProbabilities {
    n_types: usize,
    n_periods: usize,
    values: Vec<Option<f64>>,
}

impl BlockProbabilities {
    pub fn new(shape: &ProblemShape, values: Vec<Option<f64>>) -> Result<Self> {
        if values.len() != shape.n_blocks() {
            return Err(Error::shape(format!(
                "probability table has {} entries, expected {}",
                values.len(),
                shape.n_blocks()
            )));
        }
        if let Some(v) = values.iter().flatten().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::domain(format!("probability {v} outside [0, 1]")));
        }
        Ok(Self {
            n_types: shape.n_types(),
            n_periods: shape.n_periods(),
            values,
        })
    }

    pub fn constant(shape: &ProblemShape, p: f64) -> Result<Self> {
        Self::new(shape, vec![Some(p); shape.n_blocks()])
    }

    pub fn get(&self, c: usize, t: usize) -> Option<f64> {
        self.values[c * self.n_periods + t]
    }

    /// Lookup by `(type, day, period within day)` on a shape with a day axis.
    pub fn get_day(&self, shape: &ProblemShape, c: usize, d: usize, t: usize) -> Option<f64> {
        self.get(c, shape.period(d, t)?)
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_types, self.n_periods)
    }
}

/// Either one probability shared by all blocks or one per `(c, t)`.
#[derive(Debug, Clone, PartialEq)]
pub enum MissingProbability {
    Global(f64),
    PerBlock(BlockProbabilities),
}

impl MissingProbability {
    pub fn at(&self, c: usize, t: usize) -> Option<f64> {
        match self {
            MissingProbability::Global(p) => Some(*p),
            MissingProbability::PerBlock(table) => table.get(c, t),
        }
    }
}

/// `p̂ = M⁰ / (M¹ + M⁰)`.
pub fn estimate_p_global(counts: &CountData) -> Result<f64> {
    let total = counts.m1_grand() + counts.m0_grand();
    if total == 0 {
        return Err(Error::Undefined(
            "no arrivals at all, the missing probability is undefined".into(),
        ));
    }
    Ok(counts.m0_grand() as f64 / total as f64)
}

/// `p̂_{c,t} = M⁰_{c,t,•} / (M¹_{c,•,t,•} + M⁰_{c,t,•})`.
pub fn estimate_p_per_ct(counts: &CountData) -> BlockProbabilities {
    let shape = counts.shape();
    let mut values = Vec::with_capacity(shape.n_blocks());
    for c in 0..shape.n_types() {
        for t in 0..shape.n_periods() {
            let m0 = counts.m0_total(c, t);
            let denom = counts.m1_zone_total(c, t) + m0;
            values.push((denom > 0).then(|| m0 as f64 / denom as f64));
        }
    }
    BlockProbabilities {
        n_types: shape.n_types(),
        n_periods: shape.n_periods(),
        values,
    }
}

/// `Ŝ_{c,t} = (M¹_{c,•,t,•} + M⁰_{c,t,•}) / (N_{c,t} 𝒟_t)`, or `None` when
/// `N_{c,t} = 0`.
pub fn estimate_total(counts: &CountData, c: usize, t: usize) -> Option<f64> {
    let shape = counts.shape();
    let n = shape.n_obs(c, t);
    (n > 0).then(|| {
        (counts.m1_zone_total(c, t) + counts.m0_total(c, t)) as f64
            / (n as f64 * shape.duration(t))
    })
}

/// Corrected intensities `λ̂_{c,i,t} = Ŝ_{c,t} M¹_{c,i,t,•} / M¹_{c,•,t,•}`.
///
/// Blocks with `N_{c,t} = 0` or with unlocated arrivals but no located ones
/// are flagged and hold zeros.
pub fn estimate_lambda(counts: &CountData) -> IntensityField {
    let shape = counts.shape();
    let mut values = vec![0.0; shape.n_cells()];
    let mut status = vec![BlockStatus::Estimated; shape.n_blocks()];
    for c in 0..shape.n_types() {
        for t in 0..shape.n_periods() {
            let block = shape.block_index(c, t);
            let Some(s_hat) = estimate_total(counts, c, t) else {
                status[block] = BlockStatus::NoObservations;
                continue;
            };
            let located = counts.m1_zone_total(c, t);
            if located == 0 {
                if counts.m0_total(c, t) > 0 {
                    status[block] = BlockStatus::NoLocatedArrivals;
                }
                continue;
            }
            for i in 0..shape.n_zones() {
                values[shape.cell_index(c, i, t)] =
                    s_hat * counts.m1_obs_total(c, i, t) as f64 / located as f64;
            }
        }
    }
    IntensityField::with_status(shape, values, status)
        .expect("closed-form intensities are finite and nonnegative")
}

/// Classical Poisson MLE after discarding every unlocated arrival.
pub fn estimate_lambda_uncorrected(counts: &CountData) -> IntensityField {
    estimate_lambda(&counts.without_unlocated())
}

/// `coef * ln(x)` with `0 ln 0 = 0`.
pub(crate) fn xlogy(coef: f64, x: f64, what: impl FnOnce() -> String) -> Result<f64> {
    if coef == 0.0 {
        Ok(0.0)
    } else if x > 0.0 {
        Ok(coef * x.ln())
    } else {
        Err(Error::domain(format!(
            "log of nonpositive argument {x} with coefficient {coef} ({})",
            what()
        )))
    }
}

/// The λ-part of the log-likelihood, shared by the global-`p` and per-block
/// variants: `Σ_{c,t} (−N S 𝒟 + M⁰_{c,t,•} ln S + Σ_i M¹_{c,i,t,•} ln λ)`.
pub fn intensity_log_likelihood(lambda: &IntensityField, counts: &CountData) -> Result<f64> {
    let shape = counts.shape();
    check_dims(lambda, shape)?;
    let mut total = 0.0;
    for c in 0..shape.n_types() {
        for t in 0..shape.n_periods() {
            let s = lambda.total(c, t);
            let n = shape.n_obs(c, t) as f64;
            total -= n * s * shape.duration(t);
            total += xlogy(counts.m0_total(c, t) as f64, s, || {
                format!("S at type {c}, period {t}")
            })?;
            for i in 0..shape.n_zones() {
                total += xlogy(counts.m1_obs_total(c, i, t) as f64, lambda.get(c, i, t), || {
                    format!("lambda at type {c}, zone {i}, period {t}")
                })?;
            }
        }
    }
    Ok(total)
}

/// Log-likelihood up to its additive constant: the global-`p` form when `p`
/// is a scalar, the per-block form otherwise.
pub fn log_likelihood(
    lambda: &IntensityField,
    p: &MissingProbability,
    counts: &CountData,
) -> Result<f64> {
    let mut total = intensity_log_likelihood(lambda, counts)?;
    match p {
        MissingProbability::Global(p) => {
            let p = *p;
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::domain(format!("probability {p} outside [0, 1]")));
            }
            total += xlogy(counts.m0_grand() as f64, p, || "p".into())?;
            total += xlogy(counts.m1_grand() as f64, 1.0 - p, || "1 - p".into())?;
        }
        MissingProbability::PerBlock(table) => {
            let shape = counts.shape();
            if table.dims() != (shape.n_types(), shape.n_periods()) {
                return Err(Error::shape("probability table does not match shape"));
            }
            for c in 0..shape.n_types() {
                for t in 0..shape.n_periods() {
                    let m0 = counts.m0_total(c, t) as f64;
                    let m1 = counts.m1_zone_total(c, t) as f64;
                    match table.get(c, t) {
                        Some(p) => {
                            total += xlogy(m0, p, || format!("p at type {c}, period {t}"))?;
                            total +=
                                xlogy(m1, 1.0 - p, || format!("1 - p at type {c}, period {t}"))?;
                        }
                        None if m0 == 0.0 && m1 == 0.0 => {}
                        None => {
                            return Err(Error::domain(format!(
                                "undefined probability at type {c}, period {t} with nonzero counts"
                            )))
                        }
                    }
                }
            }
        }
    }
    Ok(total)
}

fn check_dims(lambda: &IntensityField, shape: &ProblemShape) -> Result<()> {
    if lambda.dims() != (shape.n_types(), shape.n_zones(), shape.n_periods()) {
        return Err(Error::shape(format!(
            "intensity field {:?} does not match shape",
            lambda.dims()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(shape: ProblemShape, m1: Vec<i64>, m0: Vec<i64>) -> CountData {
        CountData::aggregate(shape, m1, m0).unwrap()
    }

    #[test]
    fn global_p_closed_form() {
        let shape = ProblemShape::uniform(1, 1, 1, 1.0, 1).unwrap();
        assert_eq!(estimate_p_global(&counts(shape.clone(), vec![5], vec![0])).unwrap(), 0.0);
        assert_eq!(estimate_p_global(&counts(shape.clone(), vec![1], vec![3])).unwrap(), 0.75);
        assert!(matches!(
            estimate_p_global(&counts(shape, vec![0], vec![0])),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn per_block_p() {
        let shape = ProblemShape::uniform(1, 2, 2, 1.0, 1).unwrap();
        // period 0: located 6, unlocated 2; period 1: nothing at all
        let d = counts(shape, vec![4, 0, 2, 0], vec![2, 0]);
        let p = estimate_p_per_ct(&d);
        assert_eq!(p.get(0, 0), Some(0.25));
        assert_eq!(p.get(0, 1), None);
    }

    #[test]
    fn per_block_p_zero_without_unlocated() {
        let shape = ProblemShape::uniform(2, 2, 2, 1.0, 1).unwrap();
        let d = counts(shape.clone(), vec![1, 2, 3, 4, 5, 6, 7, 8], shape.zeros_m0());
        assert!(estimate_p_per_ct(&d).values().iter().all(|v| *v == Some(0.0)));
    }

    #[test]
    fn lambda_closed_form_example() {
        // D = 1, N = 2, zone totals (4, 2), M⁰ = 3.
        let shape = ProblemShape::uniform(1, 2, 1, 1.0, 2).unwrap();
        let d = counts(shape, vec![3, 1, 0, 2], vec![2, 1]);
        let lam = estimate_lambda(&d);
        assert!((lam.total(0, 0) - 4.5).abs() < 1e-12);
        assert!((lam.get(0, 0, 0) - 3.0).abs() < 1e-12);
        assert!((lam.get(0, 1, 0) - 1.5).abs() < 1e-12);
    }

    #[test]
    fn lambda_reduces_to_poisson_mle_without_missing() {
        let shape = ProblemShape::uniform(1, 3, 2, 0.5, 4).unwrap();
        let m1: Vec<i64> = (0..shape.m1_len() as i64).map(|k| k % 5).collect();
        let d = counts(shape.clone(), m1, shape.zeros_m0());
        let lam = estimate_lambda(&d);
        for i in 0..3 {
            for t in 0..2 {
                let mle = d.m1_obs_total(0, i, t) as f64 / (4.0 * 0.5);
                assert!((lam.get(0, i, t) - mle).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inestimable_blocks_are_flagged() {
        let shape = ProblemShape::new(1, 2, vec![1.0, 1.0], vec![1, 0]).unwrap();
        // period 0 has only unlocated arrivals, period 1 has no observations
        let d = counts(shape, vec![0, 0, 0, 0], vec![3, 0]);
        let lam = estimate_lambda(&d);
        assert_eq!(lam.status(0, 0), BlockStatus::NoLocatedArrivals);
        assert_eq!(lam.status(0, 1), BlockStatus::NoObservations);
    }

    #[test]
    fn doubling_counts_doubles_lambda() {
        let shape = ProblemShape::uniform(1, 2, 1, 1.0, 2).unwrap();
        let base = estimate_lambda(&counts(shape.clone(), vec![3, 1, 0, 2], vec![2, 1]));
        let doubled = estimate_lambda(&counts(shape, vec![6, 2, 0, 4], vec![4, 2]));
        for (a, b) in base.values().iter().zip(doubled.values()) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn log_likelihood_zero_counts_is_linear_term() {
        let shape = ProblemShape::new(1, 2, vec![1.0, 1.0], vec![3, 2]).unwrap();
        let d = counts(shape.clone(), shape.zeros_m1(), shape.zeros_m0());
        let lam = IntensityField::new(&shape, vec![0.5, 1.0, 2.0, 0.0]).unwrap();
        let p = MissingProbability::PerBlock(BlockProbabilities::constant(&shape, 0.3).unwrap());
        let ll = log_likelihood(&lam, &p, &d).unwrap();
        assert!((ll - (-(3.0 * 2.5 + 2.0 * 1.0))).abs() < 1e-12);
    }

    #[test]
    fn global_and_constant_block_forms_agree() {
        let shape = ProblemShape::uniform(2, 2, 2, 0.5, 2).unwrap();
        let m1: Vec<i64> = (0..shape.m1_len() as i64).map(|k| (k * 7) % 4).collect();
        let m0: Vec<i64> = (0..shape.m0_len() as i64).map(|k| (k * 3) % 3).collect();
        let d = counts(shape.clone(), m1, m0);
        let lam = IntensityField::new(&shape, (1..=8).map(|v| v as f64 * 0.7).collect()).unwrap();
        let a = log_likelihood(&lam, &MissingProbability::Global(0.37), &d).unwrap();
        let table = BlockProbabilities::constant(&shape, 0.37).unwrap();
        let b = log_likelihood(&lam, &MissingProbability::PerBlock(table), &d).unwrap();
        assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn log_likelihood_domain_error() {
        let shape = ProblemShape::uniform(1, 1, 1, 1.0, 1).unwrap();
        let d = counts(shape.clone(), vec![2], vec![1]);
        let lam = IntensityField::new(&shape, vec![0.0]).unwrap();
        assert!(matches!(
            log_likelihood(&lam, &MissingProbability::Global(0.5), &d),
            Err(Error::Domain(_))
        ));
        let lam = IntensityField::new(&shape, vec![1.0]).unwrap();
        assert!(matches!(
            log_likelihood(&lam, &MissingProbability::Global(0.0), &d),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn global_p_is_weighted_mean_of_block_p() {
        let shape = ProblemShape::uniform(2, 3, 3, 1.0, 2).unwrap();
        let m1: Vec<i64> = (0..shape.m1_len() as i64).map(|k| (k * 5 + 1) % 6).collect();
        let m0: Vec<i64> = (0..shape.m0_len() as i64).map(|k| (k * 11) % 5).collect();
        let d = counts(shape, m1, m0);
        let table = estimate_p_per_ct(&d);
        let (mut num, mut den) = (0.0, 0.0);
        for c in 0..2 {
            for t in 0..3 {
                let w = (d.m1_zone_total(c, t) + d.m0_total(c, t)) as f64;
                if let Some(p) = table.get(c, t) {
                    num += w * p;
                    den += w;
                }
            }
        }
        assert!((num / den - estimate_p_global(&d).unwrap()).abs() < 1e-12);
    }
}
