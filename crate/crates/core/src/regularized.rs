//! Similarity-penalized likelihood: intensities in the same time group, and
//! in neighbouring zones, are pulled towards each other; missing
//! probabilities in the same time group likewise.
//!
//! The loss separates into an intensity part `ℓ₁(λ)` and a probability part
//! `ℓ₂(p)`, and further by arrival type. Each piece is minimized by projected
//! gradient over `λ ≥ ε` and `ε ≤ p ≤ 1 − ε`.

use crate::analytic::{
    estimate_lambda, estimate_p_global, estimate_p_per_ct, BlockProbabilities,
};
use crate::error::{Error, Result};
use crate::model::{BlockStatus, CountData, IntensityField, ProblemShape};
use crate::solver::{projected_gradient, BoxBounds, Objective, SolverConfig, Termination};

/// Time groups with weights `W_G` and symmetric zone weights `w_{i,j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizationSpec {
    n_periods: usize,
    n_zones: usize,
    groups: Vec<Vec<usize>>,
    group_weights: Vec<f64>,
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl RegularizationSpec {
    /// `neighbors[i]` lists `(j, w_{i,j})`; the listing must be symmetric.
    pub fn new(
        n_periods: usize,
        n_zones: usize,
        groups: Vec<Vec<usize>>,
        group_weights: Vec<f64>,
        neighbors: Vec<Vec<(usize, f64)>>,
    ) -> Result<Self> {
        if groups.len() != group_weights.len() {
            return Err(Error::shape("one weight per time group is required"));
        }
        let mut seen = vec![false; n_periods];
        for g in &groups {
            for &t in g {
                if t >= n_periods {
                    return Err(Error::shape(format!("period {t} outside 0..{n_periods}")));
                }
                if std::mem::replace(&mut seen[t], true) {
                    return Err(Error::shape(format!("period {t} is in two time groups")));
                }
            }
        }
        if let Some(t) = seen.iter().position(|s| !s) {
            return Err(Error::shape(format!("period {t} is in no time group")));
        }
        if let Some(w) = group_weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
            return Err(Error::domain(format!("group weight {w} must be >= 0")));
        }
        if neighbors.len() != n_zones {
            return Err(Error::shape("one neighbour list per zone is required"));
        }
        for (i, list) in neighbors.iter().enumerate() {
            for &(j, w) in list {
                if j >= n_zones || j == i {
                    return Err(Error::shape(format!("invalid neighbour {j} of zone {i}")));
                }
                if !(w >= 0.0 && w.is_finite()) {
                    return Err(Error::domain(format!("neighbour weight {w} must be >= 0")));
                }
                let back = neighbors[j].iter().find(|(k, _)| *k == i).map(|(_, v)| *v);
                if back != Some(w) {
                    return Err(Error::domain(format!(
                        "neighbour weights are not symmetric between zones {i} and {j}"
                    )));
                }
            }
        }
        Ok(Self {
            n_periods,
            n_zones,
            groups,
            group_weights,
            neighbors,
        })
    }

    /// `W_G = w` for every group and `w_{i,j} = w` for every adjacent pair.
    pub fn uniform(
        w: f64,
        n_periods: usize,
        groups: Vec<Vec<usize>>,
        adjacency: &[Vec<usize>],
    ) -> Result<Self> {
        let weights = vec![w; groups.len()];
        let neighbors = adjacency
            .iter()
            .map(|list| list.iter().map(|&j| (j, w)).collect())
            .collect();
        Self::new(n_periods, adjacency.len(), groups, weights, neighbors)
    }

    /// No penalty at all: singleton groups with zero weight, no neighbours.
    pub fn unpenalized(n_periods: usize, n_zones: usize) -> Self {
        Self {
            n_periods,
            n_zones,
            groups: (0..n_periods).map(|t| vec![t]).collect(),
            group_weights: vec![0.0; n_periods],
            neighbors: vec![Vec::new(); n_zones],
        }
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group_weights(&self) -> &[f64] {
        &self.group_weights
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    pub fn neighbor_weight(&self, i: usize, j: usize) -> f64 {
        self.neighbors[i]
            .iter()
            .find(|(k, _)| *k == j)
            .map_or(0.0, |(_, w)| *w)
    }

    pub fn is_zero(&self) -> bool {
        self.group_weights.iter().all(|w| *w == 0.0)
            && self.neighbors.iter().flatten().all(|(_, w)| *w == 0.0)
    }

    fn check(&self, shape: &ProblemShape) -> Result<()> {
        if self.n_periods != shape.n_periods() || self.n_zones != shape.n_zones() {
            return Err(Error::shape(format!(
                "regularization built for {} periods / {} zones, data has {} / {}",
                self.n_periods,
                self.n_zones,
                shape.n_periods(),
                shape.n_zones()
            )));
        }
        Ok(())
    }
}

/// The eight weekly groups used for emergency-call data on a Monday-first
/// 7-day axis. Periods per day must be a multiple of 24.
pub fn default_time_groups(shape: &ProblemShape) -> Result<Vec<Vec<usize>>> {
    let axis = shape
        .day_axis()
        .filter(|a| a.n_days == 7 && a.periods_per_day % 24 == 0)
        .ok_or_else(|| {
            Error::Unsupported(format!(
                "default time groups need a 7-day axis with hour-aligned periods, got {:?}",
                shape.day_axis()
            ))
        })?;
    let per_hour = axis.periods_per_day / 24;
    let span = |day: usize, from_h: usize, to_h: usize| {
        (from_h * per_hour..to_h * per_hour).map(move |slot| day * axis.periods_per_day + slot)
    };
    const MON: usize = 0;
    const FRI: usize = 4;
    const SAT: usize = 5;
    const SUN: usize = 6;
    let weekdays = MON..=FRI;
    let weekend = [SAT, SUN];

    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); 8];
    for d in weekdays.clone() {
        groups[0].extend(span(d, 6, 10));
        groups[1].extend(span(d, 10, 18));
        groups[2].extend(span(d, 18, 22));
    }
    for d in MON..FRI {
        groups[3].extend(span(d, 22, 24));
        groups[3].extend(span(d, 0, 6));
    }
    groups[3].extend(span(FRI, 0, 6));
    groups[3].extend(span(SUN, 22, 24));
    groups[4].extend(span(FRI, 22, 24));
    groups[4].extend(span(SAT, 22, 24));
    groups[4].extend(span(SAT, 0, 6));
    groups[4].extend(span(SUN, 0, 6));
    for d in weekend {
        groups[5].extend(span(d, 6, 10));
        groups[6].extend(span(d, 10, 18));
        groups[7].extend(span(d, 18, 22));
    }
    for g in &mut groups {
        g.sort_unstable();
    }
    Ok(groups)
}

/// `W ΣN Σ_t N_t (v_t − v̄)²`, equal to `(W/2) Σ_{t,t'} N_t N_{t'} (v_t − v_{t'})²`.
fn group_penalty(values: impl Fn(usize) -> f64, group: &[usize], n_obs: &[f64], w: f64) -> f64 {
    if w == 0.0 {
        return 0.0;
    }
    let total_n: f64 = group.iter().map(|&t| n_obs[t]).sum();
    if total_n == 0.0 {
        return 0.0;
    }
    let mean = group.iter().map(|&t| n_obs[t] * values(t)).sum::<f64>() / total_n;
    w * total_n
        * group
            .iter()
            .map(|&t| n_obs[t] * (values(t) - mean).powi(2))
            .sum::<f64>()
}

/// Adds `2 W N_s ΣN (v_s − v̄)` to `grad[index(s)]` and, when `hess` is given,
/// the diagonal curvature `2 W N_s (ΣN − N_s)`.
fn group_penalty_grad(
    values: impl Fn(usize) -> f64,
    index: impl Fn(usize) -> usize,
    group: &[usize],
    n_obs: &[f64],
    w: f64,
    grad: &mut [f64],
    mut hess: Option<&mut [f64]>,
) {
    if w == 0.0 {
        return;
    }
    let total_n: f64 = group.iter().map(|&t| n_obs[t]).sum();
    if total_n == 0.0 {
        return;
    }
    let mean = group.iter().map(|&t| n_obs[t] * values(t)).sum::<f64>() / total_n;
    for &t in group {
        let k = index(t);
        grad[k] += 2.0 * w * n_obs[t] * total_n * (values(t) - mean);
        if let Some(h) = hess.as_deref_mut() {
            h[k] += 2.0 * w * n_obs[t] * (total_n - n_obs[t]);
        }
    }
}

/// `ℓ₁` restricted to one arrival type; variables laid out `(zone, period)`.
pub(crate) struct IntensityLoss<'a> {
    counts: &'a CountData,
    reg: &'a RegularizationSpec,
    c: usize,
    n_obs: Vec<f64>,
}

impl<'a> IntensityLoss<'a> {
    pub(crate) fn new(counts: &'a CountData, reg: &'a RegularizationSpec, c: usize) -> Self {
        let shape = counts.shape();
        Self {
            n_obs: (0..shape.n_periods()).map(|t| shape.n_obs(c, t) as f64).collect(),
            counts,
            reg,
            c,
        }
    }

    fn periods(&self) -> usize {
        self.counts.shape().n_periods()
    }

    fn zone_sum(&self, x: &[f64], t: usize) -> f64 {
        let nt = self.periods();
        (0..self.counts.shape().n_zones()).map(|i| x[i * nt + t]).sum()
    }

    fn penalty(&self, x: &[f64]) -> f64 {
        let nt = self.periods();
        let nz = self.counts.shape().n_zones();
        let mut f = 0.0;
        for (g, &w) in self.reg.groups.iter().zip(&self.reg.group_weights) {
            for i in 0..nz {
                f += group_penalty(|t| x[i * nt + t], g, &self.n_obs, w);
            }
        }
        for t in 0..nt {
            let n2 = self.n_obs[t] * self.n_obs[t];
            if n2 == 0.0 {
                continue;
            }
            for i in 0..nz {
                for &(j, w) in &self.reg.neighbors[i] {
                    f += 0.5 * w * n2 * (x[i * nt + t] - x[j * nt + t]).powi(2);
                }
            }
        }
        f
    }

    fn penalty_grad(&self, x: &[f64], grad: &mut [f64], mut hess: Option<&mut [f64]>) {
        let nt = self.periods();
        let nz = self.counts.shape().n_zones();
        for (g, &w) in self.reg.groups.iter().zip(&self.reg.group_weights) {
            for i in 0..nz {
                group_penalty_grad(
                    |t| x[i * nt + t],
                    |t| i * nt + t,
                    g,
                    &self.n_obs,
                    w,
                    grad,
                    hess.as_deref_mut(),
                );
            }
        }
        for t in 0..nt {
            let n2 = self.n_obs[t] * self.n_obs[t];
            if n2 == 0.0 {
                continue;
            }
            for i in 0..nz {
                let k = i * nt + t;
                for &(j, w) in &self.reg.neighbors[i] {
                    grad[k] += 2.0 * w * n2 * (x[k] - x[j * nt + t]);
                    if let Some(h) = hess.as_deref_mut() {
                        h[k] += 2.0 * w * n2;
                    }
                }
            }
        }
    }
}

impl Objective for IntensityLoss<'_> {
    fn dim(&self) -> usize {
        self.counts.shape().n_zones() * self.periods()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let shape = self.counts.shape();
        let nt = self.periods();
        let c = self.c;
        let mut f = 0.0;
        for t in 0..nt {
            let s = self.zone_sum(x, t);
            f += self.n_obs[t] * shape.duration(t) * s;
            let m0 = self.counts.m0_total(c, t) as f64;
            if m0 > 0.0 {
                if s <= 0.0 {
                    return f64::INFINITY;
                }
                f -= m0 * s.ln();
            }
            for i in 0..shape.n_zones() {
                let m1 = self.counts.m1_obs_total(c, i, t) as f64;
                if m1 > 0.0 {
                    let v = x[i * nt + t];
                    if v <= 0.0 {
                        return f64::INFINITY;
                    }
                    f -= m1 * v.ln();
                }
            }
        }
        f + self.penalty(x)
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        let shape = self.counts.shape();
        let nt = self.periods();
        let c = self.c;
        for t in 0..nt {
            let s = self.zone_sum(x, t);
            let m0 = self.counts.m0_total(c, t) as f64;
            let common = self.n_obs[t] * shape.duration(t) - if m0 > 0.0 { m0 / s } else { 0.0 };
            for i in 0..shape.n_zones() {
                let k = i * nt + t;
                let m1 = self.counts.m1_obs_total(c, i, t) as f64;
                grad[k] = common - if m1 > 0.0 { m1 / x[k] } else { 0.0 };
            }
        }
        self.penalty_grad(x, grad, None);
    }

    fn scaling(&self, x: &[f64], diag: &mut [f64]) -> bool {
        let shape = self.counts.shape();
        let nt = self.periods();
        let c = self.c;
        for t in 0..nt {
            let s = self.zone_sum(x, t);
            let m0 = self.counts.m0_total(c, t) as f64;
            let common = if m0 > 0.0 { m0 / (s * s) } else { 0.0 };
            for i in 0..shape.n_zones() {
                let k = i * nt + t;
                let m1 = self.counts.m1_obs_total(c, i, t) as f64;
                diag[k] = common + m1 / (x[k] * x[k]);
            }
        }
        let mut scratch = vec![0.0; diag.len()];
        self.penalty_grad(x, &mut scratch, Some(diag));
        invert_curvature(diag);
        true
    }
}

/// `ℓ₂` restricted to one arrival type; variables are `p_{c,t}` over periods.
pub(crate) struct ProbabilityLoss<'a> {
    counts: &'a CountData,
    reg: &'a RegularizationSpec,
    c: usize,
    n_obs: Vec<f64>,
}

impl<'a> ProbabilityLoss<'a> {
    pub(crate) fn new(counts: &'a CountData, reg: &'a RegularizationSpec, c: usize) -> Self {
        let shape = counts.shape();
        Self {
            n_obs: (0..shape.n_periods()).map(|t| shape.n_obs(c, t) as f64).collect(),
            counts,
            reg,
            c,
        }
    }
}

impl Objective for ProbabilityLoss<'_> {
    fn dim(&self) -> usize {
        self.counts.shape().n_periods()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let mut f = 0.0;
        for (t, &p) in x.iter().enumerate() {
            let m0 = self.counts.m0_total(self.c, t) as f64;
            let m1 = self.counts.m1_zone_total(self.c, t) as f64;
            if (m0 > 0.0 && p <= 0.0) || (m1 > 0.0 && p >= 1.0) {
                return f64::INFINITY;
            }
            if m0 > 0.0 {
                f -= m0 * p.ln();
            }
            if m1 > 0.0 {
                f -= m1 * (1.0 - p).ln();
            }
        }
        for (g, &w) in self.reg.groups.iter().zip(&self.reg.group_weights) {
            f += group_penalty(|t| x[t], g, &self.n_obs, w);
        }
        f
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        for (t, &p) in x.iter().enumerate() {
            let m0 = self.counts.m0_total(self.c, t) as f64;
            let m1 = self.counts.m1_zone_total(self.c, t) as f64;
            grad[t] = (if m1 > 0.0 { m1 / (1.0 - p) } else { 0.0 })
                - (if m0 > 0.0 { m0 / p } else { 0.0 });
        }
        for (g, &w) in self.reg.groups.iter().zip(&self.reg.group_weights) {
            group_penalty_grad(|t| x[t], |t| t, g, &self.n_obs, w, grad, None);
        }
    }

    fn scaling(&self, x: &[f64], diag: &mut [f64]) -> bool {
        for (t, &p) in x.iter().enumerate() {
            let m0 = self.counts.m0_total(self.c, t) as f64;
            let m1 = self.counts.m1_zone_total(self.c, t) as f64;
            diag[t] = m0 / (p * p) + m1 / ((1.0 - p) * (1.0 - p));
        }
        let mut scratch = vec![0.0; diag.len()];
        for (g, &w) in self.reg.groups.iter().zip(&self.reg.group_weights) {
            group_penalty_grad(|t| x[t], |t| t, g, &self.n_obs, w, &mut scratch, Some(diag));
        }
        invert_curvature(diag);
        true
    }
}

/// Turns diagonal curvature into a step scaling, guarding flat coordinates.
pub(crate) fn invert_curvature(diag: &mut [f64]) {
    for d in diag.iter_mut() {
        *d = 1.0 / d.max(1e-12);
    }
}

fn type_slice(values: &[f64], shape: &ProblemShape, c: usize) -> std::ops::Range<usize> {
    let len = shape.n_zones() * shape.n_periods();
    debug_assert_eq!(values.len(), shape.n_cells());
    c * len..(c + 1) * len
}

/// `ℓ₁(λ)`: negative intensity log-likelihood plus time-group and
/// neighbour penalties.
pub fn loss_l1(
    lambda: &IntensityField,
    counts: &CountData,
    reg: &RegularizationSpec,
) -> Result<f64> {
    let shape = counts.shape();
    reg.check(shape)?;
    if lambda.dims() != (shape.n_types(), shape.n_zones(), shape.n_periods()) {
        return Err(Error::shape("intensity field does not match shape"));
    }
    let mut total = 0.0;
    for c in 0..shape.n_types() {
        let x = &lambda.values()[type_slice(lambda.values(), shape, c)];
        let f = IntensityLoss::new(counts, reg, c).value(x);
        if !f.is_finite() {
            return Err(Error::domain(format!(
                "zero intensity where a positive count is observed (type {c})"
            )));
        }
        total += f;
    }
    Ok(total)
}

/// Gradient of [`loss_l1`], laid out like the intensity field.
pub fn loss_l1_gradient(
    lambda: &IntensityField,
    counts: &CountData,
    reg: &RegularizationSpec,
) -> Result<Vec<f64>> {
    loss_l1(lambda, counts, reg)?;
    let shape = counts.shape();
    let mut grad = vec![0.0; shape.n_cells()];
    for c in 0..shape.n_types() {
        let range = type_slice(lambda.values(), shape, c);
        IntensityLoss::new(counts, reg, c).gradient(&lambda.values()[range.clone()], &mut grad[range]);
    }
    Ok(grad)
}

fn p_values(p: &BlockProbabilities, shape: &ProblemShape) -> Result<Vec<f64>> {
    if p.dims() != (shape.n_types(), shape.n_periods()) {
        return Err(Error::shape("probability table does not match shape"));
    }
    p.values()
        .iter()
        .enumerate()
        .map(|(k, v)| match v {
            Some(v) if *v > 0.0 && *v < 1.0 => Ok(*v),
            other => Err(Error::domain(format!(
                "probability {other:?} at block {k} outside (0, 1)"
            ))),
        })
        .collect()
}

/// `ℓ₂(p)`: negative Bernoulli log-likelihood of the location flags plus the
/// time-group penalty.
pub fn loss_l2(p: &BlockProbabilities, counts: &CountData, reg: &RegularizationSpec) -> Result<f64> {
    let shape = counts.shape();
    reg.check(shape)?;
    let values = p_values(p, shape)?;
    let nt = shape.n_periods();
    Ok((0..shape.n_types())
        .map(|c| ProbabilityLoss::new(counts, reg, c).value(&values[c * nt..(c + 1) * nt]))
        .sum())
}

pub fn loss_l2_gradient(
    p: &BlockProbabilities,
    counts: &CountData,
    reg: &RegularizationSpec,
) -> Result<Vec<f64>> {
    let shape = counts.shape();
    reg.check(shape)?;
    let values = p_values(p, shape)?;
    let nt = shape.n_periods();
    let mut grad = vec![0.0; values.len()];
    for c in 0..shape.n_types() {
        ProbabilityLoss::new(counts, reg, c)
            .gradient(&values[c * nt..(c + 1) * nt], &mut grad[c * nt..(c + 1) * nt]);
    }
    Ok(grad)
}

#[derive(Debug, Clone)]
pub struct RegularizedEstimate {
    pub lambda: IntensityField,
    pub p: BlockProbabilities,
    pub lambda_objective: f64,
    pub p_objective: f64,
    /// One objective trace per arrival type.
    pub lambda_traces: Vec<Vec<f64>>,
    pub p_traces: Vec<Vec<f64>>,
    pub terminations: Vec<Termination>,
}

/// Solves `min_{λ ≥ ε} ℓ₁(λ)` and `min_{ε ≤ p ≤ 1−ε} ℓ₂(p)`, warm-started at
/// the closed-form estimates.
pub fn estimate_regularized(
    counts: &CountData,
    reg: &RegularizationSpec,
    config: &SolverConfig,
) -> Result<RegularizedEstimate> {
    config.validate()?;
    let shape = counts.shape();
    reg.check(shape)?;
    let floor = config.lambda_floor();
    let eps = config.eps;
    let nt = shape.n_periods();
    let per_type = shape.n_zones() * nt;

    let analytic = estimate_lambda(counts);
    let p_hat = estimate_p_per_ct(counts);
    let p_fallback = estimate_p_global(counts).unwrap_or(0.5);

    let mut lambda = vec![0.0; shape.n_cells()];
    let mut p = vec![None; shape.n_blocks()];
    let mut out = RegularizedEstimate {
        lambda: analytic.clone(),
        p: p_hat.clone(),
        lambda_objective: 0.0,
        p_objective: 0.0,
        lambda_traces: Vec::new(),
        p_traces: Vec::new(),
        terminations: Vec::new(),
    };

    for c in 0..shape.n_types() {
        let x0: Vec<f64> = (0..per_type)
            .map(|k| {
                let t = k % nt;
                if analytic.is_estimated(c, t) {
                    analytic.values()[c * per_type + k].max(floor)
                } else {
                    floor
                }
            })
            .collect();
        let loss = IntensityLoss::new(counts, reg, c);
        let bounds = BoxBounds::uniform(per_type, floor, f64::INFINITY)?;
        let sol = projected_gradient(&loss, &bounds, &x0, config)?;
        lambda[c * per_type..(c + 1) * per_type].copy_from_slice(&sol.x);
        out.lambda_objective += sol.objective;
        out.lambda_traces.push(sol.trace);
        out.terminations.push(sol.termination);

        let p0: Vec<f64> = (0..nt)
            .map(|t| p_hat.get(c, t).unwrap_or(p_fallback).clamp(eps, 1.0 - eps))
            .collect();
        let loss = ProbabilityLoss::new(counts, reg, c);
        let bounds = BoxBounds::uniform(nt, eps, 1.0 - eps)?;
        let sol = projected_gradient(&loss, &bounds, &p0, config)?;
        for t in 0..nt {
            let informed = if reg.is_zero() {
                p_hat.get(c, t).is_some()
            } else {
                shape.n_obs(c, t) > 0
            };
            p[c * nt + t] = informed.then_some(sol.x[t]);
        }
        out.p_objective += sol.objective;
        out.p_traces.push(sol.trace);
        out.terminations.push(sol.termination);
    }

    let status: Vec<BlockStatus> = (0..shape.n_blocks())
        .map(|b| {
            let (c, t) = (b / nt, b % nt);
            if shape.n_obs(c, t) == 0 {
                BlockStatus::NoObservations
            } else if reg.is_zero() {
                analytic.status(c, t)
            } else {
                BlockStatus::Estimated
            }
        })
        .collect();
    out.lambda = IntensityField::with_status(shape, lambda, status)?;
    out.p = BlockProbabilities::new(shape, p)?;
    Ok(out)
}

/// Runs [`estimate_regularized`] with `W_G = w_{i,j} = w` for each weight.
pub fn weight_sweep(
    counts: &CountData,
    groups: &[Vec<usize>],
    adjacency: &[Vec<usize>],
    weights: &[f64],
    config: &SolverConfig,
) -> Result<Vec<(f64, RegularizedEstimate)>> {
    let nt = counts.shape().n_periods();
    weights
        .iter()
        .map(|&w| {
            let reg = RegularizationSpec::uniform(w, nt, groups.to_vec(), adjacency)?;
            Ok((w, estimate_regularized(counts, &reg, config)?))
        })
        .collect()
}
