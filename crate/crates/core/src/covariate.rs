//! Covariate model: `λ_{c,i,t} 𝒟_t = β_{c,t}ᵀ x_i` with nonnegative zone
//! features (population first, then land-use areas).
//!
//! Each `(c, t)` block has its own coefficient vector and its own
//! independent problem. The solver works on column-scaled coefficients
//! `β̃_k = β_k · x̄_k` so that all coordinates have comparable magnitude.

use crate::analytic::{estimate_lambda, estimate_p_per_ct, BlockProbabilities};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{BlockStatus, CountData, IntensityField, ProblemShape};
use crate::regularized::invert_curvature;
use crate::solver::{projected_gradient, BoxBounds, Objective, SolverConfig, Termination};

/// Time-invariant zone features `x_i`, zone-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateData {
    n_zones: usize,
    n_features: usize,
    x: Vec<f64>,
    column_sum: Vec<f64>,
}

impl CovariateData {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_zones = rows.len();
        let n_features = rows.first().map_or(0, Vec::len);
        if n_zones == 0 || n_features == 0 {
            return Err(Error::shape("covariates need at least one zone and one feature"));
        }
        if rows.iter().any(|r| r.len() != n_features) {
            return Err(Error::shape("every zone needs the same number of features"));
        }
        let x: Vec<f64> = rows.into_iter().flatten().collect();
        if let Some(v) = x.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::domain(format!("covariate value {v} must be finite and >= 0")));
        }
        if x.iter().all(|v| *v == 0.0) {
            return Err(Error::domain("all covariates are zero"));
        }
        let mut column_sum = vec![0.0; n_features];
        for row in x.chunks(n_features) {
            for (s, v) in column_sum.iter_mut().zip(row) {
                *s += v;
            }
        }
        Ok(Self {
            n_zones,
            n_features,
            x,
            column_sum,
        })
    }

    pub fn n_zones(&self) -> usize {
        self.n_zones
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn column_sum(&self) -> &[f64] {
        &self.column_sum
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.n_zones).map(|i| self.row(i)[k]).collect()
    }
}

/// Coefficients `β_{c,t}` laid out `(c, t, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaField {
    n_types: usize,
    n_periods: usize,
    n_features: usize,
    values: Vec<f64>,
}

impl BetaField {
    pub fn new(shape: &ProblemShape, n_features: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.n_blocks() * n_features {
            return Err(Error::shape(format!(
                "expected {} coefficients, got {}",
                shape.n_blocks() * n_features,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("coefficients must be finite"));
        }
        Ok(Self {
            n_types: shape.n_types(),
            n_periods: shape.n_periods(),
            n_features,
            values,
        })
    }

    pub fn zeros(shape: &ProblemShape, n_features: usize) -> Self {
        Self {
            n_types: shape.n_types(),
            n_periods: shape.n_periods(),
            n_features,
            values: vec![0.0; shape.n_blocks() * n_features],
        }
    }

    pub fn get(&self, c: usize, t: usize) -> &[f64] {
        let k = (c * self.n_periods + t) * self.n_features;
        &self.values[k..k + self.n_features]
    }

    fn get_mut(&mut self, c: usize, t: usize) -> &mut [f64] {
        let k = (c * self.n_periods + t) * self.n_features;
        &mut self.values[k..k + self.n_features]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n_types, self.n_periods, self.n_features)
    }

    /// `βᵀx_i ≥ 0` for every zone and `0 ≤ β(1) ≤ 1` everywhere.
    pub fn is_feasible(&self, cov: &CovariateData) -> bool {
        self.values.chunks(self.n_features).all(|b| {
            (0.0..=1.0).contains(&b[0])
                && (0..cov.n_zones()).all(|i| dot(b, cov.row(i)) >= 0.0)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize, serde::Serialize)]
#[serde(default)]
pub struct CovariateOptions {
    /// Keep the population coefficient in `[0, 1]`.
    pub cap_population_coefficient: bool,
}

impl Default for CovariateOptions {
    fn default() -> Self {
        Self {
            cap_population_coefficient: true,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `p̂_{c,d,t}`: the per-block estimator on a day-indexed shape. Read entries
/// by day with [`BlockProbabilities::get_day`].
pub fn estimate_p_cdt(counts: &CountData) -> BlockProbabilities {
    estimate_p_per_ct(counts)
}

/// One `(c, t)` block in scaled coordinates `y = β ⊙ x̄`.
struct BlockLoss {
    n_obs: f64,
    m0: f64,
    /// `(ξ_i, M¹_i)` for zones with a located count.
    located: Vec<(Vec<f64>, f64)>,
    xi_sum: Vec<f64>,
}

impl BlockLoss {
    fn new(counts: &CountData, cov: &CovariateData, scale: &[f64], c: usize, t: usize) -> Self {
        let scaled = |row: &[f64]| row.iter().zip(scale).map(|(v, s)| v / s).collect::<Vec<_>>();
        Self {
            n_obs: counts.shape().n_obs(c, t) as f64,
            m0: counts.m0_total(c, t) as f64,
            located: (0..cov.n_zones())
                .filter_map(|i| {
                    let m = counts.m1_obs_total(c, i, t) as f64;
                    (m > 0.0).then(|| (scaled(cov.row(i)), m))
                })
                .collect(),
            xi_sum: scaled(cov.column_sum()),
        }
    }
}

impl Objective for BlockLoss {
    fn dim(&self) -> usize {
        self.xi_sum.len()
    }

    fn value(&self, y: &[f64]) -> f64 {
        let s = dot(y, &self.xi_sum);
        let mut f = self.n_obs * s;
        if self.m0 > 0.0 {
            if s <= 0.0 {
                return f64::INFINITY;
            }
            f -= self.m0 * s.ln();
        }
        for (xi, m) in &self.located {
            let r = dot(y, xi);
            if r <= 0.0 {
                return f64::INFINITY;
            }
            f -= m * r.ln();
        }
        f
    }

    fn gradient(&self, y: &[f64], grad: &mut [f64]) {
        let s = dot(y, &self.xi_sum);
        let coef = self.n_obs - if self.m0 > 0.0 { self.m0 / s } else { 0.0 };
        for (g, x) in grad.iter_mut().zip(&self.xi_sum) {
            *g = coef * x;
        }
        for (xi, m) in &self.located {
            let r = m / dot(y, xi);
            for (g, x) in grad.iter_mut().zip(xi) {
                *g -= r * x;
            }
        }
    }

    fn scaling(&self, y: &[f64], diag: &mut [f64]) -> bool {
        let s = dot(y, &self.xi_sum);
        for (d, x) in diag.iter_mut().zip(&self.xi_sum) {
            *d = if self.m0 > 0.0 { self.m0 * x * x / (s * s) } else { 0.0 };
        }
        for (xi, m) in &self.located {
            let r = dot(y, xi);
            for (d, x) in diag.iter_mut().zip(xi) {
                *d += m * x * x / (r * r);
            }
        }
        invert_curvature(diag);
        true
    }
}

fn check_inputs(counts: &CountData, cov: &CovariateData) -> Result<()> {
    if cov.n_zones() != counts.shape().n_zones() {
        return Err(Error::shape(format!(
            "{} covariate rows for {} zones",
            cov.n_zones(),
            counts.shape().n_zones()
        )));
    }
    Ok(())
}

/// `Σ_{c,t} [N βᵀΣx − M⁰ log(βᵀΣx) − Σ_i M¹_i log(βᵀx_i)]`.
pub fn covariate_neg_log_likelihood(
    beta: &BetaField,
    counts: &CountData,
    cov: &CovariateData,
) -> Result<f64> {
    check_inputs(counts, cov)?;
    let shape = counts.shape();
    if beta.dims() != (shape.n_types(), shape.n_periods(), cov.n_features()) {
        return Err(Error::shape("coefficient field does not match shape"));
    }
    let mut total = 0.0;
    for c in 0..shape.n_types() {
        for t in 0..shape.n_periods() {
            let b = beta.get(c, t);
            let s = dot(b, cov.column_sum());
            total += shape.n_obs(c, t) as f64 * s;
            let m0 = counts.m0_total(c, t) as f64;
            if m0 > 0.0 {
                if s <= 0.0 {
                    return Err(Error::domain(format!(
                        "βᵀΣx = {s} with unlocated arrivals at type {c}, period {t}"
                    )));
                }
                total -= m0 * s.ln();
            }
            for i in 0..cov.n_zones() {
                let m1 = counts.m1_obs_total(c, i, t) as f64;
                if m1 > 0.0 {
                    let r = dot(b, cov.row(i));
                    if r <= 0.0 {
                        return Err(Error::domain(format!(
                            "βᵀx = {r} with located arrivals at type {c}, period {t}, zone {i}"
                        )));
                    }
                    total -= m1 * r.ln();
                }
            }
        }
    }
    Ok(total)
}

/// Gradient of [`covariate_neg_log_likelihood`] in `β`, laid out like the field.
pub fn covariate_gradient(
    beta: &BetaField,
    counts: &CountData,
    cov: &CovariateData,
) -> Result<Vec<f64>> {
    covariate_neg_log_likelihood(beta, counts, cov)?;
    let shape = counts.shape();
    let ones = vec![1.0; cov.n_features()];
    let mut grad = vec![0.0; beta.values().len()];
    for c in 0..shape.n_types() {
        for t in 0..shape.n_periods() {
            let k = (c * shape.n_periods() + t) * cov.n_features();
            let block = BlockLoss::new(counts, cov, &ones, c, t);
            block.gradient(beta.get(c, t), &mut grad[k..k + cov.n_features()]);
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone)]
pub struct CovariateEstimate {
    pub beta: BetaField,
    /// `λ̂_{c,i,t} = β̂ᵀx_i / 𝒟_t`.
    pub lambda: IntensityField,
    pub p: BlockProbabilities,
    pub objective: f64,
    /// One trace per `(c, t)` block that carried observations.
    pub traces: Vec<Vec<f64>>,
    pub terminations: Vec<Termination>,
}

/// Least-squares fit of `yᵀξ_i ≈ target_i`, clipped into the box.
fn least_squares_start(xi: &[Vec<f64>], target: &[f64], bounds: &BoxBounds, floor: f64) -> Vec<f64> {
    let k = bounds.len();
    let mut ata = vec![vec![0.0; k]; k];
    let mut atb = vec![0.0; k];
    for (row, y) in xi.iter().zip(target) {
        for a in 0..k {
            atb[a] += row[a] * y;
            for b in 0..k {
                ata[a][b] += row[a] * row[b];
            }
        }
    }
    let total: f64 = target.iter().sum();
    let fallback = || {
        let mass: f64 = xi.iter().flatten().sum();
        vec![if mass > 0.0 { total / mass } else { floor }; k]
    };
    let mut y = linalg::solve(&ata, &atb)
        .filter(|v| v.iter().all(|x| x.is_finite()))
        .unwrap_or_else(fallback);
    for (v, (lo, hi)) in y.iter_mut().zip(bounds.lower.iter().zip(&bounds.upper)) {
        *v = v.max(floor).clamp(*lo, *hi);
    }
    y
}

/// Maximizes the covariate likelihood block by block over
/// `β ≥ 0` (and `β(1) ≤ 1` when capped).
pub fn estimate_covariate_model(
    counts: &CountData,
    cov: &CovariateData,
    config: &SolverConfig,
    options: &CovariateOptions,
) -> Result<CovariateEstimate> {
    config.validate()?;
    check_inputs(counts, cov)?;
    let shape = counts.shape();
    let nf = cov.n_features();
    let floor = config.eps;
    let scale: Vec<f64> = cov
        .column_sum()
        .iter()
        .map(|s| if *s > 0.0 { s / cov.n_zones() as f64 } else { 1.0 })
        .collect();
    let upper: Vec<f64> = (0..nf)
        .map(|k| {
            if cov.column_sum()[k] == 0.0 {
                0.0
            } else if k == 0 && options.cap_population_coefficient {
                scale[0]
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let bounds = BoxBounds::new(vec![0.0; nf], upper)?;
    let scaled_rows: Vec<Vec<f64>> = (0..cov.n_zones())
        .map(|i| cov.row(i).iter().zip(&scale).map(|(v, s)| v / s).collect())
        .collect();
    let analytic = estimate_lambda(counts);

    let mut beta = BetaField::zeros(shape, nf);
    let mut lambda = vec![0.0; shape.n_cells()];
    let mut status = Vec::with_capacity(shape.n_blocks());
    let mut out_traces = Vec::new();
    let mut terminations = Vec::new();
    let mut objective = 0.0;

    for c in 0..shape.n_types() {
        for t in 0..shape.n_periods() {
            if shape.n_obs(c, t) == 0 {
                status.push(BlockStatus::NoObservations);
                continue;
            }
            status.push(BlockStatus::Estimated);
            for i in 0..cov.n_zones() {
                if counts.m1_obs_total(c, i, t) > 0 && cov.row(i).iter().all(|v| *v == 0.0) {
                    return Err(Error::solver(
                        format!(
                            "infeasible start: zone {i} has no covariates but located arrivals \
                             (type {c}, period {t})"
                        ),
                        &[],
                    ));
                }
            }
            let loss = BlockLoss::new(counts, cov, &scale, c, t);
            if loss.m0 == 0.0 && loss.located.is_empty() {
                // nothing observed: the linear term alone is minimized at 0
                continue;
            }
            let d = shape.duration(t);
            let target: Vec<f64> = (0..cov.n_zones())
                .map(|i| {
                    if analytic.is_estimated(c, t) {
                        analytic.get(c, i, t) * d
                    } else {
                        loss.m0 / loss.n_obs / cov.n_zones() as f64
                    }
                })
                .collect();
            let y0 = least_squares_start(&scaled_rows, &target, &bounds, floor);
            let sol = projected_gradient(&loss, &bounds, &y0, config)?;
            objective += sol.objective;
            out_traces.push(sol.trace);
            terminations.push(sol.termination);
            let b = beta.get_mut(c, t);
            for (k, v) in b.iter_mut().enumerate() {
                *v = sol.x[k] / scale[k];
            }
            for i in 0..cov.n_zones() {
                lambda[shape.cell_index(c, i, t)] = dot(beta.get(c, t), cov.row(i)) / d;
            }
        }
    }

    Ok(CovariateEstimate {
        lambda: IntensityField::with_status(shape, lambda, status)?,
        p: estimate_p_cdt(counts),
        beta,
        objective,
        traces: out_traces,
        terminations,
    })
}
