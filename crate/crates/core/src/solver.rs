//! Projected gradient with Armijo backtracking along the feasible direction,
//! over a box `lower ≤ x ≤ upper`.
//!
//! Each iteration forms `d = P(x − β̄·D·∇f(x)) − x` and accepts
//! `x + t·d` for the first `t ∈ {1, ½, ¼, …}` with
//! `f(x + t·d) ≤ f(x) + σ·t·∇f(x)ᵀd`. `D` is the identity unless the
//! objective supplies a positive diagonal scaling; since the feasible set is
//! a box, the projection is the same clip either way and `d` stays a descent
//! direction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Lower bound / boundary margin for the estimated quantities.
    pub eps: f64,
    /// Armijo slope fraction.
    pub sigma: f64,
    /// Initial step along the (scaled) negative gradient.
    pub beta_bar: f64,
    pub max_iter: usize,
    /// Relative tolerance on both the objective decrease and the step.
    pub tol: f64,
    pub max_backtracks: usize,
    /// Lower bound on intensities; defaults to `eps`.
    pub lower_lambda: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            sigma: 0.5,
            beta_bar: 2.0,
            max_iter: 1000,
            tol: 1e-8,
            max_backtracks: 50,
            lower_lambda: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return Err(Error::domain(format!("eps {} must lie in (0, 0.5)", self.eps)));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(Error::domain(format!("sigma {} must lie in (0, 1)", self.sigma)));
        }
        if !(self.beta_bar > 0.0 && self.beta_bar.is_finite()) {
            return Err(Error::domain(format!("beta_bar {} must be > 0", self.beta_bar)));
        }
        if self.max_iter == 0 {
            return Err(Error::domain("max_iter must be at least 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::domain("tol must be nonnegative"));
        }
        if let Some(l) = self.lower_lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::domain(format!("lower_lambda {l} must be > 0")));
            }
        }
        Ok(())
    }

    pub fn lambda_floor(&self) -> f64 {
        self.lower_lambda.unwrap_or(self.eps)
    }
}

/// A differentiable objective on a box. `value` may return `+∞` outside the
/// domain; such trial points are rejected by the line search.
pub trait Objective {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64], grad: &mut [f64]);

    /// Positive diagonal scaling for the gradient step, if any.
    fn scaling(&self, _x: &[f64], _diag: &mut [f64]) -> bool {
        false
    }
}

/// Adapts a pair of closures to [`Objective`].
pub struct FnObjective<F, G> {
    dim: usize,
    value: F,
    gradient: G,
}

impl<F, G> FnObjective<F, G>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut [f64]),
{
    pub fn new(dim: usize, value: F, gradient: G) -> Self {
        Self {
            dim,
            value,
            gradient,
        }
    }
}

impl<F, G> Objective for FnObjective<F, G>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut [f64]),
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        (self.gradient)(x, grad)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::shape("box bounds differ in length"));
        }
        if let Some(k) = (0..lower.len()).find(|&k| !(lower[k] <= upper[k])) {
            return Err(Error::domain(format!(
                "empty box at coordinate {k}: [{}, {}]",
                lower[k], upper[k]
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.len()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn project(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *u);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Objective decrease and step both fell below tolerance.
    Converged,
    /// The projected direction vanished.
    Stationary,
    /// No step satisfied the Armijo condition within the backtracking budget.
    LineSearchStalled,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Objective at the start point followed by one entry per accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

pub fn projected_gradient<O: Objective + ?Sized>(
    objective: &O,
    bounds: &BoxBounds,
    x0: &[f64],
    config: &SolverConfig,
) -> Result<Solution> {
    config.validate()?;
    let n = objective.dim();
    if x0.len() != n || bounds.len() != n {
        return Err(Error::shape(format!(
            "dimension mismatch: objective {n}, start {}, bounds {}",
            x0.len(),
            bounds.len()
        )));
    }
    if !bounds.contains(x0) {
        return Err(Error::solver("start point is infeasible", x0));
    }

    let mut x = x0.to_vec();
    let mut fx = objective.value(&x);
    if !fx.is_finite() {
        return Err(Error::solver(
            format!("objective is {fx} at the start point"),
            &x,
        ));
    }
    let mut trace = vec![fx];
    let mut grad = vec![0.0; n];
    let mut scale = vec![1.0; n];
    let mut dir = vec![0.0; n];
    let mut trial = vec![0.0; n];

    for iter in 0..config.max_iter {
        objective.gradient(&x, &mut grad);
        if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::solver(
                format!("gradient entry {k} is {} at iteration {iter}", grad[k]),
                &x,
            ));
        }
        if objective.scaling(&x, &mut scale) {
            if let Some(k) = scale.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
                return Err(Error::solver(
                    format!("scaling entry {k} is {} at iteration {iter}", scale[k]),
                    &x,
                ));
            }
        } else {
            scale.iter_mut().for_each(|s| *s = 1.0);
        }

        for k in 0..n {
            let target = (x[k] - config.beta_bar * scale[k] * grad[k])
                .clamp(bounds.lower[k], bounds.upper[k]);
            dir[k] = target - x[k];
        }
        let slope: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        if dir.iter().all(|d| *d == 0.0) || slope >= 0.0 {
            return Ok(Solution {
                x,
                objective: fx,
                trace,
                iterations: iter,
                termination: Termination::Stationary,
            });
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=config.max_backtracks {
            for k in 0..n {
                trial[k] = (x[k] + step * dir[k]).clamp(bounds.lower[k], bounds.upper[k]);
            }
            let ft = objective.value(&trial);
            if ft.is_finite() && ft <= fx + config.sigma * step * slope {
                accepted = Some(ft);
                break;
            }
            step *= 0.5;
        }
        let Some(f_new) = accepted else {
            return Ok(Solution {
                x,
                objective: fx,
                trace,
                iterations: iter,
                termination: Termination::LineSearchStalled,
            });
        };

        let moved = x
            .iter()
            .zip(&trial)
            .all(|(a, b)| (a - b).abs() <= config.tol * a.abs().max(1e-12));
        let decrease = fx - f_new;
        std::mem::swap(&mut x, &mut trial);
        fx = f_new;
        trace.push(fx);
        if moved && decrease <= config.tol * trace[trace.len() - 2].abs().max(1.0) {
            return Ok(Solution {
                x,
                objective: fx,
                trace,
                iterations: iter + 1,
                termination: Termination::Converged,
            });
        }
    }

    Ok(Solution {
        x,
        objective: fx,
        iterations: config.max_iter,
        trace,
        termination: Termination::MaxIterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(center: Vec<f64>) -> impl Objective {
        let c2 = center.clone();
        FnObjective::new(
            center.len(),
            move |x: &[f64]| x.iter().zip(&center).map(|(a, b)| (a - b).powi(2)).sum(),
            move |x: &[f64], g: &mut [f64]| {
                for k in 0..x.len() {
                    g[k] = 2.0 * (x[k] - c2[k]);
                }
            },
        )
    }

    #[test]
    fn interior_minimizer() {
        let f = quadratic(vec![0.3, -1.2, 2.0]);
        let b = BoxBounds::uniform(3, -5.0, 5.0).unwrap();
        let sol = projected_gradient(&f, &b, &[4.0, 4.0, -4.0], &SolverConfig::default()).unwrap();
        assert!(sol.iterations <= 200);
        for (a, b) in sol.x.iter().zip([0.3, -1.2, 2.0]) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn exterior_minimizer_projects() {
        let f = quadratic(vec![3.0, -2.0, 0.5]);
        let b = BoxBounds::new(vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 1.0]).unwrap();
        let sol = projected_gradient(&f, &b, &[0.5, 0.5, 0.5], &SolverConfig::default()).unwrap();
        for (a, b) in sol.x.iter().zip([1.0, 0.0, 0.5]) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn trace_is_monotone_on_ill_conditioned_problem() {
        let weights = [1.0, 50.0, 0.02];
        let f = FnObjective::new(
            3,
            move |x: &[f64]| (0..3).map(|k| weights[k] * (x[k] - 1.0).powi(2)).sum(),
            move |x: &[f64], g: &mut [f64]| {
                for k in 0..3 {
                    g[k] = 2.0 * weights[k] * (x[k] - 1.0);
                }
            },
        );
        let b = BoxBounds::uniform(3, 0.0, 10.0).unwrap();
        let sol = projected_gradient(&f, &b, &[9.0, 9.0, 9.0], &SolverConfig::default()).unwrap();
        assert!(sol.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(b.contains(&sol.x));
    }

    #[test]
    fn rejects_infeasible_start_and_nan() {
        let f = quadratic(vec![0.0]);
        let b = BoxBounds::uniform(1, 0.0, 1.0).unwrap();
        assert!(matches!(
            projected_gradient(&f, &b, &[2.0], &SolverConfig::default()),
            Err(Error::Solver { .. })
        ));
        let nan = FnObjective::new(1, |_: &[f64]| 1.0, |_: &[f64], g: &mut [f64]| g[0] = f64::NAN);
        match projected_gradient(&nan, &b, &[0.5], &SolverConfig::default()) {
            Err(Error::Solver { iterate, .. }) => assert_eq!(iterate, vec![0.5]),
            other => panic!("expected solver error, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let bad = SolverConfig {
            sigma: 1.0,
            ..SolverConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(SolverConfig {
            max_iter: 0,
            ..SolverConfig::default()
        }
        .validate()
        .is_err());
    }
}
