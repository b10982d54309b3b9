//! Population-share model: an unlocated arrival comes from zone `i` with
//! probability `π_i = P_i / P`.
//!
//! The likelihood of one observation `(c, t, n)` is
//! `u = Π_i e^{−λ_i 𝒟} · E_{M ~ μ(π, M⁰)} Π_i (λ_i 𝒟)^{M_i + M¹_i} / (M_i + M¹_i)!`.
//! The expectation is replaced by a frozen Monte-Carlo average, or by the
//! exact sum over allocations when there are few of them. The problem then
//! separates by `(c, t)` block.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Binomial, Distribution};
use statrs::function::factorial::ln_factorial;

use crate::analytic::{estimate_lambda, estimate_total};
use crate::error::{Error, Result};
use crate::model::{BlockStatus, CountData, IntensityField};
use crate::regularized::invert_curvature;
use crate::solver::{projected_gradient, BoxBounds, Objective, SolverConfig, Termination};

/// `π_i = P_i / P`.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationShares {
    populations: Vec<f64>,
    shares: Vec<f64>,
}

impl PopulationShares {
    pub fn new(populations: Vec<f64>) -> Result<Self> {
        if let Some(v) = populations.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
            return Err(Error::domain(format!("population {v} must be finite and >= 0")));
        }
        let total: f64 = populations.iter().sum();
        if populations.is_empty() || total <= 0.0 {
            return Err(Error::domain("total population must be positive"));
        }
        Ok(Self {
            shares: populations.iter().map(|v| v / total).collect(),
            populations,
        })
    }

    pub fn shares(&self) -> &[f64] {
        &self.shares
    }

    pub fn populations(&self) -> &[f64] {
        &self.populations
    }

    pub fn len(&self) -> usize {
        self.shares.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shares.is_empty()
    }
}

/// Draws `s` allocations of `m_bar` items over zones from `μ(π, m_bar)`.
pub fn sample_multinomial(pi: &PopulationShares, m_bar: u64, s: usize, seed: u64) -> Vec<Vec<u64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = MultinomialSampler::new(pi.shares());
    (0..s).map(|_| sampler.draw(m_bar, &mut rng)).collect()
}

/// Few items are placed one at a time through a weighted index; many items
/// use conditional binomial splits.
struct MultinomialSampler<'a> {
    shares: &'a [f64],
    index: WeightedIndex<f64>,
}

impl<'a> MultinomialSampler<'a> {
    fn new(shares: &'a [f64]) -> Self {
        Self {
            shares,
            index: WeightedIndex::new(shares).expect("valid shares"),
        }
    }

    fn draw(&self, m_bar: u64, rng: &mut ChaCha8Rng) -> Vec<u64> {
        let mut out = vec![0; self.shares.len()];
        if m_bar < self.shares.len() as u64 {
            for _ in 0..m_bar {
                out[self.index.sample(rng)] += 1;
            }
            return out;
        }
        let mut left = m_bar;
        let mut mass = 1.0;
        for (k, &p) in self.shares.iter().enumerate() {
            if left == 0 {
                break;
            }
            if k + 1 == self.shares.len() || p >= mass {
                out[k] = left;
                break;
            }
            let q = (p / mass).clamp(0.0, 1.0);
            let x = Binomial::new(left, q).expect("probability in [0, 1]").sample(rng);
            out[k] = x;
            left -= x;
            mass -= p;
        }
        out
    }
}

/// One allocation of the unlocated arrivals with its weight in the
/// expectation: `1/S` per Monte-Carlo draw, or the multinomial probability
/// when enumerating.
#[derive(Debug, Clone, PartialEq)]
struct WeightedAllocation {
    log_weight: f64,
    /// `(zone, count)` for zones receiving at least one arrival.
    counts: Vec<(usize, u64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationSet {
    m_bar: u64,
    exhaustive: bool,
    entries: Vec<WeightedAllocation>,
}

impl AllocationSet {
    pub fn m_bar(&self) -> u64 {
        self.m_bar
    }

    pub fn is_exhaustive(&self) -> bool {
        self.exhaustive
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Dense allocations with their (linear) weights.
    pub fn allocations(&self, n_zones: usize) -> Vec<(Vec<u64>, f64)> {
        self.entries
            .iter()
            .map(|e| {
                let mut dense = vec![0; n_zones];
                for &(i, k) in &e.counts {
                    dense[i] = k;
                }
                (dense, e.log_weight.exp())
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Deserialize, serde::Serialize)]
#[serde(default)]
pub struct McConfig {
    /// Draws per observation `S_{c,t,n}`.
    pub samples: usize,
    pub seed: u64,
    /// Enumerate all allocations when there are at most this many.
    pub exhaustive_limit: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            samples: 100,
            seed: 0,
            exhaustive_limit: 10_000,
        }
    }
}

/// Frozen allocations for every observation with unlocated arrivals.
#[derive(Debug, Clone, PartialEq)]
pub struct McSample {
    seed: u64,
    n_zones: usize,
    /// Copy of `M⁰`, used to detect a sample built for different counts.
    m0: Vec<u64>,
    sets: Vec<Option<AllocationSet>>,
}

/// `C(m + k − 1, k − 1)`, saturating.
fn allocation_count(m: u64, k: usize) -> u64 {
    if k <= 1 {
        return 1;
    }
    let r = (k - 1) as u128;
    let n = m as u128 + r;
    let j = r.min(m as u128);
    let mut acc: u128 = 1;
    for step in 1..=j {
        acc = acc * (n - j + step) / step;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

fn enumerate_allocations(support: &[usize], shares: &[f64], m_bar: u64) -> Vec<WeightedAllocation> {
    fn rec(
        support: &[usize],
        shares: &[f64],
        left: u64,
        acc: &mut Vec<(usize, u64)>,
        log_w: f64,
        out: &mut Vec<WeightedAllocation>,
    ) {
        let (&zone, rest) = support.split_first().expect("non-empty support");
        let term = |k: u64| k as f64 * shares[zone].ln() - ln_factorial(k);
        if rest.is_empty() {
            if left > 0 {
                acc.push((zone, left));
            }
            out.push(WeightedAllocation {
                log_weight: log_w + term(left),
                counts: acc.clone(),
            });
            if left > 0 {
                acc.pop();
            }
            return;
        }
        for k in 0..=left {
            if k > 0 {
                acc.push((zone, k));
            }
            rec(rest, shares, left - k, acc, log_w + term(k), out);
            if k > 0 {
                acc.pop();
            }
        }
    }
    let mut out = Vec::new();
    rec(support, shares, m_bar, &mut Vec::new(), ln_factorial(m_bar), &mut out);
    out
}

impl McSample {
    /// Draws (or enumerates) allocations for every `(c, t, n)` with `M⁰ > 0`.
    /// Each observation uses its own random stream, so the result does not
    /// depend on evaluation order.
    pub fn build(counts: &CountData, pi: &PopulationShares, config: &McConfig) -> Result<Self> {
        let shape = counts.shape();
        if pi.len() != shape.n_zones() {
            return Err(Error::shape(format!(
                "{} population shares for {} zones",
                pi.len(),
                shape.n_zones()
            )));
        }
        if config.samples == 0 {
            return Err(Error::Config {
                key: "mc_samples".into(),
                message: "must be at least 1".into(),
            });
        }
        let support: Vec<usize> = (0..pi.len()).filter(|&i| pi.shares()[i] > 0.0).collect();
        let m0 = counts.raw_m0().to_vec();
        let sampler = MultinomialSampler::new(pi.shares());
        let sets = m0
            .iter()
            .enumerate()
            .map(|(k, &m_bar)| {
                if m_bar == 0 {
                    return None;
                }
                if allocation_count(m_bar, support.len()) <= config.exhaustive_limit {
                    return Some(AllocationSet {
                        m_bar,
                        exhaustive: true,
                        entries: enumerate_allocations(&support, pi.shares(), m_bar),
                    });
                }
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(k as u64);
                let mut draws: Vec<Vec<(usize, u64)>> = (0..config.samples)
                    .map(|_| {
                        let dense = sampler.draw(m_bar, &mut rng);
                        let sparse: Vec<(usize, u64)> =
                            dense.into_iter().enumerate().filter(|(_, v)| *v > 0).collect();
                        assert_eq!(sparse.iter().map(|(_, v)| v).sum::<u64>(), m_bar);
                        sparse
                    })
                    .collect();
                draws.sort_unstable();
                let log_s = (config.samples as f64).ln();
                let mut entries: Vec<WeightedAllocation> = Vec::new();
                for chunk in draws.chunk_by(|a, b| a == b) {
                    entries.push(WeightedAllocation {
                        log_weight: (chunk.len() as f64).ln() - log_s,
                        counts: chunk[0].clone(),
                    });
                }
                Some(AllocationSet {
                    m_bar,
                    exhaustive: false,
                    entries,
                })
            })
            .collect();
        Ok(Self {
            seed: config.seed,
            n_zones: shape.n_zones(),
            m0,
            sets,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn set(&self, counts: &CountData, c: usize, t: usize, n: usize) -> Option<&AllocationSet> {
        self.sets[counts.shape().m0_index(c, t, n)].as_ref()
    }

    fn check(&self, counts: &CountData) -> Result<()> {
        if self.n_zones != counts.shape().n_zones() || self.m0 != counts.raw_m0() {
            return Err(Error::Contract(
                "Monte-Carlo sample was drawn for different unlocated counts".into(),
            ));
        }
        Ok(())
    }
}

/// One observation of a block with everything that does not depend on `λ`
/// folded into constants.
struct ObservationTerm {
    /// `(zone, M¹)` for zones with located arrivals.
    located: Vec<(usize, u64)>,
    /// `−Σ_i log M¹_i!`.
    constant: f64,
    /// Per allocation: `log w_s + Σ_i (log M¹_i! − log (M¹_i + M^s_i)!)` and
    /// the sparse allocation itself.
    allocations: Vec<(f64, Vec<(usize, u64)>)>,
}

/// `−Σ_n log u_{c,t,n}` for one `(c, t)` block, variables `λ_{c,·,t}`.
struct BlockLoss {
    duration: f64,
    n_obs: f64,
    n_zones: usize,
    terms: Vec<ObservationTerm>,
}

impl BlockLoss {
    fn new(counts: &CountData, sample: &McSample, c: usize, t: usize) -> Self {
        let shape = counts.shape();
        let n_zones = shape.n_zones();
        let terms = (0..shape.n_obs(c, t))
            .map(|n| {
                let dense: Vec<u64> = (0..n_zones).map(|i| counts.m1(c, i, t, n)).collect();
                let located: Vec<(usize, u64)> =
                    dense.iter().copied().enumerate().filter(|(_, m)| *m > 0).collect();
                let allocations = sample
                    .set(counts, c, t, n)
                    .map(|set| {
                        set.entries
                            .iter()
                            .map(|a| {
                                let shift: f64 = a
                                    .counts
                                    .iter()
                                    .map(|&(i, k)| ln_factorial(dense[i]) - ln_factorial(dense[i] + k))
                                    .sum();
                                (a.log_weight + shift, a.counts.clone())
                            })
                            .collect()
                    })
                    .unwrap_or_default();
                ObservationTerm {
                    constant: -located.iter().map(|(_, m)| ln_factorial(*m)).sum::<f64>(),
                    located,
                    allocations,
                }
            })
            .collect();
        Self {
            duration: shape.duration(t),
            n_obs: shape.n_obs(c, t) as f64,
            n_zones,
            terms,
        }
    }

    /// `log u + 𝒟 Σλ` for one observation; adds `E[M¹_i + M_i]` under the
    /// posterior allocation weights to `expected` when given.
    fn log_term(
        &self,
        term: &ObservationTerm,
        log_rate: &[f64],
        mut expected: Option<&mut [f64]>,
    ) -> f64 {
        let xlog = |k: u64, i: usize| if k == 0 { 0.0 } else { k as f64 * log_rate[i] };
        let base = term.constant + term.located.iter().map(|&(i, m)| xlog(m, i)).sum::<f64>();
        if let Some(e) = expected.as_deref_mut() {
            for &(i, m) in &term.located {
                e[i] += m as f64;
            }
        }
        if term.allocations.is_empty() {
            return base;
        }
        let logs: Vec<f64> = term
            .allocations
            .iter()
            .map(|(c, a)| c + a.iter().map(|&(i, k)| xlog(k, i)).sum::<f64>())
            .collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if top == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let norm: f64 = logs.iter().map(|l| (l - top).exp()).sum();
        if let Some(e) = expected {
            for ((_, a), l) in term.allocations.iter().zip(&logs) {
                let w = (l - top).exp() / norm;
                for &(i, k) in a {
                    e[i] += w * k as f64;
                }
            }
        }
        base + top + norm.ln()
    }

    fn log_rates(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|l| (l * self.duration).ln()).collect()
    }

    /// `log u_{c,t,n}` for observation `n`.
    fn observation(&self, n: usize, x: &[f64]) -> f64 {
        let lr = self.log_rates(x);
        self.log_term(&self.terms[n], &lr, None) - self.duration * x.iter().sum::<f64>()
    }

    /// `Σ_n E[M¹_i + M_i]`, the posterior expected arrivals per zone.
    fn expected_counts(&self, x: &[f64]) -> Vec<f64> {
        let lr = self.log_rates(x);
        let mut sum = vec![0.0; self.n_zones];
        for term in &self.terms {
            self.log_term(term, &lr, Some(&mut sum));
        }
        sum
    }
}

impl Objective for BlockLoss {
    fn dim(&self) -> usize {
        self.n_zones
    }

    fn value(&self, x: &[f64]) -> f64 {
        let lr = self.log_rates(x);
        let logs: f64 = self.terms.iter().map(|term| self.log_term(term, &lr, None)).sum();
        self.n_obs * self.duration * x.iter().sum::<f64>() - logs
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        let sum = self.expected_counts(x);
        for i in 0..self.n_zones {
            grad[i] = self.n_obs * self.duration - if sum[i] > 0.0 { sum[i] / x[i] } else { 0.0 };
        }
    }

    fn scaling(&self, x: &[f64], diag: &mut [f64]) -> bool {
        let sum = self.expected_counts(x);
        for ((d, e), l) in diag.iter_mut().zip(&sum).zip(x) {
            *d = e / (l * l);
        }
        invert_curvature(diag);
        true
    }
}

fn check_lambda(lambda: &IntensityField, counts: &CountData) -> Result<()> {
    let shape = counts.shape();
    if lambda.dims() != (shape.n_types(), shape.n_zones(), shape.n_periods()) {
        return Err(Error::shape("intensity field does not match shape"));
    }
    Ok(())
}

/// `log u_{c,t,n}(λ)` evaluated in log space.
pub fn mc_likelihood_term(
    lambda: &IntensityField,
    counts: &CountData,
    sample: &McSample,
    c: usize,
    t: usize,
    n: usize,
) -> Result<f64> {
    sample.check(counts)?;
    check_lambda(lambda, counts)?;
    let shape = counts.shape();
    if c >= shape.n_types() || t >= shape.n_periods() || n >= shape.n_obs(c, t) {
        return Err(Error::shape(format!("no observation ({c}, {t}, {n})")));
    }
    let v = BlockLoss::new(counts, sample, c, t).observation(n, &lambda.block(c, t));
    if v.is_nan() || v == f64::INFINITY {
        return Err(Error::domain(format!(
            "non-finite log-likelihood term at type {c}, period {t}, observation {n}"
        )));
    }
    Ok(v)
}

/// `ℓ̂₄(λ) = −Σ_{c,t,n} log u_{c,t,n}(λ)`.
pub fn population_objective(
    lambda: &IntensityField,
    counts: &CountData,
    sample: &McSample,
) -> Result<f64> {
    sample.check(counts)?;
    check_lambda(lambda, counts)?;
    let shape = counts.shape();
    let mut total = 0.0;
    for c in 0..shape.n_types() {
        for t in 0..shape.n_periods() {
            total += BlockLoss::new(counts, sample, c, t).value(&lambda.block(c, t));
        }
    }
    if !total.is_finite() {
        return Err(Error::domain("zero intensity where arrivals are observed"));
    }
    Ok(total)
}

/// Gradient of [`population_objective`], laid out like the intensity field.
pub fn population_gradient(
    lambda: &IntensityField,
    counts: &CountData,
    sample: &McSample,
) -> Result<Vec<f64>> {
    population_objective(lambda, counts, sample)?;
    let shape = counts.shape();
    let mut out = vec![0.0; shape.n_cells()];
    let mut grad = vec![0.0; shape.n_zones()];
    for c in 0..shape.n_types() {
        for t in 0..shape.n_periods() {
            BlockLoss::new(counts, sample, c, t).gradient(&lambda.block(c, t), &mut grad);
            for (i, g) in grad.iter().enumerate() {
                out[shape.cell_index(c, i, t)] = *g;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PopulationEstimate {
    pub lambda: IntensityField,
    pub objective: f64,
    /// One trace per `(c, t)` block with observations.
    pub traces: Vec<Vec<f64>>,
    pub terminations: Vec<Termination>,
    pub seed: u64,
}

/// Minimizes `ℓ̂₄` over `λ ≥ ε` with the sample frozen for the whole run.
pub fn estimate_population_model(
    counts: &CountData,
    pi: &PopulationShares,
    config: &SolverConfig,
    mc: &McConfig,
) -> Result<PopulationEstimate> {
    let sample = McSample::build(counts, pi, mc)?;
    estimate_population_with_sample(counts, pi, &sample, config)
}

pub fn estimate_population_with_sample(
    counts: &CountData,
    pi: &PopulationShares,
    sample: &McSample,
    config: &SolverConfig,
) -> Result<PopulationEstimate> {
    config.validate()?;
    sample.check(counts)?;
    let shape = counts.shape();
    let floor = config.lambda_floor();
    let analytic = estimate_lambda(counts);
    let bounds = BoxBounds::uniform(shape.n_zones(), floor, f64::INFINITY)?;

    let mut lambda = vec![0.0; shape.n_cells()];
    let mut status = Vec::with_capacity(shape.n_blocks());
    let mut out = PopulationEstimate {
        lambda: analytic.clone(),
        objective: 0.0,
        traces: Vec::new(),
        terminations: Vec::new(),
        seed: sample.seed(),
    };
    for c in 0..shape.n_types() {
        for t in 0..shape.n_periods() {
            if shape.n_obs(c, t) == 0 {
                status.push(BlockStatus::NoObservations);
                continue;
            }
            status.push(BlockStatus::Estimated);
            let x0: Vec<f64> = if analytic.is_estimated(c, t) {
                analytic.block(c, t).iter().map(|v| v.max(floor)).collect()
            } else {
                let s = estimate_total(counts, c, t).unwrap_or(0.0);
                pi.shares().iter().map(|p| (s * p).max(floor)).collect()
            };
            let block = BlockLoss::new(counts, sample, c, t);
            let sol = projected_gradient(&block, &bounds, &x0, config)?;
            for (i, v) in sol.x.iter().enumerate() {
                lambda[shape.cell_index(c, i, t)] = *v;
            }
            out.objective += sol.objective;
            out.traces.push(sol.trace);
            out.terminations.push(sol.termination);
        }
    }
    out.lambda = IntensityField::with_status(shape, lambda, status)?;
    Ok(out)
}
