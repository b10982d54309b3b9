//! Fisher information of the per-block model, its structured inverse, and
//! asymptotic normal confidence intervals.
//!
//! The information matrix is block diagonal over `(c, t)`. Within a block the
//! `p` entry is decoupled from the intensities, and the intensity part has the
//! form `diag(a) + u·11ᵀ`, which inverts in closed form.

use crate::analytic::{BlockProbabilities, MissingProbability};
use crate::error::{Error, Result};
use crate::model::{BlockStatus, CountData, IntensityField, ProblemShape};

/// Expected information for one `(c, t)` block.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherBlock {
    pub c: usize,
    pub t: usize,
    /// `E[−∂²ℒ/∂p²]`.
    pub info_p: f64,
    /// Diagonal of the intensity block.
    pub diag: Vec<f64>,
    /// Common off-diagonal entry of the intensity block.
    pub off_diag: f64,
}

impl FisherBlock {
    /// Dense intensity block, row major.
    pub fn dense_intensity_block(&self) -> Vec<Vec<f64>> {
        let n = self.diag.len();
        (0..n)
            .map(|r| {
                (0..n)
                    .map(|k| if r == k { self.diag[r] } else { self.off_diag })
                    .collect()
            })
            .collect()
    }
}

/// Diagonal of the inverse information plus the variance of the zone total.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockVariances {
    pub lambda: Vec<f64>,
    pub p: f64,
    /// `1ᵀ V 1`, the variance of `Σ_i λ̂_i`.
    pub total: f64,
}

/// Builds the expected information at `(λ, p)` for block `(c, t)`.
///
/// Uses `E[M⁰_{c,t,•}] = p𝒟NS` and `E[M¹_{c,•,t,•}] = (1−p)𝒟NS`, giving
/// `I_pp = 𝒟NS / (p(1−p))`, `d_i = p𝒟N/S + (1−p)𝒟N/λ_i` and `u = p𝒟N/S`.
pub fn fisher_block(
    lambda: &IntensityField,
    p: &MissingProbability,
    shape: &ProblemShape,
    c: usize,
    t: usize,
) -> Result<FisherBlock> {
    let p = p.at(c, t).ok_or_else(|| Error::Singular {
        c,
        t,
        reason: "missing probability undefined".into(),
    })?;
    fisher_block_from_parts(
        &lambda.block(c, t),
        p,
        shape.duration(t),
        shape.n_obs(c, t),
        c,
        t,
    )
}

pub(crate) fn fisher_block_from_parts(
    lambda: &[f64],
    p: f64,
    duration: f64,
    n_obs: usize,
    c: usize,
    t: usize,
) -> Result<FisherBlock> {
    let singular = |reason: String| Error::Singular { c, t, reason };
    if n_obs == 0 {
        return Err(singular("no observations".into()));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(singular(format!("boundary probability {p}")));
    }
    if let Some(i) = lambda.iter().position(|&l| !(l > 0.0)) {
        return Err(singular(format!("intensity of zone {i} is {}", lambda[i])));
    }
    let s: f64 = lambda.iter().sum();
    let dn = duration * n_obs as f64;
    let off_diag = p * dn / s;
    Ok(FisherBlock {
        c,
        t,
        info_p: dn * s / (p * (1.0 - p)),
        diag: lambda.iter().map(|l| off_diag + (1.0 - p) * dn / l).collect(),
        off_diag,
    })
}

/// Diagonal of the inverse via Sherman–Morrison on `diag(d − u) + u·11ᵀ`,
/// falling back to dense elimination when the diagonal part has a zero.
pub fn invert_block(block: &FisherBlock) -> Result<BlockVariances> {
    let singular = |reason: &str| Error::Singular {
        c: block.c,
        t: block.t,
        reason: reason.into(),
    };
    if !(block.info_p > 0.0 && block.info_p.is_finite()) {
        return Err(singular("nonpositive p information"));
    }
    let u = block.off_diag;
    let a: Vec<f64> = block.diag.iter().map(|d| d - u).collect();
    let (lambda, total): (Vec<f64>, f64) = if a.iter().all(|v| *v != 0.0 && v.is_finite()) {
        let inv_sum: f64 = a.iter().map(|v| 1.0 / v).sum();
        let denom = 1.0 + u * inv_sum;
        if denom == 0.0 || !denom.is_finite() {
            return Err(singular("rank-one update is singular"));
        }
        let lambda = a
            .iter()
            .map(|v| 1.0 / v - u / (v * v * denom))
            .collect();
        (lambda, inv_sum / denom)
    } else {
        let inv = crate::linalg::invert(&block.dense_intensity_block())
            .ok_or_else(|| singular("intensity block is singular"))?;
        let lambda = (0..inv.len()).map(|r| inv[r][r]).collect();
        let total = inv.iter().flatten().sum();
        (lambda, total)
    };
    if lambda.iter().any(|v: &f64| !v.is_finite()) {
        return Err(singular("non-finite inverse"));
    }
    Ok(BlockVariances {
        lambda,
        p: 1.0 / block.info_p,
        total,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceInterval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    /// The lower end was raised to zero.
    pub clipped: bool,
}

impl ConfidenceInterval {
    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// `est ± Φ⁻¹(1−α/2)·√var`, optionally clipped at zero from below.
pub fn confidence_interval(
    estimate: f64,
    variance: f64,
    alpha: f64,
    clip_at_zero: bool,
) -> Result<ConfidenceInterval> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::domain(format!("alpha {alpha} outside (0, 1)")));
    }
    if !(variance >= 0.0) {
        return Err(Error::domain(format!(
            "negative variance {variance} (internal consistency)"
        )));
    }
    let half = normal_quantile(1.0 - alpha / 2.0) * variance.sqrt();
    let mut lower = estimate - half;
    let clipped = clip_at_zero && lower < 0.0;
    if clipped {
        lower = 0.0;
    }
    Ok(ConfidenceInterval {
        estimate,
        lower,
        upper: estimate + half,
        level: 1.0 - alpha,
        clipped,
    })
}

/// Standard normal quantile, Wichura's AS241 (PPND16), accurate to about 1e-16.
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2509.080_928_730_122_7 * r + 33430.575_583_588_128) * r
                + 67265.770_927_008_700)
                * r
                + 45921.953_931_549_871)
                * r
                + 13731.693_765_509_461)
                * r
                + 1971.590_950_306_551_3)
                * r
                + 133.141_667_891_784_38)
                * r
                + 3.387_132_872_796_366_5)
            / (((((((5226.495_278_852_545_4 * r + 28729.085_735_721_942) * r
                + 39307.895_800_092_710)
                * r
                + 21213.794_301_586_595)
                * r
                + 5394.196_021_424_751_1)
                * r
                + 687.187_007_492_057_91)
                * r
                + 42.313_330_701_600_911)
                * r
                + 1.0);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let value = if r <= 5.0 {
        r -= 1.6;
        (((((((7.745_450_142_783_414_1e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506_1e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691_4)
            * r
            + 4.630_337_846_156_545_3)
            * r
            + 1.423_437_110_749_683_5)
            / (((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_344_9e-4) * r
                + 1.519_866_656_361_645_7e-2)
                * r
                + 1.481_039_764_274_800_7e-1)
                * r
                + 6.897_673_349_851_000_2e-1)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_758_8)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_048_7e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114_4)
            * r
            + 6.657_904_643_501_103_3)
            / (((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
                + 1.846_318_317_510_054_8e-5)
                * r
                + 7.868_691_311_456_132_6e-4)
                * r
                + 1.487_536_129_085_061_5e-2)
                * r
                + 1.369_298_809_227_358_1e-1)
                * r
                + 5.998_322_065_558_879_8e-1)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -value
    } else {
        value
    }
}

/// Variances and intervals for the closed-form per-block estimates.
/// `None` marks cells where the information is singular (boundary
/// estimates, zero intensities, flagged blocks).
#[derive(Debug, Clone)]
pub struct UncertaintyTables {
    pub alpha: f64,
    pub lambda_var: Vec<Option<f64>>,
    pub lambda_ci: Vec<Option<ConfidenceInterval>>,
    pub p_var: Vec<Option<f64>>,
    pub p_ci: Vec<Option<ConfidenceInterval>>,
    pub total_var: Vec<Option<f64>>,
    pub total_ci: Vec<Option<ConfidenceInterval>>,
}

/// Plug-in variances at `(λ̂, p̂)` for every block. Zones with `λ̂ = 0` sit on
/// the boundary and are dropped from their block before inversion.
pub fn analytic_uncertainty(
    counts: &CountData,
    lambda: &IntensityField,
    p: &BlockProbabilities,
    alpha: f64,
) -> Result<UncertaintyTables> {
    let shape = counts.shape();
    let mut out = UncertaintyTables {
        alpha,
        lambda_var: vec![None; shape.n_cells()],
        lambda_ci: vec![None; shape.n_cells()],
        p_var: vec![None; shape.n_blocks()],
        p_ci: vec![None; shape.n_blocks()],
        total_var: vec![None; shape.n_blocks()],
        total_ci: vec![None; shape.n_blocks()],
    };
    for c in 0..shape.n_types() {
        for t in 0..shape.n_periods() {
            if lambda.status(c, t) != BlockStatus::Estimated {
                continue;
            }
            let Some(p_hat) = p.get(c, t) else { continue };
            let full = lambda.block(c, t);
            let active: Vec<usize> = (0..full.len()).filter(|&i| full[i] > 0.0).collect();
            if active.is_empty() {
                continue;
            }
            let sub: Vec<f64> = active.iter().map(|&i| full[i]).collect();
            let block = fisher_block_from_parts(
                &sub,
                p_hat,
                shape.duration(t),
                shape.n_obs(c, t),
                c,
                t,
            );
            let Ok(block) = block else {
                // p̂ on the boundary: the intensity block alone is still
                // regular when p̂ = 0, which is the plain Poisson case.
                if p_hat == 0.0 {
                    let dn = shape.duration(t) * shape.n_obs(c, t) as f64;
                    for &i in &active {
                        let k = shape.cell_index(c, i, t);
                        let var = full[i] / dn;
                        out.lambda_var[k] = Some(var);
                        out.lambda_ci[k] = Some(confidence_interval(full[i], var, alpha, true)?);
                    }
                    let b = shape.block_index(c, t);
                    let var = lambda.total(c, t) / dn;
                    out.total_var[b] = Some(var);
                    out.total_ci[b] =
                        Some(confidence_interval(lambda.total(c, t), var, alpha, true)?);
                }
                continue;
            };
            let var = invert_block(&block)?;
            for (&i, v) in active.iter().zip(&var.lambda) {
                let k = shape.cell_index(c, i, t);
                out.lambda_var[k] = Some(*v);
                out.lambda_ci[k] = Some(confidence_interval(full[i], *v, alpha, true)?);
            }
            let b = shape.block_index(c, t);
            out.p_var[b] = Some(var.p);
            out.p_ci[b] = Some(confidence_interval(p_hat, var.p, alpha, false)?);
            out.total_var[b] = Some(var.total);
            out.total_ci[b] = Some(confidence_interval(lambda.total(c, t), var.total, alpha, true)?);
        }
    }
    Ok(out)
}
