//! Summary tables behind the usual plots: weekly probability and intensity
//! curves, zone heatmaps, and corrected-vs-uncorrected comparisons.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{DiscreteCDF, Poisson};

use crate::analytic::{estimate_lambda_uncorrected, BlockProbabilities};
use crate::error::{Error, Result};
use crate::io::{format_number, write_file, write_heatmap};
use crate::model::{CountData, IntensityField};
use crate::uncertainty::analytic_uncertainty;

/// `Σ_{i,t} λ_{c,i,t} 𝒟_t` over estimated blocks.
pub fn expected_total(lambda: &IntensityField, durations: &[f64], c: usize) -> f64 {
    let (_, _, periods) = lambda.dims();
    (0..periods)
        .filter(|&t| lambda.is_estimated(c, t))
        .map(|t| lambda.total(c, t) * durations[t])
        .sum()
}

/// Draws `n` Poisson totals for each mean using the same uniforms for both,
/// so a larger mean yields a pathwise larger draw.
pub fn coupled_poisson_draws(
    mean_a: f64,
    mean_b: f64,
    n: usize,
    seed: u64,
) -> Result<(Vec<u64>, Vec<u64>)> {
    let dist = |m: f64| {
        if m > 0.0 {
            Poisson::new(m)
                .map(Some)
                .map_err(|e| Error::domain(format!("Poisson mean {m}: {e}")))
        } else {
            Ok(None)
        }
    };
    let (a, b) = (dist(mean_a)?, dist(mean_b)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random_range(f64::EPSILON..1.0 - f64::EPSILON);
        xs.push(a.as_ref().map_or(0, |d| d.inverse_cdf(u)));
        ys.push(b.as_ref().map_or(0, |d| d.inverse_cdf(u)));
    }
    Ok((xs, ys))
}

/// `true` if the empirical CDF of `a` is nowhere above that of `b`.
pub fn stochastically_dominates(a: &[u64], b: &[u64]) -> bool {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    let cdf = |v: &[u64], x: u64| v.partition_point(|y| *y <= x) as f64 / v.len() as f64;
    a.iter().chain(&b).all(|&x| cdf(&a, x) <= cdf(&b, x))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `"all"` or `"type<c>"`.
    pub label: String,
    /// Bin edges `[lo, hi)`, shared by both columns.
    pub edges: Vec<f64>,
    pub corrected: Vec<usize>,
    pub uncorrected: Vec<usize>,
    pub corrected_draws: Vec<u64>,
    pub uncorrected_draws: Vec<u64>,
}

fn bin(draws: &[u64], edges: &[f64]) -> Vec<usize> {
    let mut out = vec![0; edges.len() - 1];
    for &d in draws {
        let x = d as f64;
        let k = edges.partition_point(|e| *e <= x).saturating_sub(1).min(out.len() - 1);
        out[k] += 1;
    }
    out
}

/// Histograms of weekly region-wide totals per type and overall.
pub fn weekly_total_histograms(
    corrected: &IntensityField,
    uncorrected: &IntensityField,
    durations: &[f64],
    n_draws: usize,
    n_bins: usize,
    seed: u64,
) -> Result<Vec<Histogram>> {
    let (types, _, _) = corrected.dims();
    let mut groups: Vec<(String, Vec<usize>)> = vec![("all".into(), (0..types).collect())];
    groups.extend((0..types).map(|c| (format!("type{}", c + 1), vec![c])));
    groups
        .into_iter()
        .enumerate()
        .map(|(k, (label, members))| {
            let mc: f64 = members.iter().map(|&c| expected_total(corrected, durations, c)).sum();
            let mu: f64 = members.iter().map(|&c| expected_total(uncorrected, durations, c)).sum();
            let (xs, ys) = coupled_poisson_draws(mc, mu, n_draws, seed.wrapping_add(k as u64))?;
            let lo = xs.iter().chain(&ys).copied().min().unwrap_or(0) as f64;
            let hi = xs.iter().chain(&ys).copied().max().unwrap_or(0) as f64 + 1.0;
            let width = ((hi - lo) / n_bins.max(1) as f64).max(1.0);
            let edges: Vec<f64> = (0..=n_bins.max(1)).map(|b| lo + b as f64 * width).collect();
            Ok(Histogram {
                label,
                corrected: bin(&xs, &edges),
                uncorrected: bin(&ys, &edges),
                edges,
                corrected_draws: xs,
                uncorrected_draws: ys,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    pub alpha: f64,
    pub draws: usize,
    pub bins: usize,
    pub seed: u64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            draws: 10_000,
            bins: 40,
            seed: 0,
        }
    }
}

fn day_slot_cols(counts: &CountData, t: usize) -> String {
    counts
        .shape()
        .day_slot(t)
        .map_or("NA,NA".into(), |(d, s)| format!("{},{}", d + 1, s + 1))
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), format_number)
}

/// Writes the report CSVs into `dir` and returns their paths.
pub fn write_report(
    dir: &Path,
    counts: &CountData,
    corrected: &IntensityField,
    p: &BlockProbabilities,
    options: &ReportOptions,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let shape = counts.shape();
    let types = shape.n_types();
    let uncorrected = estimate_lambda_uncorrected(counts);
    let unc = analytic_uncertainty(counts, corrected, p, options.alpha)?;
    let mut written = Vec::new();

    let path = dir.join("report_p_weekly.csv");
    let mut out = String::from("period,day,slot");
    (0..types).for_each(|c| write!(out, ",type{}", c + 1).expect("write to string"));
    out.push('\n');
    for t in 0..shape.n_periods() {
        write!(out, "{},{}", t + 1, day_slot_cols(counts, t)).expect("write to string");
        (0..types).for_each(|c| write!(out, ",{}", opt(p.get(c, t))).expect("write to string"));
        out.push('\n');
    }
    write_file(&path, &out)?;
    written.push(path);

    let path = dir.join("report_intensity_weekly.csv");
    let mut out = String::from("period,day,slot,type,corrected,lower,upper,uncorrected\n");
    for c in 0..types {
        for t in 0..shape.n_periods() {
            let k = c * shape.n_periods() + t;
            let est = corrected.is_estimated(c, t).then(|| corrected.total(c, t));
            let ci = unc.total_ci[k];
            let raw = uncorrected.is_estimated(c, t).then(|| uncorrected.total(c, t));
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                t + 1,
                day_slot_cols(counts, t),
                c + 1,
                opt(est),
                opt(ci.map(|v| v.lower)),
                opt(ci.map(|v| v.upper)),
                opt(raw)
            )
            .expect("write to string");
        }
    }
    write_file(&path, &out)?;
    written.push(path);

    let path = dir.join("report_heatmap.csv");
    write_heatmap(&path, corrected, shape.durations())?;
    written.push(path);

    let path = dir.join("report_comparison.csv");
    let mut out = String::from("type,zone,period,corrected,uncorrected,unlocated\n");
    for c in 0..types {
        for i in 0..shape.n_zones() {
            for t in 0..shape.n_periods() {
                let a = corrected.is_estimated(c, t).then(|| corrected.get(c, i, t));
                let b = uncorrected.is_estimated(c, t).then(|| uncorrected.get(c, i, t));
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    c + 1,
                    i + 1,
                    t + 1,
                    opt(a),
                    opt(b),
                    counts.m0_total(c, t)
                )
                .expect("write to string");
            }
        }
    }
    write_file(&path, &out)?;
    written.push(path);

    let path = dir.join("report_histogram.csv");
    let mut out = String::from("group,bin_lower,bin_upper,corrected,uncorrected\n");
    for h in weekly_total_histograms(
        corrected,
        &uncorrected,
        shape.durations(),
        options.draws,
        options.bins,
        options.seed,
    )? {
        for b in 0..h.corrected.len() {
            writeln!(
                out,
                "{},{},{},{},{}",
                h.label,
                format_number(h.edges[b]),
                format_number(h.edges[b + 1]),
                h.corrected[b],
                h.uncorrected[b]
            )
            .expect("write to string");
        }
    }
    write_file(&path, &out)?;
    written.push(path);
    Ok(written)
}
