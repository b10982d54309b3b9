//! Synthetic counts from known intensities and missing probabilities.
//!
//! Each cell draws its total arrivals `X ~ Poisson(λ 𝒟)` and keeps
//! `Y ~ Binomial(X, 1 − p)` of them located. Every `(c, t)` block uses its
//! own ChaCha stream, so results do not depend on iteration order.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::analytic::BlockProbabilities;
use crate::covariate::{BetaField, CovariateData};
use crate::error::{Error, Result};
use crate::io::{self, InfoFile, NeighborTable, ZoneRecord, N_FEATURES};
use crate::model::{CountData, IntensityField, ProblemShape};
use crate::population::PopulationShares;

#[derive(Debug, Clone, PartialEq)]
pub enum Truth {
    Intensity(IntensityField),
    /// `λ 𝒟 = βᵀx`.
    Covariate {
        beta: BetaField,
        covariates: CovariateData,
    },
    /// `λ_{c,i,t} = S_{c,t} π_i` with `totals` laid out `(c, t)`.
    Shares {
        totals: Vec<f64>,
        shares: PopulationShares,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Missingness {
    Global(f64),
    /// Laid out `(c, t)`.
    PerBlock(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub shape: ProblemShape,
    pub truth: Truth,
    pub missingness: Missingness,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let shape = &self.shape;
        match &self.missingness {
            Missingness::Global(p) => check_p(*p)?,
            Missingness::PerBlock(ps) => {
                if ps.len() != shape.n_blocks() {
                    return Err(Error::shape(format!(
                        "missingness: {} probabilities for {} blocks",
                        ps.len(),
                        shape.n_blocks()
                    )));
                }
                ps.iter().try_for_each(|p| check_p(*p))?;
            }
        }
        self.intensity().map(|_| ())
    }

    pub fn p(&self, c: usize, t: usize) -> f64 {
        match &self.missingness {
            Missingness::Global(p) => *p,
            Missingness::PerBlock(ps) => ps[c * self.shape.n_periods() + t],
        }
    }

    pub fn p_table(&self) -> BlockProbabilities {
        let shape = &self.shape;
        let values = (0..shape.n_types())
            .flat_map(|c| (0..shape.n_periods()).map(move |t| (c, t)))
            .map(|(c, t)| Some(self.p(c, t)))
            .collect();
        BlockProbabilities::new(shape, values).expect("validated probabilities")
    }

    /// The true `λ*` implied by the scenario truth.
    pub fn intensity(&self) -> Result<IntensityField> {
        let shape = &self.shape;
        match &self.truth {
            Truth::Intensity(field) => {
                if field.dims() != (shape.n_types(), shape.n_zones(), shape.n_periods()) {
                    return Err(Error::shape("truth: intensity field does not match shape"));
                }
                Ok(field.clone())
            }
            Truth::Covariate { beta, covariates } => {
                if covariates.n_zones() != shape.n_zones()
                    || beta.dims() != (shape.n_types(), shape.n_periods(), covariates.n_features())
                {
                    return Err(Error::shape("truth: covariates do not match shape"));
                }
                let mut values = vec![0.0; shape.n_cells()];
                for c in 0..shape.n_types() {
                    for i in 0..shape.n_zones() {
                        for t in 0..shape.n_periods() {
                            let v: f64 = beta
                                .get(c, t)
                                .iter()
                                .zip(covariates.row(i))
                                .map(|(b, x)| b * x)
                                .sum();
                            if v < 0.0 {
                                return Err(Error::domain(format!(
                                    "truth: βᵀx = {v} < 0 at type {c}, zone {i}, period {t}"
                                )));
                            }
                            values[shape.cell_index(c, i, t)] = v / shape.duration(t);
                        }
                    }
                }
                IntensityField::new(shape, values)
            }
            Truth::Shares { totals, shares } => {
                if totals.len() != shape.n_blocks() || shares.len() != shape.n_zones() {
                    return Err(Error::shape("truth: totals or shares do not match shape"));
                }
                let mut values = vec![0.0; shape.n_cells()];
                for c in 0..shape.n_types() {
                    for i in 0..shape.n_zones() {
                        for t in 0..shape.n_periods() {
                            values[shape.cell_index(c, i, t)] =
                                totals[c * shape.n_periods() + t] * shares.shares()[i];
                        }
                    }
                }
                IntensityField::new(shape, values)
            }
        }
    }
}

fn check_p(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::domain(format!("missingness: p = {p} outside [0, 1]")))
    }
}

/// Observed counts plus the zone of origin of every unlocated arrival.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub counts: CountData,
    /// Unlocated arrivals per `(c, i, t, n)`, laid out like `M¹`.
    pub hidden_m0: Vec<u64>,
}

fn run(spec: &ScenarioSpec) -> Result<Simulation> {
    spec.validate()?;
    let shape = &spec.shape;
    let lambda = spec.intensity()?;
    let mut m1 = shape.zeros_m1();
    let mut m0 = shape.zeros_m0();
    let mut hidden = vec![0_u64; m1.len()];
    for c in 0..shape.n_types() {
        for t in 0..shape.n_periods() {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream((c * shape.n_periods() + t) as u64);
            let p = spec.p(c, t);
            let d = shape.duration(t);
            let draws: Vec<Option<Poisson<f64>>> = (0..shape.n_zones())
                .map(|i| {
                    let mean = lambda.get(c, i, t) * d;
                    (mean > 0.0).then(|| Poisson::new(mean).expect("positive finite mean"))
                })
                .collect();
            for n in 0..shape.n_obs(c, t) {
                for (i, dist) in draws.iter().enumerate() {
                    let Some(dist) = dist else { continue };
                    let total = dist.sample(&mut rng) as u64;
                    let located = Binomial::new(total, 1.0 - p)
                        .expect("probability in [0, 1]")
                        .sample(&mut rng);
                    let k = shape.m1_index(c, i, t, n);
                    m1[k] = located as i64;
                    hidden[k] = total - located;
                    m0[shape.m0_index(c, t, n)] += (total - located) as i64;
                }
            }
        }
    }
    Ok(Simulation {
        counts: CountData::aggregate(shape.clone(), m1, m0)?,
        hidden_m0: hidden,
    })
}

/// Draws observed counts from the scenario.
pub fn simulate(spec: &ScenarioSpec) -> Result<CountData> {
    Ok(run(spec)?.counts)
}

/// Like [`simulate`], also returning where the unlocated arrivals came
/// from. With `strict`, `λ*_{c,·,t}` must be proportional to `π` in every
/// block with positive total, so unlocated arrivals follow `π`.
pub fn simulate_population_model(
    spec: &ScenarioSpec,
    pi: &PopulationShares,
    strict: bool,
) -> Result<Simulation> {
    if pi.len() != spec.shape.n_zones() {
        return Err(Error::shape("population shares do not match the zone count"));
    }
    if strict {
        let lambda = spec.intensity()?;
        for c in 0..spec.shape.n_types() {
            for t in 0..spec.shape.n_periods() {
                let s = lambda.total(c, t);
                if s == 0.0 {
                    continue;
                }
                for (i, share) in pi.shares().iter().enumerate() {
                    let v = lambda.get(c, i, t) / s;
                    if (v - share).abs() > 1e-9 {
                        return Err(Error::domain(format!(
                            "truth: zone {i} has share {v} of block ({c}, {t}), π gives {share}"
                        )));
                    }
                }
            }
        }
    }
    run(spec)
}

/// Knobs for the built-in demonstration dataset: a square grid with its
/// corners cut off, a Monday-first week of half-hour periods, and several
/// arrival types whose missing probability peaks at night.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    pub seed: u64,
    pub grid: usize,
    /// Cells removed from each corner form a triangle with this many rows.
    pub corner_trim: usize,
    pub periods_per_day: usize,
    /// Observations (weeks) per weekday, Monday first.
    pub obs_per_day: Vec<usize>,
    /// Region-wide arrivals per hour for each type at average activity.
    pub type_rates: Vec<f64>,
    pub p_min: f64,
    pub p_max: f64,
    /// Added to the missing probability of the last type.
    pub last_type_p_offset: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            seed: 20_240_601,
            grid: 10,
            corner_trim: 3,
            periods_per_day: 48,
            obs_per_day: vec![17, 17, 17, 17, 17, 16, 16],
            type_rates: vec![6.0, 14.0, 22.0],
            p_min: 0.1,
            p_max: 0.5,
            last_type_p_offset: 0.05,
        }
    }
}

/// A scenario together with the zone table the file formats need.
#[derive(Debug, Clone)]
pub struct Demo {
    pub spec: ScenarioSpec,
    pub zones: NeighborTable,
}

/// Deterministic value in `[0, 1)` from a few integers.
fn hash_unit(seed: u64, a: u64, b: u64) -> f64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

impl DemoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::domain(format!("scenario field `{field}`: {msg}")));
        if self.grid == 0 || 4 * self.corner_trim * (self.corner_trim + 1) / 2 >= self.grid * self.grid
        {
            return bad("grid", "no zones left after trimming corners");
        }
        if 2 * self.corner_trim > self.grid {
            return bad("corner_trim", "corners overlap");
        }
        if self.periods_per_day == 0 || 24 % self.periods_per_day != 0 && self.periods_per_day % 24 != 0 {
            return bad("periods_per_day", "must divide 24 or be a multiple of 24");
        }
        if self.obs_per_day.is_empty() {
            return bad("obs_per_day", "needs at least one day");
        }
        if self.type_rates.is_empty() || self.type_rates.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return bad("type_rates", "needs one or more finite rates >= 0");
        }
        if !(0.0..=1.0).contains(&self.p_min) || !(0.0..=1.0).contains(&self.p_max) || self.p_min > self.p_max {
            return bad("p_min", "need 0 <= p_min <= p_max <= 1");
        }
        if !self.last_type_p_offset.is_finite() {
            return bad("last_type_p_offset", "must be finite");
        }
        Ok(())
    }

    /// Grid cells kept after trimming, row-major.
    fn cells(&self) -> Vec<(usize, usize)> {
        let g = self.grid;
        let k = self.corner_trim;
        let in_corner = |r: usize, c: usize| r + c < k;
        (0..g)
            .flat_map(|r| (0..g).map(move |c| (r, c)))
            .filter(|&(r, c)| {
                !(in_corner(r, c)
                    || in_corner(r, g - 1 - c)
                    || in_corner(g - 1 - r, c)
                    || in_corner(g - 1 - r, g - 1 - c))
            })
            .collect()
    }

    pub fn build(&self) -> Result<Demo> {
        self.validate()?;
        let cells = self.cells();
        let n_zones = cells.len();
        let n_types = self.type_rates.len();
        let shape = ProblemShape::daily(n_types, n_zones, self.periods_per_day, &self.obs_per_day)?;

        // population: a dense centre and a secondary hub plus noise
        let g = self.grid as f64;
        let populations: Vec<f64> = cells
            .iter()
            .enumerate()
            .map(|(k, &(r, c))| {
                let (y, x) = (r as f64 / g, c as f64 / g);
                let centre = (-((x - 0.5).powi(2) + (y - 0.5).powi(2)) / 0.05).exp();
                let hub = (-((x - 0.2).powi(2) + (y - 0.75).powi(2)) / 0.02).exp();
                let noise = hash_unit(self.seed, k as u64, 1);
                (2000.0 + 12_000.0 * centre + 6000.0 * hub + 1500.0 * noise).round()
            })
            .collect();
        let shares = PopulationShares::new(populations.clone())?;

        let index_of = |r: usize, c: usize| cells.iter().position(|&x| x == (r, c));
        let cell_km = 1.2;
        let zones: Vec<ZoneRecord> = cells
            .iter()
            .enumerate()
            .map(|(k, &(r, c))| {
                let mut features = [0.0; N_FEATURES];
                features[0] = populations[k];
                for (f, slot) in features.iter_mut().enumerate().skip(1) {
                    *slot = (cell_km * cell_km * hash_unit(self.seed, k as u64, f as u64 + 1) * 1000.0)
                        .round()
                        / 1000.0;
                }
                let mut neighbors = Vec::new();
                for (dr, dc) in [(-1_i64, 0_i64), (1, 0), (0, -1), (0, 1)] {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nc < 0 {
                        continue;
                    }
                    if let Some(j) = index_of(nr as usize, nc as usize) {
                        neighbors.push((j, cell_km));
                    }
                }
                ZoneRecord {
                    lat: round6(-22.80 - r as f64 * 0.011),
                    lon: round6(-43.40 + c as f64 * 0.012),
                    zone_type: if populations[k] > 8000.0 { "urban" } else { "suburban" }.into(),
                    features,
                    neighbors,
                }
            })
            .collect();
        let zones = NeighborTable::new(zones)?;

        let axis = shape.day_axis().expect("daily shape");
        let hours_per_period = 24.0 / axis.periods_per_day as f64;
        let activity = |day: usize, slot: usize| {
            let h = (slot as f64 + 0.5) * hours_per_period;
            let daily = 1.0 + 0.7 * (std::f64::consts::TAU * (h - 9.0) / 24.0).sin().max(-0.9);
            let weekend = if day >= 5 { 0.85 } else { 1.0 };
            daily * weekend
        };
        let night = |slot: usize| {
            let h = (slot as f64 + 0.5) * hours_per_period;
            0.5 * (1.0 + (std::f64::consts::TAU * (h - 3.0) / 24.0).cos())
        };
        let mut lambda = vec![0.0; shape.n_cells()];
        let mut p = vec![0.0; shape.n_blocks()];
        for c in 0..n_types {
            for t in 0..shape.n_periods() {
                let (day, slot) = shape.day_slot(t).expect("daily shape");
                let total = self.type_rates[c] * activity(day, slot);
                for (i, share) in shares.shares().iter().enumerate() {
                    lambda[shape.cell_index(c, i, t)] = total * share;
                }
                let offset = if c + 1 == n_types && n_types > 1 {
                    self.last_type_p_offset
                } else {
                    0.0
                };
                p[c * shape.n_periods() + t] =
                    (self.p_min + (self.p_max - self.p_min) * night(slot) + offset).clamp(0.0, 1.0);
            }
        }
        let spec = ScenarioSpec {
            truth: Truth::Intensity(IntensityField::new(&shape, lambda)?),
            missingness: Missingness::PerBlock(p),
            seed: self.seed,
            shape,
        };
        spec.validate()?;
        Ok(Demo { spec, zones })
    }
}

/// File names written by [`write_dataset`].
pub const DATASET_FILES: [&str; 7] = [
    "info.txt",
    "arrivals.txt",
    "missing.txt",
    "neighbors.txt",
    "truth_lambda.txt",
    "truth_p.txt",
    "test.cfg",
];

/// Simulates `spec` and writes the input files, the hidden truth, and a
/// configuration file pointing at them.
pub fn write_dataset(dir: &Path, spec: &ScenarioSpec, zones: &NeighborTable) -> Result<CountData> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let counts = simulate(spec)?;
    let shape = counts.shape();
    let [info, arrivals, missing, neighbors, truth_lambda, truth_p, cfg] =
        DATASET_FILES.map(|f| dir.join(f));
    io::write_info(
        &info,
        &InfoFile {
            shape: shape.clone(),
            extra: ["0".into(), "0".into()],
        },
    )?;
    let to_i64 = |v: &[u64]| v.iter().map(|x| *x as i64).collect::<Vec<_>>();
    io::write_arrivals(&arrivals, shape, &to_i64(counts.raw_m1()))?;
    io::write_missing(&missing, shape, &to_i64(counts.raw_m0()))?;
    io::write_neighbors(&neighbors, zones)?;
    io::write_lambda_table(&truth_lambda, &spec.intensity()?, None)?;
    io::write_p_table(&truth_p, &spec.p_table(), None)?;
    let text = format!(
        "# generated dataset, seed {}\ninfo_file = info.txt\narrivals_file = arrivals.txt\n\
         missing_file = missing.txt\nneighbors_file = neighbors.txt\noutput_dir = results\n",
        spec.seed
    );
    io::write_file(&cfg, &text)?;
    Ok(counts)
}
