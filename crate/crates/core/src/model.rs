//! Index space, raw counts and the aggregates every estimator reads.
//!
//! Arrays are dense. Located counts are laid out as `(type, zone, period, obs)`
//! and unlocated counts as `(type, period, obs)`, with the observation axis
//! padded to the largest `N_{c,t}`. Entries with `n >= N_{c,t}` are outside the
//! validity mask and must be zero.

use crate::error::{Error, Result};

/// Hard limit on the number of located-count cells a shape may describe.
pub const MAX_CELLS: usize = 1 << 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DayAxis {
    pub n_days: usize,
    pub periods_per_day: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemShape {
    n_types: usize,
    n_zones: usize,
    durations: Vec<f64>,
    n_obs: Vec<usize>,
    max_obs: usize,
    day_axis: Option<DayAxis>,
}

impl ProblemShape {
    /// `durations` has one entry per period; `n_obs` is laid out `(type, period)`.
    pub fn new(
        n_types: usize,
        n_zones: usize,
        durations: Vec<f64>,
        n_obs: Vec<usize>,
    ) -> Result<Self> {
        let n_periods = durations.len();
        if n_types == 0 || n_zones == 0 || n_periods == 0 {
            return Err(Error::shape(format!(
                "empty index set: {n_types} types, {n_zones} zones, {n_periods} periods"
            )));
        }
        if n_obs.len() != n_types * n_periods {
            return Err(Error::shape(format!(
                "n_obs has {} entries, expected {}",
                n_obs.len(),
                n_types * n_periods
            )));
        }
        if let Some(t) = durations.iter().position(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::domain(format!(
                "duration of period {t} is {} (must be > 0)",
                durations[t]
            )));
        }
        let max_obs = n_obs.iter().copied().max().unwrap_or(0);
        let cells = n_types
            .checked_mul(n_zones)
            .and_then(|v| v.checked_mul(n_periods))
            .and_then(|v| v.checked_mul(max_obs.max(1)));
        match cells {
            Some(v) if v <= MAX_CELLS => {}
            _ => {
                return Err(Error::shape(format!(
                    "shape too large: {n_types} x {n_zones} x {n_periods} x {max_obs} exceeds {MAX_CELLS} cells"
                )))
            }
        }
        Ok(Self {
            n_types,
            n_zones,
            durations,
            n_obs,
            max_obs,
            day_axis: None,
        })
    }

    /// Same duration and observation count everywhere.
    pub fn uniform(
        n_types: usize,
        n_zones: usize,
        n_periods: usize,
        duration: f64,
        n_obs: usize,
    ) -> Result<Self> {
        Self::new(
            n_types,
            n_zones,
            vec![duration; n_periods],
            vec![n_obs; n_types * n_periods],
        )
    }

    /// A periodic week-like shape: `obs_per_day[d]` observations for every
    /// period of day `d`, each period lasting `24 / periods_per_day` hours.
    pub fn daily(
        n_types: usize,
        n_zones: usize,
        periods_per_day: usize,
        obs_per_day: &[usize],
    ) -> Result<Self> {
        let n_days = obs_per_day.len();
        if periods_per_day == 0 || n_days == 0 {
            return Err(Error::shape("day axis must be non-empty"));
        }
        let n_periods = n_days
            .checked_mul(periods_per_day)
            .ok_or_else(|| Error::shape("period count overflows"))?;
        let duration = 24.0 / periods_per_day as f64;
        let mut n_obs = Vec::with_capacity(n_types * n_periods);
        for _ in 0..n_types {
            for &obs in obs_per_day {
                n_obs.extend(std::iter::repeat_n(obs, periods_per_day));
            }
        }
        Self::new(n_types, n_zones, vec![duration; n_periods], n_obs)?
            .with_day_axis(n_days, periods_per_day)
    }

    pub fn with_day_axis(mut self, n_days: usize, periods_per_day: usize) -> Result<Self> {
        if n_days.checked_mul(periods_per_day) != Some(self.n_periods()) {
            return Err(Error::shape(format!(
                "day axis {n_days} x {periods_per_day} does not cover {} periods",
                self.n_periods()
            )));
        }
        self.day_axis = Some(DayAxis {
            n_days,
            periods_per_day,
        });
        Ok(self)
    }

    pub fn n_types(&self) -> usize {
        self.n_types
    }

    pub fn n_zones(&self) -> usize {
        self.n_zones
    }

    pub fn n_periods(&self) -> usize {
        self.durations.len()
    }

    pub fn max_obs(&self) -> usize {
        self.max_obs
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn duration(&self, t: usize) -> f64 {
        self.durations[t]
    }

    pub fn n_obs(&self, c: usize, t: usize) -> usize {
        self.n_obs[c * self.n_periods() + t]
    }

    pub fn n_obs_table(&self) -> &[usize] {
        &self.n_obs
    }

    pub fn day_axis(&self) -> Option<DayAxis> {
        self.day_axis
    }

    /// Global period index of `(day, period within day)`.
    pub fn period(&self, day: usize, slot: usize) -> Option<usize> {
        let axis = self.day_axis?;
        (day < axis.n_days && slot < axis.periods_per_day)
            .then_some(day * axis.periods_per_day + slot)
    }

    /// `(day, period within day)` of a global period index.
    pub fn day_slot(&self, t: usize) -> Option<(usize, usize)> {
        let axis = self.day_axis?;
        Some((t / axis.periods_per_day, t % axis.periods_per_day))
    }

    pub fn n_blocks(&self) -> usize {
        self.n_types * self.n_periods()
    }

    /// Flat `(c, t)` index.
    pub fn block_index(&self, c: usize, t: usize) -> usize {
        c * self.n_periods() + t
    }

    /// Flat `(c, i, t)` index.
    pub fn cell_index(&self, c: usize, i: usize, t: usize) -> usize {
        (c * self.n_zones + i) * self.n_periods() + t
    }

    pub fn n_cells(&self) -> usize {
        self.n_types * self.n_zones * self.n_periods()
    }

    pub fn m1_len(&self) -> usize {
        self.n_cells() * self.max_obs
    }

    pub fn m0_len(&self) -> usize {
        self.n_blocks() * self.max_obs
    }

    pub fn m1_index(&self, c: usize, i: usize, t: usize, n: usize) -> usize {
        self.cell_index(c, i, t) * self.max_obs + n
    }

    pub fn m0_index(&self, c: usize, t: usize, n: usize) -> usize {
        self.block_index(c, t) * self.max_obs + n
    }

    pub fn zeros_m1(&self) -> Vec<i64> {
        vec![0; self.m1_len()]
    }

    pub fn zeros_m0(&self) -> Vec<i64> {
        vec![0; self.m0_len()]
    }
}

/// Located and unlocated counts with every aggregate cached.
#[derive(Debug, Clone)]
pub struct CountData {
    shape: ProblemShape,
    m1: Vec<u64>,
    m0: Vec<u64>,
    m1_obs_total: Vec<u64>,
    m1_zone_total: Vec<u64>,
    m0_total: Vec<u64>,
    m1_grand: u64,
    m0_grand: u64,
}

impl CountData {
    /// Validates raw counts against `shape` and computes all aggregates.
    ///
    /// `m1` is indexed `(c, i, t, n)` and `m0` is indexed `(c, t, n)`, both
    /// with the observation axis padded to `shape.max_obs()`.
    pub fn aggregate(shape: ProblemShape, m1: Vec<i64>, m0: Vec<i64>) -> Result<Self> {
        if m1.len() != shape.m1_len() {
            return Err(Error::shape(format!(
                "located counts have {} entries, expected {}",
                m1.len(),
                shape.m1_len()
            )));
        }
        if m0.len() != shape.m0_len() {
            return Err(Error::shape(format!(
                "unlocated counts have {} entries, expected {}",
                m0.len(),
                shape.m0_len()
            )));
        }
        if let Some(k) = m1.iter().position(|&v| v < 0) {
            return Err(Error::domain(format!(
                "negative located count {} at flat index {k}",
                m1[k]
            )));
        }
        if let Some(k) = m0.iter().position(|&v| v < 0) {
            return Err(Error::domain(format!(
                "negative unlocated count {} at flat index {k}",
                m0[k]
            )));
        }
        let m1: Vec<u64> = m1.into_iter().map(|v| v as u64).collect();
        let m0: Vec<u64> = m0.into_iter().map(|v| v as u64).collect();

        let mut data = Self {
            m1_obs_total: vec![0; shape.n_cells()],
            m1_zone_total: vec![0; shape.n_blocks()],
            m0_total: vec![0; shape.n_blocks()],
            m1_grand: 0,
            m0_grand: 0,
            shape,
            m1,
            m0,
        };
        data.check_mask()?;
        data.recompute();
        Ok(data)
    }

    fn check_mask(&self) -> Result<()> {
        let s = &self.shape;
        for c in 0..s.n_types() {
            for t in 0..s.n_periods() {
                let valid = s.n_obs(c, t);
                for n in valid..s.max_obs() {
                    if self.m0[s.m0_index(c, t, n)] != 0 {
                        return Err(Error::shape(format!(
                            "unlocated count at observation {n} but N[{c},{t}] = {valid}"
                        )));
                    }
                    for i in 0..s.n_zones() {
                        if self.m1[s.m1_index(c, i, t, n)] != 0 {
                            return Err(Error::shape(format!(
                                "located count at observation {n} but N[{c},{t}] = {valid}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn recompute(&mut self) {
        let (obs, zone, m0t, g1, g0) = self.compute_aggregates();
        self.m1_obs_total = obs;
        self.m1_zone_total = zone;
        self.m0_total = m0t;
        self.m1_grand = g1;
        self.m0_grand = g0;
    }

    #[allow(clippy::type_complexity)]
    fn compute_aggregates(&self) -> (Vec<u64>, Vec<u64>, Vec<u64>, u64, u64) {
        let s = &self.shape;
        let nmax = s.max_obs();
        let obs_total: Vec<u64> = if nmax == 0 {
            vec![0; s.n_cells()]
        } else {
            self.m1.chunks(nmax).map(|row| row.iter().sum()).collect()
        };
        let mut zone_total = vec![0u64; s.n_blocks()];
        for c in 0..s.n_types() {
            for i in 0..s.n_zones() {
                for t in 0..s.n_periods() {
                    zone_total[s.block_index(c, t)] += obs_total[s.cell_index(c, i, t)];
                }
            }
        }
        let m0_total: Vec<u64> = if nmax == 0 {
            vec![0; s.n_blocks()]
        } else {
            self.m0.chunks(nmax).map(|row| row.iter().sum()).collect()
        };
        let g1 = zone_total.iter().sum();
        let g0 = m0_total.iter().sum();
        (obs_total, zone_total, m0_total, g1, g0)
    }

    /// True when every cached aggregate equals its defining sum.
    pub fn aggregates_consistent(&self) -> bool {
        let (obs, zone, m0t, g1, g0) = self.compute_aggregates();
        obs == self.m1_obs_total
            && zone == self.m1_zone_total
            && m0t == self.m0_total
            && g1 == self.m1_grand
            && g0 == self.m0_grand
    }

    pub fn shape(&self) -> &ProblemShape {
        &self.shape
    }

    /// `M¹_{c,i,t,n}`.
    pub fn m1(&self, c: usize, i: usize, t: usize, n: usize) -> u64 {
        self.m1[self.shape.m1_index(c, i, t, n)]
    }

    /// `M⁰_{c,t,n}`.
    pub fn m0(&self, c: usize, t: usize, n: usize) -> u64 {
        self.m0[self.shape.m0_index(c, t, n)]
    }

    /// `M¹_{c,i,t,•}`.
    pub fn m1_obs_total(&self, c: usize, i: usize, t: usize) -> u64 {
        self.m1_obs_total[self.shape.cell_index(c, i, t)]
    }

    /// `M¹_{c,•,t,•}`.
    pub fn m1_zone_total(&self, c: usize, t: usize) -> u64 {
        self.m1_zone_total[self.shape.block_index(c, t)]
    }

    /// `M⁰_{c,t,•}`.
    pub fn m0_total(&self, c: usize, t: usize) -> u64 {
        self.m0_total[self.shape.block_index(c, t)]
    }

    /// `M¹`.
    pub fn m1_grand(&self) -> u64 {
        self.m1_grand
    }

    /// `M⁰`.
    pub fn m0_grand(&self) -> u64 {
        self.m0_grand
    }

    pub fn raw_m1(&self) -> &[u64] {
        &self.m1
    }

    pub fn raw_m0(&self) -> &[u64] {
        &self.m0
    }

    /// The same located data with every unlocated arrival discarded.
    pub fn without_unlocated(&self) -> Self {
        let mut out = self.clone();
        out.m0.iter_mut().for_each(|v| *v = 0);
        out.recompute();
        out
    }
}

/// Status of a `(type, period)` block in an estimated intensity field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockStatus {
    Estimated,
    /// `N_{c,t} = 0`.
    NoObservations,
    /// Unlocated arrivals exist but no located ones, so the zone split is unknown.
    NoLocatedArrivals,
}

/// Nonnegative intensities `λ_{c,i,t}` with cached zone sums `S_{c,t}`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityField {
    n_types: usize,
    n_zones: usize,
    n_periods: usize,
    values: Vec<f64>,
    totals: Vec<f64>,
    status: Vec<BlockStatus>,
}

impl IntensityField {
    /// `values` is laid out `(type, zone, period)`.
    pub fn new(shape: &ProblemShape, values: Vec<f64>) -> Result<Self> {
        let status = vec![BlockStatus::Estimated; shape.n_blocks()];
        Self::with_status(shape, values, status)
    }

    pub fn with_status(
        shape: &ProblemShape,
        values: Vec<f64>,
        status: Vec<BlockStatus>,
    ) -> Result<Self> {
        if values.len() != shape.n_cells() {
            return Err(Error::shape(format!(
                "intensity field has {} entries, expected {}",
                values.len(),
                shape.n_cells()
            )));
        }
        if status.len() != shape.n_blocks() {
            return Err(Error::shape("status table does not match shape"));
        }
        if let Some(k) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::domain(format!(
                "intensity {} at flat index {k} is not a finite nonnegative number",
                values[k]
            )));
        }
        let mut field = Self {
            n_types: shape.n_types(),
            n_zones: shape.n_zones(),
            n_periods: shape.n_periods(),
            values,
            totals: vec![0.0; shape.n_blocks()],
            status,
        };
        field.totals = field.zone_sums();
        Ok(field)
    }

    fn zone_sums(&self) -> Vec<f64> {
        let mut totals = vec![0.0; self.n_types * self.n_periods];
        for c in 0..self.n_types {
            for i in 0..self.n_zones {
                for t in 0..self.n_periods {
                    totals[c * self.n_periods + t] += self.get(c, i, t);
                }
            }
        }
        totals
    }

    pub fn get(&self, c: usize, i: usize, t: usize) -> f64 {
        self.values[(c * self.n_zones + i) * self.n_periods + t]
    }

    /// `S_{c,t}`.
    pub fn total(&self, c: usize, t: usize) -> f64 {
        self.totals[c * self.n_periods + t]
    }

    pub fn status(&self, c: usize, t: usize) -> BlockStatus {
        self.status[c * self.n_periods + t]
    }

    pub fn is_estimated(&self, c: usize, t: usize) -> bool {
        self.status(c, t) == BlockStatus::Estimated
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn statuses(&self) -> &[BlockStatus] {
        &self.status
    }

    /// Zone vector `(λ_{c,i,t})_i`.
    pub fn block(&self, c: usize, t: usize) -> Vec<f64> {
        (0..self.n_zones).map(|i| self.get(c, i, t)).collect()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n_types, self.n_zones, self.n_periods)
    }

    /// Largest relative gap between cached and recomputed zone sums.
    pub fn totals_error(&self) -> f64 {
        self.zone_sums()
            .iter()
            .zip(&self.totals)
            .map(|(a, b)| {
                let scale = a.abs().max(b.abs());
                if scale == 0.0 {
                    0.0
                } else {
                    (a - b).abs() / scale
                }
            })
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_counts() -> CountData {
        // 1 type, 2 zones, 1 period, N = 2.
        let shape = ProblemShape::uniform(1, 2, 1, 1.0, 2).unwrap();
        CountData::aggregate(shape, vec![3, 1, 0, 2], vec![2, 1]).unwrap()
    }

    #[test]
    fn aggregates_match_hand_sums() {
        let d = example_counts();
        assert_eq!(d.m1_obs_total(0, 0, 0), 4);
        assert_eq!(d.m1_obs_total(0, 1, 0), 2);
        assert_eq!(d.m1_zone_total(0, 0), 6);
        assert_eq!(d.m0_total(0, 0), 3);
        assert_eq!(d.m1_grand(), 6);
        assert_eq!(d.m0_grand(), 3);
        assert!(d.aggregates_consistent());
    }

    #[test]
    fn all_zero_counts() {
        let shape = ProblemShape::uniform(2, 3, 4, 0.5, 3).unwrap();
        let d = CountData::aggregate(shape.clone(), shape.zeros_m1(), shape.zeros_m0()).unwrap();
        assert_eq!(d.m1_grand(), 0);
        assert_eq!(d.m0_grand(), 0);
        for c in 0..2 {
            for t in 0..4 {
                assert_eq!(d.m1_zone_total(c, t), 0);
                assert_eq!(d.m0_total(c, t), 0);
            }
        }
    }

    #[test]
    fn rejects_negative_and_misshaped() {
        let shape = ProblemShape::uniform(1, 2, 1, 1.0, 2).unwrap();
        assert!(matches!(
            CountData::aggregate(shape.clone(), vec![3, -1, 0, 2], vec![2, 1]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            CountData::aggregate(shape, vec![3, 1, 0], vec![2, 1]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn rejects_counts_outside_mask() {
        let shape =
            ProblemShape::new(1, 1, vec![1.0, 1.0], vec![2, 1]).unwrap();
        // period 1 has a single observation, so n = 1 is masked
        let m1 = vec![1, 1, 0, 4];
        assert!(matches!(
            CountData::aggregate(shape, m1, vec![0, 0, 0, 0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn shape_invariants() {
        assert!(ProblemShape::new(1, 1, vec![1.0, 0.0], vec![1, 1]).is_err());
        assert!(ProblemShape::uniform(1, 1, 6, 1.0, 1)
            .unwrap()
            .with_day_axis(4, 2)
            .is_err());
        let s = ProblemShape::daily(3, 76, 48, &[105, 105, 105, 105, 105, 105, 104]).unwrap();
        assert_eq!(s.n_periods(), 336);
        assert_eq!(s.n_obs(2, 335), 104);
        assert_eq!(s.period(6, 47), Some(335));
        assert_eq!(s.day_slot(49), Some((1, 1)));
        assert!(ProblemShape::uniform(100_000, 100_000, 1000, 1.0, 10).is_err());
    }

    #[test]
    fn intensity_totals() {
        let shape = ProblemShape::uniform(1, 3, 2, 1.0, 1).unwrap();
        let f = IntensityField::new(&shape, vec![1.0, 2.0, 0.5, 0.25, 3.0, 4.0]).unwrap();
        assert_eq!(f.total(0, 0), 1.0 + 0.5 + 3.0);
        assert_eq!(f.total(0, 1), 2.0 + 0.25 + 4.0);
        assert!(f.totals_error() < 1e-12);
        assert!(IntensityField::new(&shape, vec![1.0, -2.0, 0.5, 0.25, 3.0, 4.0]).is_err());
    }

    #[test]
    fn without_unlocated_zeroes_m0() {
        let d = example_counts().without_unlocated();
        assert_eq!(d.m0_grand(), 0);
        assert_eq!(d.m1_grand(), 6);
        assert!(d.aggregates_consistent());
    }
}
