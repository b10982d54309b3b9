//! Plain-text input formats. Tokens are separated by spaces or tabs, file
//! indices are 1-based, and every error carries a 1-based line number.

mod config;
mod output;

pub use config::{ModelKind, RunConfig, CONFIG_KEYS};
pub use output::{
    format_number, read_lambda_table, read_p_table, write_heatmap, write_lambda_table,
    write_p_table, write_weekly, LambdaRow, PRow,
};

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::covariate::CovariateData;
use crate::error::{Error, Result};
use crate::model::ProblemShape;
use crate::population::PopulationShares;

/// Nonempty lines as `(1-based line number, tokens)`.
fn token_lines(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(k, line)| {
            (
                k + 1,
                line.split_whitespace().map(str::to_owned).collect::<Vec<_>>(),
            )
        })
        .filter(|(_, tokens)| !tokens.is_empty())
        .collect())
}

fn field<T: FromStr>(path: &Path, line: usize, token: &str, what: &str) -> Result<T> {
    token
        .parse()
        .map_err(|_| Error::parse(path, line, format!("cannot read {what} from `{token}`")))
}

/// Reads a 1-based index and checks it against `1..=limit`.
fn index(path: &Path, line: usize, token: &str, what: &str, limit: usize) -> Result<usize> {
    let v: usize = field(path, line, token, what)?;
    if v == 0 || v > limit {
        return Err(Error::parse(
            path,
            line,
            format!("{what} {v} outside 1..={limit}"),
        ));
    }
    Ok(v - 1)
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Contents of the info file. The two trailing header tokens carry no
/// meaning but are kept for round trips.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoFile {
    pub shape: ProblemShape,
    pub extra: [String; 2],
}

impl InfoFile {
    pub fn periods_per_day(&self) -> usize {
        self.shape.day_axis().map_or(self.shape.n_periods(), |a| a.periods_per_day)
    }
}

/// `T D |ℐ| |𝒞| x y` then the observation count of each day, Monday first.
pub fn read_info(path: &Path) -> Result<InfoFile> {
    let lines = token_lines(path)?;
    let Some((l1, head)) = lines.first() else {
        return Err(Error::parse(path, 1, "empty info file"));
    };
    if head.len() != 6 {
        return Err(Error::parse(
            path,
            *l1,
            format!("expected 6 tokens (T D zones types and two more), found {}", head.len()),
        ));
    }
    let periods: usize = field(path, *l1, &head[0], "periods per day")?;
    let days: usize = field(path, *l1, &head[1], "day count")?;
    let zones: usize = field(path, *l1, &head[2], "zone count")?;
    let types: usize = field(path, *l1, &head[3], "type count")?;
    if [periods, days, zones, types].contains(&0) {
        return Err(Error::parse(path, *l1, "sizes must be positive"));
    }
    let Some((l2, obs)) = lines.get(1) else {
        return Err(Error::parse(path, l1 + 1, "missing observation counts line"));
    };
    if obs.len() != days {
        return Err(Error::parse(
            path,
            *l2,
            format!("expected {days} observation counts, found {}", obs.len()),
        ));
    }
    let obs: Vec<usize> = obs
        .iter()
        .map(|t| field(path, *l2, t, "observation count"))
        .collect::<Result<_>>()?;
    if let Some((l3, _)) = lines.get(2) {
        return Err(Error::parse(path, *l3, "unexpected extra line"));
    }
    let shape = ProblemShape::daily(types, zones, periods, &obs)
        .map_err(|e| Error::parse(path, *l1, format!("limit exceeded: {e}")))?;
    Ok(InfoFile {
        shape,
        extra: [head[4].clone(), head[5].clone()],
    })
}

pub fn write_info(path: &Path, info: &InfoFile) -> Result<()> {
    let shape = &info.shape;
    let axis = shape.day_axis().ok_or_else(|| {
        Error::Unsupported("the info file format needs a day axis".into())
    })?;
    let obs: Vec<String> = (0..axis.n_days)
        .map(|d| {
            let t = shape.period(d, 0).expect("day in range");
            shape.n_obs(0, t).to_string()
        })
        .collect();
    let text = format!(
        "{} {} {} {} {} {}\n{}\n",
        axis.periods_per_day,
        axis.n_days,
        shape.n_zones(),
        shape.n_types(),
        info.extra[0],
        info.extra[1],
        obs.join(" ")
    );
    write_file(path, &text)
}

struct CountLine {
    line: usize,
    c: usize,
    zone_token: String,
    t: usize,
    n: usize,
    count: i64,
}

/// Shared parser for `t d i c n count h` lines; the zone is validated by
/// the caller.
fn read_count_lines(path: &Path, shape: &ProblemShape) -> Result<Vec<CountLine>> {
    let axis = shape.day_axis().ok_or_else(|| {
        Error::Unsupported("count files need a shape with a day axis".into())
    })?;
    token_lines(path)?
        .into_iter()
        .map(|(line, tok)| {
            if tok.len() != 7 {
                return Err(Error::parse(
                    path,
                    line,
                    format!("expected 7 fields (t d i c n count h), found {}", tok.len()),
                ));
            }
            let slot = index(path, line, &tok[0], "time interval", axis.periods_per_day)?;
            let day = index(path, line, &tok[1], "day", axis.n_days)?;
            let c = index(path, line, &tok[3], "arrival type", shape.n_types())?;
            let t = shape.period(day, slot).expect("checked ranges");
            let n = index(path, line, &tok[4], "observation", shape.n_obs(c, t))?;
            let count: i64 = field(path, line, &tok[5], "count")?;
            if count < 0 {
                return Err(Error::parse(path, line, format!("negative count {count}")));
            }
            let _holiday: i64 = field(path, line, &tok[6], "holiday flag")?;
            Ok(CountLine {
                line,
                c,
                zone_token: tok[2].clone(),
                t,
                n,
                count,
            })
        })
        .collect()
}

/// Located counts `M¹` in the layout expected by [`crate::CountData::aggregate`].
pub fn read_arrivals(path: &Path, shape: &ProblemShape) -> Result<Vec<i64>> {
    let mut m1 = shape.zeros_m1();
    let mut seen = HashSet::new();
    for rec in read_count_lines(path, shape)? {
        let i = index(path, rec.line, &rec.zone_token, "zone", shape.n_zones())?;
        if !seen.insert((rec.c, i, rec.t, rec.n)) {
            return Err(Error::parse(path, rec.line, "duplicate record"));
        }
        m1[shape.m1_index(rec.c, i, rec.t, rec.n)] = rec.count;
    }
    Ok(m1)
}

/// Unlocated counts `M⁰`. The zone column is read but ignored, so repeated
/// `(c, t, n)` lines are summed.
pub fn read_missing(path: &Path, shape: &ProblemShape) -> Result<Vec<i64>> {
    let mut m0 = shape.zeros_m0();
    for rec in read_count_lines(path, shape)? {
        let _zone: i64 = field(path, rec.line, &rec.zone_token, "zone")?;
        let k = shape.m0_index(rec.c, rec.t, rec.n);
        m0[k] = m0[k]
            .checked_add(rec.count)
            .ok_or_else(|| Error::parse(path, rec.line, "count overflow"))?;
    }
    Ok(m0)
}

fn count_line(out: &mut String, shape: &ProblemShape, c: usize, i: usize, t: usize, n: usize, v: i64) {
    let (day, slot) = shape.day_slot(t).expect("day axis");
    writeln!(out, "{} {} {} {} {} {} 0", slot + 1, day + 1, i + 1, c + 1, n + 1, v)
        .expect("write to string");
}

/// Writes nonzero located counts, one line per `(c, i, t, n)`.
pub fn write_arrivals(path: &Path, shape: &ProblemShape, m1: &[i64]) -> Result<()> {
    if shape.day_axis().is_none() {
        return Err(Error::Unsupported("count files need a day axis".into()));
    }
    let mut out = String::new();
    for c in 0..shape.n_types() {
        for t in 0..shape.n_periods() {
            for i in 0..shape.n_zones() {
                for n in 0..shape.n_obs(c, t) {
                    let v = m1[shape.m1_index(c, i, t, n)];
                    if v != 0 {
                        count_line(&mut out, shape, c, i, t, n, v);
                    }
                }
            }
        }
    }
    write_file(path, &out)
}

/// Writes nonzero unlocated counts with zone index 1.
pub fn write_missing(path: &Path, shape: &ProblemShape, m0: &[i64]) -> Result<()> {
    if shape.day_axis().is_none() {
        return Err(Error::Unsupported("count files need a day axis".into()));
    }
    let mut out = String::new();
    for c in 0..shape.n_types() {
        for t in 0..shape.n_periods() {
            for n in 0..shape.n_obs(c, t) {
                let v = m0[shape.m0_index(c, t, n)];
                if v != 0 {
                    count_line(&mut out, shape, c, 0, t, n, v);
                }
            }
        }
    }
    write_file(path, &out)
}

pub const N_FEATURES: usize = 5;

/// One line of the neighbors file.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneRecord {
    pub lat: f64,
    pub lon: f64,
    /// Read and kept, not used by any model.
    pub zone_type: String,
    /// Population first, then four land-use areas.
    pub features: [f64; N_FEATURES],
    /// `(zone, distance)`, 0-based, as listed in the file.
    pub neighbors: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    pub zones: Vec<ZoneRecord>,
    /// Symmetric, sorted adjacency lists.
    pub adjacency: Vec<Vec<usize>>,
}

impl NeighborTable {
    /// Builds the table and its symmetric adjacency, warning about
    /// one-sided listings.
    pub fn new(zones: Vec<ZoneRecord>) -> Result<Self> {
        let n = zones.len();
        let mut adjacency = vec![Vec::new(); n];
        for (i, z) in zones.iter().enumerate() {
            for &(j, _) in &z.neighbors {
                if j >= n || j == i {
                    return Err(Error::shape(format!("zone {} lists invalid neighbour {}", i + 1, j + 1)));
                }
                if !zones[j].neighbors.iter().any(|(k, _)| *k == i) {
                    log::warn!(
                        "zone {} lists {} but not the reverse; treating them as neighbours",
                        i + 1,
                        j + 1
                    );
                }
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { zones, adjacency })
    }

    pub fn covariates(&self) -> Result<CovariateData> {
        CovariateData::new(self.zones.iter().map(|z| z.features.to_vec()).collect())
    }

    pub fn population(&self) -> Result<PopulationShares> {
        PopulationShares::new(self.zones.iter().map(|z| z.features[0]).collect())
    }
}

/// `i lat lon type f1 … f5 (j dist)*`, one line per zone, zones `1..=n` in
/// any order.
pub fn read_neighbors(path: &Path) -> Result<NeighborTable> {
    let lines = token_lines(path)?;
    let n = lines.len();
    let mut slots: Vec<Option<ZoneRecord>> = vec![None; n];
    for (line, tok) in &lines {
        let line = *line;
        if tok.len() < 4 + N_FEATURES || (tok.len() - 4 - N_FEATURES) % 2 != 0 {
            return Err(Error::parse(
                path,
                line,
                format!(
                    "expected `i lat lon type` + {N_FEATURES} features + (neighbour distance) pairs, found {} tokens",
                    tok.len()
                ),
            ));
        }
        let i = index(path, line, &tok[0], "zone", n)?;
        if slots[i].is_some() {
            return Err(Error::parse(path, line, format!("zone {} listed twice", i + 1)));
        }
        let mut features = [0.0_f64; N_FEATURES];
        for (k, f) in features.iter_mut().enumerate() {
            *f = field(path, line, &tok[4 + k], "feature")?;
            if !(*f >= 0.0 && f.is_finite()) {
                return Err(Error::parse(path, line, format!("feature {} is {f}", k + 1)));
            }
        }
        let neighbors = tok[4 + N_FEATURES..]
            .chunks(2)
            .map(|pair| {
                let j = index(path, line, &pair[0], "neighbour", n)?;
                if j == i {
                    return Err(Error::parse(path, line, "zone lists itself as a neighbour"));
                }
                Ok((j, field(path, line, &pair[1], "distance")?))
            })
            .collect::<Result<Vec<_>>>()?;
        slots[i] = Some(ZoneRecord {
            lat: field(path, line, &tok[1], "latitude")?,
            lon: field(path, line, &tok[2], "longitude")?,
            zone_type: tok[3].clone(),
            features,
            neighbors,
        });
    }
    NeighborTable::new(slots.into_iter().map(|z| z.expect("every index filled")).collect())
}

pub fn write_neighbors(path: &Path, table: &NeighborTable) -> Result<()> {
    let mut out = String::new();
    for (i, z) in table.zones.iter().enumerate() {
        write!(out, "{} {} {} {}", i + 1, z.lat, z.lon, z.zone_type).expect("write to string");
        for f in z.features {
            write!(out, " {f}").expect("write to string");
        }
        for (j, d) in &z.neighbors {
            write!(out, " {} {d}", j + 1).expect("write to string");
        }
        out.push('\n');
    }
    write_file(path, &out)
}
