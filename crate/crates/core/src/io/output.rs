//! Result tables. Numbers carry 12 significant digits; cells without an
//! estimate print as `NA`.

use std::fmt::Write as _;
use std::path::Path;

use super::{field, token_lines, write_file};
use crate::analytic::BlockProbabilities;
use crate::error::{Error, Result};
use crate::model::IntensityField;
use crate::uncertainty::UncertaintyTables;

/// Shortest decimal form of `v` rounded to 12 significant digits.
pub fn format_number(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.11e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), format_number)
}

fn read_opt(path: &Path, line: usize, token: &str) -> Result<Option<f64>> {
    if token == "NA" {
        Ok(None)
    } else {
        field(path, line, token, "value").map(Some)
    }
}

/// One line of a `p` table; the interval columns are present only when
/// uncertainty was computed.
#[derive(Debug, Clone, PartialEq)]
pub struct PRow {
    pub c: usize,
    pub t: usize,
    pub p: Option<f64>,
    pub interval: Option<[Option<f64>; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaRow {
    pub c: usize,
    pub i: usize,
    pub t: usize,
    pub lambda: Option<f64>,
    pub interval: Option<[Option<f64>; 3]>,
}

/// `c t p [var lower upper]`, 1-based indices.
pub fn write_p_table(
    path: &Path,
    p: &BlockProbabilities,
    unc: Option<&UncertaintyTables>,
) -> Result<()> {
    let (types, periods) = p.dims();
    let mut out = String::new();
    for c in 0..types {
        for t in 0..periods {
            let k = c * periods + t;
            write!(out, "{} {} {}", c + 1, t + 1, opt(p.get(c, t))).expect("write to string");
            if let Some(u) = unc {
                let ci = u.p_ci[k];
                write!(
                    out,
                    " {} {} {}",
                    opt(u.p_var[k]),
                    opt(ci.map(|v| v.lower)),
                    opt(ci.map(|v| v.upper))
                )
                .expect("write to string");
            }
            out.push('\n');
        }
    }
    write_file(path, &out)
}

/// `c i t λ [var lower upper]`, 1-based indices, `NA` outside estimated blocks.
pub fn write_lambda_table(
    path: &Path,
    lambda: &IntensityField,
    unc: Option<&UncertaintyTables>,
) -> Result<()> {
    let (types, zones, periods) = lambda.dims();
    let mut out = String::new();
    for c in 0..types {
        for i in 0..zones {
            for t in 0..periods {
                let k = (c * zones + i) * periods + t;
                let v = lambda.is_estimated(c, t).then(|| lambda.get(c, i, t));
                write!(out, "{} {} {} {}", c + 1, i + 1, t + 1, opt(v)).expect("write to string");
                if let Some(u) = unc {
                    let ci = u.lambda_ci[k];
                    write!(
                        out,
                        " {} {} {}",
                        opt(u.lambda_var[k]),
                        opt(ci.map(|v| v.lower)),
                        opt(ci.map(|v| v.upper))
                    )
                    .expect("write to string");
                }
                out.push('\n');
            }
        }
    }
    write_file(path, &out)
}

fn read_rows(path: &Path, keys: usize) -> Result<Vec<(Vec<usize>, Option<f64>, Option<[Option<f64>; 3]>)>> {
    token_lines(path)?
        .into_iter()
        .map(|(line, tok)| {
            if tok.len() != keys + 1 && tok.len() != keys + 4 {
                return Err(Error::parse(
                    path,
                    line,
                    format!("expected {} or {} fields, found {}", keys + 1, keys + 4, tok.len()),
                ));
            }
            let idx = tok[..keys]
                .iter()
                .map(|s| {
                    let v: usize = field(path, line, s, "index")?;
                    v.checked_sub(1)
                        .ok_or_else(|| Error::parse(path, line, "indices are 1-based"))
                })
                .collect::<Result<Vec<_>>>()?;
            let value = read_opt(path, line, &tok[keys])?;
            let interval = if tok.len() == keys + 4 {
                Some([
                    read_opt(path, line, &tok[keys + 1])?,
                    read_opt(path, line, &tok[keys + 2])?,
                    read_opt(path, line, &tok[keys + 3])?,
                ])
            } else {
                None
            };
            Ok((idx, value, interval))
        })
        .collect()
}

pub fn read_p_table(path: &Path) -> Result<Vec<PRow>> {
    Ok(read_rows(path, 2)?
        .into_iter()
        .map(|(idx, p, interval)| PRow {
            c: idx[0],
            t: idx[1],
            p,
            interval,
        })
        .collect())
}

pub fn read_lambda_table(path: &Path) -> Result<Vec<LambdaRow>> {
    Ok(read_rows(path, 3)?
        .into_iter()
        .map(|(idx, lambda, interval)| LambdaRow {
            c: idx[0],
            i: idx[1],
            t: idx[2],
            lambda,
            interval,
        })
        .collect())
}

/// One row per zone: expected arrivals over all periods `Σ_t λ 𝒟_t` per
/// type, then their sum. Blocks without an estimate are skipped.
pub fn write_heatmap(path: &Path, lambda: &IntensityField, durations: &[f64]) -> Result<()> {
    let (types, zones, periods) = lambda.dims();
    let mut out = String::from("zone");
    for c in 0..types {
        write!(out, ",type{}", c + 1).expect("write to string");
    }
    out.push_str(",total\n");
    for i in 0..zones {
        write!(out, "{}", i + 1).expect("write to string");
        let mut total = 0.0;
        for c in 0..types {
            let v: f64 = (0..periods)
                .filter(|&t| lambda.is_estimated(c, t))
                .map(|t| lambda.get(c, i, t) * durations[t])
                .sum();
            total += v;
            write!(out, ",{}", format_number(v)).expect("write to string");
        }
        writeln!(out, ",{}", format_number(total)).expect("write to string");
    }
    write_file(path, &out)
}

/// One row per period: `Σ_i λ_{c,i,t}` per type. `day_slot` maps a period
/// to its 1-based day and slot when the shape has a day axis.
pub fn write_weekly(
    path: &Path,
    lambda: &IntensityField,
    day_slot: impl Fn(usize) -> Option<(usize, usize)>,
) -> Result<()> {
    let (types, _, periods) = lambda.dims();
    let mut out = String::from("period,day,slot");
    for c in 0..types {
        write!(out, ",type{}", c + 1).expect("write to string");
    }
    out.push('\n');
    for t in 0..periods {
        let (d, s) = day_slot(t).map_or((String::from("NA"), String::from("NA")), |(d, s)| {
            ((d + 1).to_string(), (s + 1).to_string())
        });
        write!(out, "{},{d},{s}", t + 1).expect("write to string");
        for c in 0..types {
            let v = lambda.is_estimated(c, t).then(|| lambda.total(c, t));
            write!(out, ",{}", opt(v)).expect("write to string");
        }
        out.push('\n');
    }
    write_file(path, &out)
}
