//! `key = value` run configuration. Later assignments win, so command-line
//! overrides are applied after the file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::solver::SolverConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Analytical,
    Regularized,
    Population,
    Covariate,
    All,
}

impl ModelKind {
    /// The models a run executes, in order.
    pub fn expand(self) -> Vec<ModelKind> {
        match self {
            ModelKind::All => vec![
                ModelKind::Analytical,
                ModelKind::Regularized,
                ModelKind::Covariate,
                ModelKind::Population,
            ],
            other => vec![other],
        }
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "analytical" => Ok(ModelKind::Analytical),
            "regularized" => Ok(ModelKind::Regularized),
            "population" => Ok(ModelKind::Population),
            "covariate" => Ok(ModelKind::Covariate),
            "all" => Ok(ModelKind::All),
            other => Err(format!(
                "unknown model `{other}` (expected analytical, regularized, population, covariate or all)"
            )),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Analytical => "analytical",
            ModelKind::Regularized => "regularized",
            ModelKind::Population => "population",
            ModelKind::Covariate => "covariate",
            ModelKind::All => "all",
        })
    }
}

/// Recognized keys, in their canonical spelling.
pub const CONFIG_KEYS: &[&str] = &[
    "EPS",
    "sigma",
    "max_iter",
    "lower_lambda",
    "beta_bar",
    "tol",
    "test_weights",
    "model",
    "info_file",
    "arrivals_file",
    "neighbors_file",
    "missing_file",
    "mc_samples",
    "seed",
    "alpha",
    "output_dir",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub solver: SolverConfig,
    pub test_weights: Vec<f64>,
    pub model: ModelKind,
    pub info_file: Option<PathBuf>,
    pub arrivals_file: Option<PathBuf>,
    pub neighbors_file: Option<PathBuf>,
    pub missing_file: Option<PathBuf>,
    pub mc_samples: usize,
    pub seed: u64,
    pub alpha: f64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            test_weights: vec![0.0, 0.001, 0.005, 0.01, 0.03],
            model: ModelKind::Analytical,
            info_file: None,
            arrivals_file: None,
            neighbors_file: None,
            missing_file: None,
            mc_samples: 100,
            seed: 0,
            alpha: 0.05,
            output_dir: PathBuf::from("results"),
        }
    }
}

fn canonical(key: &str) -> Option<&'static str> {
    let norm = key.trim().replace('-', "_").to_ascii_lowercase();
    CONFIG_KEYS
        .iter()
        .copied()
        .find(|k| k.to_ascii_lowercase() == norm)
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.trim().parse().map_err(|_| Error::Config {
        key: key.into(),
        message: format!("cannot parse `{raw}`"),
    })
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config {
            key: key.into(),
            message: format!("must be > 0, got {v}"),
        })
    }
}

impl RunConfig {
    /// Applies one assignment. Relative paths are joined to `base`.
    pub fn set(&mut self, key: &str, raw: &str, base: Option<&Path>) -> Result<()> {
        let Some(k) = canonical(key) else {
            log::warn!("ignoring unknown configuration key `{key}`");
            return Ok(());
        };
        let path = |raw: &str| {
            let p = PathBuf::from(raw.trim());
            match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        };
        match k {
            "EPS" => self.solver.eps = positive(k, value(k, raw)?)?,
            "sigma" => {
                let v: f64 = value(k, raw)?;
                if !(v > 0.0 && v < 1.0) {
                    return Err(Error::Config {
                        key: k.into(),
                        message: format!("must lie in (0, 1), got {v}"),
                    });
                }
                self.solver.sigma = v;
            }
            "max_iter" => {
                let v: usize = value(k, raw)?;
                if v == 0 {
                    return Err(Error::Config {
                        key: k.into(),
                        message: "must be at least 1".into(),
                    });
                }
                self.solver.max_iter = v;
            }
            "lower_lambda" => self.solver.lower_lambda = Some(positive(k, value(k, raw)?)?),
            "beta_bar" => self.solver.beta_bar = positive(k, value(k, raw)?)?,
            "tol" => self.solver.tol = positive(k, value(k, raw)?)?,
            "test_weights" => {
                let weights: Vec<f64> = raw
                    .split(|ch: char| ch.is_whitespace() || ch == ',')
                    .filter(|s| !s.is_empty())
                    .map(|s| value(k, s))
                    .collect::<Result<_>>()?;
                if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
                    return Err(Error::Config {
                        key: k.into(),
                        message: format!("need one or more weights >= 0, got `{raw}`"),
                    });
                }
                self.test_weights = weights;
            }
            "model" => {
                self.model = raw.trim().parse().map_err(|message| Error::Config {
                    key: k.into(),
                    message,
                })?
            }
            "info_file" => self.info_file = Some(path(raw)),
            "arrivals_file" => self.arrivals_file = Some(path(raw)),
            "neighbors_file" => self.neighbors_file = Some(path(raw)),
            "missing_file" => self.missing_file = Some(path(raw)),
            "mc_samples" => {
                let v: usize = value(k, raw)?;
                if v == 0 {
                    return Err(Error::Config {
                        key: k.into(),
                        message: "must be at least 1".into(),
                    });
                }
                self.mc_samples = v;
            }
            "seed" => self.seed = value(k, raw)?,
            "alpha" => {
                let v: f64 = value(k, raw)?;
                if !(v > 0.0 && v < 1.0) {
                    return Err(Error::Config {
                        key: k.into(),
                        message: format!("must lie in (0, 1), got {v}"),
                    });
                }
                self.alpha = v;
            }
            "output_dir" => self.output_dir = path(raw),
            _ => unreachable!("every canonical key is handled"),
        }
        Ok(())
    }

    /// Parses `key = value` lines (`#` starts a comment) from `text`.
    pub fn apply_text(&mut self, text: &str, origin: &Path, base: Option<&Path>) -> Result<()> {
        for (k, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, raw)) = line.split_once('=') else {
                return Err(Error::parse(origin, k + 1, "expected `key = value`"));
            };
            self.set(key.trim(), raw.trim(), base)?;
        }
        Ok(())
    }

    /// Reads `path` (if any), then applies `overrides` in order. Input
    /// paths named by the result must exist.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            cfg.apply_text(&text, path, path.parent())?;
        }
        for (k, v) in overrides {
            cfg.set(k, v, None)?;
        }
        cfg.check_paths()?;
        Ok(cfg)
    }

    fn check_paths(&self) -> Result<()> {
        for (key, p) in [
            ("info_file", &self.info_file),
            ("arrivals_file", &self.arrivals_file),
            ("neighbors_file", &self.neighbors_file),
            ("missing_file", &self.missing_file),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(Error::Config {
                        key: key.into(),
                        message: format!("{} does not exist", p.display()),
                    });
                }
            }
        }
        Ok(())
    }

    /// A required input path, or a config error naming the key.
    pub fn require(&self, key: &str) -> Result<&Path> {
        let p = match key {
            "info_file" => &self.info_file,
            "arrivals_file" => &self.arrivals_file,
            "neighbors_file" => &self.neighbors_file,
            "missing_file" => &self.missing_file,
            _ => &None,
        };
        p.as_deref().ok_or_else(|| Error::Config {
            key: key.into(),
            message: "not set".into(),
        })
    }
}
