//! Command-line driver: parse inputs, run the selected estimators, write
//! result tables.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use missloc::analytic::{estimate_lambda, estimate_p_per_ct, BlockProbabilities};
use missloc::covariate::{estimate_covariate_model, CovariateOptions};
use missloc::io::{self, ModelKind, NeighborTable, RunConfig};
use missloc::model::{BlockStatus, CountData, IntensityField};
use missloc::population::{estimate_population_model, McConfig};
use missloc::regularized::{default_time_groups, weight_sweep};
use missloc::report::{write_report, ReportOptions};
use missloc::simulate::{write_dataset, DemoConfig};
use missloc::uncertainty::analytic_uncertainty;
use missloc::solver::Termination;
use missloc::Error;

#[derive(Debug, Parser)]
#[command(name = "missing", version, about = "Arrival intensities with missing locations")]
pub struct Cli {
    #[command(flatten)]
    pub opts: RunFlags,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run estimators (the default when no subcommand is given).
    Estimate,
    /// Generate a synthetic dataset in the input file formats.
    Simulate {
        /// TOML scenario; the built-in demo when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Directory receiving the dataset.
        #[arg(long, default_value = "demo")]
        out: PathBuf,
    },
    /// Summarize analytical results already written by `estimate`.
    Report {
        /// Poisson draws per weekly-total histogram.
        #[arg(long, default_value_t = 10_000)]
        draws: usize,
        /// Histogram bins.
        #[arg(long, default_value_t = 40)]
        bins: usize,
    },
}

/// Flags mirroring the configuration keys. A flag given here wins over the
/// same key in the configuration file.
#[derive(Debug, Default, Args)]
pub struct RunFlags {
    /// Configuration file of `key = value` lines.
    #[arg(short = 'f', long = "config", global = true)]
    pub config: Option<PathBuf>,
    /// analytical, regularized, covariate, population or all.
    #[arg(long, global = true, value_parser = parse_model)]
    pub model: Option<ModelKind>,
    /// Penalty weights for the regularized sweep.
    #[arg(long = "test_weights", global = true, num_args = 1.., value_name = "W")]
    pub test_weights: Option<Vec<f64>>,
    /// Seed for simulation and Monte-Carlo sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Interval level is 1 - alpha.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Directory for result tables.
    #[arg(long = "output-dir", alias = "output_dir", global = true)]
    pub output_dir: Option<PathBuf>,
    /// Lower bound and boundary margin for estimates.
    #[arg(long = "EPS", global = true)]
    pub eps: Option<f64>,
    /// Armijo slope fraction.
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
    /// Solver iteration limit.
    #[arg(long = "max_iter", global = true)]
    pub max_iter: Option<usize>,
    /// Lower bound on intensities (defaults to EPS).
    #[arg(long = "lower_lambda", global = true)]
    pub lower_lambda: Option<f64>,
    /// Initial projected-gradient step.
    #[arg(long = "beta_bar", global = true)]
    pub beta_bar: Option<f64>,
    /// Relative stopping tolerance.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Allocation samples per observation in the population model.
    #[arg(long = "mc_samples", global = true)]
    pub mc_samples: Option<usize>,
    #[arg(long = "info_file", global = true)]
    pub info_file: Option<PathBuf>,
    #[arg(long = "arrivals_file", global = true)]
    pub arrivals_file: Option<PathBuf>,
    #[arg(long = "neighbors_file", global = true)]
    pub neighbors_file: Option<PathBuf>,
    #[arg(long = "missing_file", global = true)]
    pub missing_file: Option<PathBuf>,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse()
}

impl RunFlags {
    /// The flags that were given, as configuration assignments.
    pub fn overrides(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        put("model", self.model.map(|m| m.to_string()));
        put(
            "test_weights",
            self.test_weights.as_ref().map(|w| {
                w.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
            }),
        );
        put("seed", self.seed.map(|v| v.to_string()));
        put("alpha", self.alpha.map(|v| v.to_string()));
        put("output_dir", path(&self.output_dir));
        put("EPS", self.eps.map(|v| v.to_string()));
        put("sigma", self.sigma.map(|v| v.to_string()));
        put("max_iter", self.max_iter.map(|v| v.to_string()));
        put("lower_lambda", self.lower_lambda.map(|v| v.to_string()));
        put("beta_bar", self.beta_bar.map(|v| v.to_string()));
        put("tol", self.tol.map(|v| v.to_string()));
        put("mc_samples", self.mc_samples.map(|v| v.to_string()));
        put("info_file", path(&self.info_file));
        put("arrivals_file", path(&self.arrivals_file));
        put("neighbors_file", path(&self.neighbors_file));
        put("missing_file", path(&self.missing_file));
        out
    }

    pub fn load(&self) -> missloc::Result<RunConfig> {
        RunConfig::load(self.config.as_deref(), &self.overrides())
    }
}

/// Process exit code for an error: 1 for problems with the user's input,
/// 2 for failures inside the estimators.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::Parse { .. } | Error::Io { .. } | Error::Unsupported(_) => 1,
        Error::Shape(_) | Error::Domain(_) => 1,
        Error::Undefined(_)
        | Error::Singular { .. }
        | Error::Solver { .. }
        | Error::Contract(_) => 2,
    }
}

/// Error category printed in front of messages.
pub fn category(err: &Error) -> &'static str {
    match err {
        Error::Config { .. } => "config",
        Error::Parse { .. } | Error::Shape(_) | Error::Domain(_) | Error::Unsupported(_) => "parse",
        Error::Io { .. } => "io",
        _ => "solver",
    }
}

/// Counts and shape from the configured input files.
pub fn load_counts(cfg: &RunConfig) -> missloc::Result<CountData> {
    let info = io::read_info(cfg.require("info_file")?)?;
    let shape = info.shape;
    let m1 = io::read_arrivals(cfg.require("arrivals_file")?, &shape)?;
    let m0 = match &cfg.missing_file {
        Some(p) => io::read_missing(p, &shape)?,
        None => shape.zeros_m0(),
    };
    CountData::aggregate(shape, m1, m0)
}

fn load_neighbors(cfg: &RunConfig) -> missloc::Result<NeighborTable> {
    let table = io::read_neighbors(cfg.require("neighbors_file")?)?;
    Ok(table)
}

fn check_zones(table: &NeighborTable, counts: &CountData) -> missloc::Result<()> {
    if table.zones.len() != counts.shape().n_zones() {
        return Err(Error::Config {
            key: "neighbors_file".into(),
            message: format!(
                "{} zones listed, info file declares {}",
                table.zones.len(),
                counts.shape().n_zones()
            ),
        });
    }
    Ok(())
}

fn create_dir(dir: &Path) -> missloc::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn warn_inestimable(lambda: &IntensityField, model: &str) {
    let (types, _, periods) = lambda.dims();
    for c in 0..types {
        for t in 0..periods {
            match lambda.status(c, t) {
                BlockStatus::Estimated => {}
                BlockStatus::NoObservations => {
                    log::warn!("{model}: type {}, period {}: no observations", c + 1, t + 1)
                }
                BlockStatus::NoLocatedArrivals => log::warn!(
                    "{model}: type {}, period {}: no located arrivals, intensities not identifiable",
                    c + 1,
                    t + 1
                ),
            }
        }
    }
}

/// `"N converged, M stationary, ..."` over solver runs.
fn summarize(terms: &[Termination]) -> String {
    let count = |k: Termination| terms.iter().filter(|t| **t == k).count();
    format!(
        "{} converged, {} stationary, {} stalled, {} at iteration limit",
        count(Termination::Converged),
        count(Termination::Stationary),
        count(Termination::LineSearchStalled),
        count(Termination::MaxIterations)
    )
}

/// Runs every model selected by `cfg` and returns the files written.
pub fn run_estimate(cfg: &RunConfig) -> missloc::Result<Vec<PathBuf>> {
    let counts = load_counts(cfg)?;
    let shape = counts.shape();
    let out = &cfg.output_dir;
    create_dir(out)?;
    let mut written = Vec::new();
    let mut neighbors: Option<NeighborTable> = None;
    let mut neighbors_table = || -> missloc::Result<NeighborTable> {
        if neighbors.is_none() {
            let t = load_neighbors(cfg)?;
            check_zones(&t, &counts)?;
            neighbors = Some(t);
        }
        Ok(neighbors.clone().expect("just loaded"))
    };

    for model in cfg.model.expand() {
        log::info!("running {model} model");
        match model {
            ModelKind::Analytical => {
                let p = estimate_p_per_ct(&counts);
                let lambda = estimate_lambda(&counts);
                warn_inestimable(&lambda, "analytical");
                let unc = analytic_uncertainty(&counts, &lambda, &p, cfg.alpha)?;
                let files = [
                    out.join("p_model1.txt"),
                    out.join("lambda_model1.txt"),
                    out.join("heatmap_model1.csv"),
                    out.join("weekly_model1.csv"),
                ];
                io::write_p_table(&files[0], &p, Some(&unc))?;
                io::write_lambda_table(&files[1], &lambda, Some(&unc))?;
                io::write_heatmap(&files[2], &lambda, shape.durations())?;
                io::write_weekly(&files[3], &lambda, |t| shape.day_slot(t))?;
                written.extend(files);
            }
            ModelKind::Regularized => {
                let table = neighbors_table()?;
                let groups = match default_time_groups(shape) {
                    Ok(g) => g,
                    Err(Error::Unsupported(msg)) => {
                        log::warn!("{msg}; using one group per period");
                        (0..shape.n_periods()).map(|t| vec![t]).collect()
                    }
                    Err(e) => return Err(e),
                };
                for (w, est) in
                    weight_sweep(&counts, &groups, &table.adjacency, &cfg.test_weights, &cfg.solver)?
                {
                    log::info!(
                        "regularized w = {w}: objective {} + {}, {}",
                        est.lambda_objective,
                        est.p_objective,
                        summarize(&est.terminations)
                    );
                    let lam = out.join(format!("lambda_model2w{w}.txt"));
                    let p = out.join(format!("p_model2w{w}.txt"));
                    io::write_lambda_table(&lam, &est.lambda, None)?;
                    io::write_p_table(&p, &est.p, None)?;
                    written.extend([lam, p]);
                }
            }
            ModelKind::Covariate => {
                let cov = neighbors_table()?.covariates()?;
                let est = estimate_covariate_model(
                    &counts,
                    &cov,
                    &cfg.solver,
                    &CovariateOptions::default(),
                )?;
                log::info!(
                    "covariate objective {}, {}",
                    est.objective,
                    summarize(&est.terminations)
                );
                let lam = out.join("lambda_covariate.txt");
                io::write_lambda_table(&lam, &est.lambda, None)?;
                let beta = out.join("beta_covariate.txt");
                let mut text = String::new();
                let (types, periods, nf) = est.beta.dims();
                for c in 0..types {
                    for t in 0..periods {
                        for (k, v) in est.beta.get(c, t).iter().enumerate() {
                            text.push_str(&format!(
                                "{} {} {} {}\n",
                                c + 1,
                                t + 1,
                                k + 1,
                                io::format_number(*v)
                            ));
                        }
                    }
                }
                debug_assert_eq!(text.lines().count(), types * periods * nf);
                std::fs::write(&beta, text).map_err(|e| Error::Io {
                    path: beta.clone(),
                    source: e,
                })?;
                written.extend([lam, beta]);
            }
            ModelKind::Population => {
                let pi = neighbors_table()?.population()?;
                let mc = McConfig {
                    samples: cfg.mc_samples,
                    seed: cfg.seed,
                    ..McConfig::default()
                };
                let est = estimate_population_model(&counts, &pi, &cfg.solver, &mc)?;
                log::info!(
                    "population objective {}, {}",
                    est.objective,
                    summarize(&est.terminations)
                );
                let lam = out.join("lambda_population.txt");
                io::write_lambda_table(&lam, &est.lambda, None)?;
                written.push(lam);
            }
            ModelKind::All => unreachable!("expanded above"),
        }
    }
    for f in &written {
        log::info!("wrote {}", f.display());
    }
    Ok(written)
}

/// Generates a dataset from a TOML scenario (or the built-in demo).
pub fn run_simulate(
    scenario: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> missloc::Result<Vec<PathBuf>> {
    let mut demo = match scenario {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.to_path_buf(),
                source: e,
            })?;
            toml::from_str::<DemoConfig>(&text).map_err(|e| Error::Config {
                key: "scenario".into(),
                message: e.to_string(),
            })?
        }
        None => DemoConfig::default(),
    };
    if let Some(s) = seed {
        demo.seed = s;
    }
    let built = demo.build()?;
    let counts = write_dataset(out, &built.spec, &built.zones)?;
    log::info!(
        "simulated {} located and {} unlocated arrivals into {}",
        counts.m1_grand(),
        counts.m0_grand(),
        out.display()
    );
    Ok(missloc::simulate::DATASET_FILES
        .iter()
        .map(|f| out.join(f))
        .collect())
}

/// Rebuilds an intensity field from a written table; blocks printed as `NA`
/// get their status from the counts.
fn read_intensity(path: &Path, counts: &CountData) -> missloc::Result<IntensityField> {
    let shape = counts.shape();
    let rows = io::read_lambda_table(path)?;
    if rows.len() != shape.n_cells() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: rows.len() + 1,
            message: format!("expected {} rows, found {}", shape.n_cells(), rows.len()),
        });
    }
    let mut values = vec![0.0; shape.n_cells()];
    let mut estimated = vec![false; shape.n_blocks()];
    for (k, r) in rows.iter().enumerate() {
        if r.c >= shape.n_types() || r.i >= shape.n_zones() || r.t >= shape.n_periods() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: k + 1,
                message: "index outside the shape".into(),
            });
        }
        if let Some(v) = r.lambda {
            values[(r.c * shape.n_zones() + r.i) * shape.n_periods() + r.t] = v;
            estimated[r.c * shape.n_periods() + r.t] = true;
        }
    }
    let status = estimated
        .iter()
        .enumerate()
        .map(|(b, ok)| {
            let (c, t) = (b / shape.n_periods(), b % shape.n_periods());
            if *ok {
                BlockStatus::Estimated
            } else if shape.n_obs(c, t) == 0 {
                BlockStatus::NoObservations
            } else {
                BlockStatus::NoLocatedArrivals
            }
        })
        .collect();
    IntensityField::with_status(shape, values, status)
}

fn read_probabilities(path: &Path, counts: &CountData) -> missloc::Result<BlockProbabilities> {
    let shape = counts.shape();
    let mut values = vec![None; shape.n_blocks()];
    for (k, r) in io::read_p_table(path)?.into_iter().enumerate() {
        if r.c >= shape.n_types() || r.t >= shape.n_periods() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: k + 1,
                message: "index outside the shape".into(),
            });
        }
        values[r.c * shape.n_periods() + r.t] = r.p;
    }
    BlockProbabilities::new(shape, values)
}

/// Writes the report CSVs next to the analytical results.
pub fn run_report(cfg: &RunConfig, draws: usize, bins: usize) -> missloc::Result<Vec<PathBuf>> {
    let counts = load_counts(cfg)?;
    let lambda = read_intensity(&cfg.output_dir.join("lambda_model1.txt"), &counts)?;
    let p = read_probabilities(&cfg.output_dir.join("p_model1.txt"), &counts)?;
    let files = write_report(
        &cfg.output_dir.join("report"),
        &counts,
        &lambda,
        &p,
        &ReportOptions {
            alpha: cfg.alpha,
            draws,
            bins,
            seed: cfg.seed,
        },
    )?;
    for f in &files {
        log::info!("wrote {}", f.display());
    }
    Ok(files)
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Some(Command::Simulate { scenario, out }) => {
            run_simulate(scenario.as_deref(), out, cli.opts.seed)
        }
        Some(Command::Report { draws, bins }) => cli
            .opts
            .load()
            .and_then(|cfg| run_report(&cfg, *draws, *bins)),
        Some(Command::Estimate) | None => cli.opts.load().and_then(|cfg| run_estimate(&cfg)),
    };
    match result {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error ({}): {e}", category(&e));
            exit_code(&e)
        }
    }
}
