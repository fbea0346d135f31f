//! Command-line front end: one experiment per invocation, artifacts plus a
//! manifest in the output directory.
//!
//! Exit status: 0 on success, 1 when a run fails or leaves an `[assert]`
//! band, 2 on configuration errors.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{parse_config, Experiment, ExperimentConfig};
use crate::error::{Error, Result};
use crate::harness::{
    horizon_experiment, order_fit, truncation_check, uniformity_check, weak_error_curve,
    write_error_report, EscapeCheck, OrderFit,
};
use crate::output::{fmt_f64, write_csv, write_json};
use crate::pde::{decay_fit, derivative_sup_series, solve_kolmogorov, PdeConfig};
use crate::sde::{estimate_u_mc, fit_envelope, moment_curve, simulate_sde, SdeConfig};
use crate::sgd::{estimate_u_series, sgd_trajectory, trap_check, write_path_csv, ChainConfig};

#[derive(Debug, Parser)]
#[command(
    name = "sgd-diffusion",
    version,
    about = "SGD weak-error experiments against the modified SDE"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides output.directory).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed (overrides numerics.seed); TOML integers cap it at 2^63 - 1.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(0..=i64::MAX as u64))]
    pub seed: Option<u64>,
    /// Worker threads (overrides numerics.threads).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Sample SGD paths and the Monte Carlo series of E phi(X_n).
    SimulateSgd,
    /// Sample modified-SDE paths and the Monte Carlo series of E phi(X_t).
    SimulateSde,
    /// Solve the backward Kolmogorov equation on a grid.
    SolvePde,
    /// Weak error sup over epochs and probes for every step in eta_list.
    WeakError,
    /// Weak error curve plus a mandatory log-log order fit.
    OrderFit,
    /// Count SGD iterates leaving B(0, R).
    TrapCheck,
    /// One-step residual |S u^n - u^(n+1)| and its order in eta.
    Truncation,
    /// Weak error ratios across the horizons in T_list.
    Uniformity,
    /// Decay rate of sup |d^J u / dx^J| over B(0, R).
    DerivativeDecay,
    /// SDE moment curve and its fitted envelope.
    Moments,
    /// Weak error within and beyond the log horizon beta ln(1/eta).
    Horizon,
    /// Run the experiment named in the configuration.
    Run,
}

impl Command {
    fn experiment(self) -> Option<Experiment> {
        Some(match self {
            Command::SimulateSgd => Experiment::SimulateSgd,
            Command::SimulateSde => Experiment::SimulateSde,
            Command::SolvePde => Experiment::SolvePde,
            Command::WeakError => Experiment::WeakError,
            Command::OrderFit => Experiment::OrderFit,
            Command::TrapCheck => Experiment::TrapCheck,
            Command::Truncation => Experiment::Truncation,
            Command::Uniformity => Experiment::Uniformity,
            Command::DerivativeDecay => Experiment::DerivativeDecay,
            Command::Moments => Experiment::Moments,
            Command::Horizon => Experiment::Horizon,
            Command::Run => return None,
        })
    }
}

/// One tolerance band evaluated against a result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub passed: bool,
}

impl CheckResult {
    fn band(name: &str, value: f64, lo: Option<f64>, hi: Option<f64>) -> Self {
        let passed =
            lo.is_none_or(|l| value >= l) && hi.is_none_or(|h| value <= h) && !value.is_nan();
        Self {
            name: name.to_string(),
            value,
            lo,
            hi,
            passed,
        }
    }
}

/// Results of one experiment, as written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOutcome {
    pub experiment: Experiment,
    pub results: Value,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
    #[serde(skip)]
    pub artifacts: Vec<String>,
}

struct Sink<'a> {
    dir: &'a Path,
    csv: bool,
    artifacts: Vec<String>,
}

impl Sink<'_> {
    fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        if self.csv {
            write_csv(&self.dir.join(name), header, rows)?;
            self.artifacts.push(name.to_string());
        }
        Ok(())
    }

    fn stream(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
    ) -> Result<()> {
        if self.csv {
            let mut w = BufWriter::new(File::create(self.dir.join(name))?);
            f(&mut w)?;
            std::io::Write::flush(&mut w)?;
            self.artifacts.push(name.to_string());
        }
        Ok(())
    }
}

fn slope_checks(cfg: &ExperimentConfig, fit: Option<&OrderFit>, checks: &mut Vec<CheckResult>) {
    let slope = fit.map_or(f64::NAN, |f| f.slope);
    if let Some([lo, hi]) = cfg.checks.slope {
        checks.push(CheckResult::band("slope", slope, Some(lo), Some(hi)));
    }
    if let Some(min) = cfg.checks.r_squared_min {
        checks.push(CheckResult::band(
            "r_squared",
            fit.map_or(f64::NAN, |f| f.r_squared),
            Some(min),
            None,
        ));
    }
}

/// Runs the configured experiment and writes its artifacts into `dir`.
pub fn run(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome> {
    fs::create_dir_all(dir)?;
    let formats = &cfg.output.formats;
    let mut sink = Sink {
        dir,
        csv: formats.iter().any(|f| f == "csv"),
        artifacts: Vec::new(),
    };
    let problem = cfg.problem_spec()?;
    let cutoff = cfg.cutoff_spec()?;
    let phi = cfg.observable()?;
    let n = &cfg.numerics;
    let eta = cfg.eta();
    let x0 = n.x0.clone().expect("materialized");
    let h = n.h.expect("materialized");
    let mut checks = Vec::new();

    let results = match cfg.experiment {
        Experiment::SimulateSgd => {
            let chain = ChainConfig::from_point(eta, n.steps.expect("materialized"), x0, n.seed);
            let path = sgd_trajectory(&problem, &chain, 0)?;
            sink.stream("path.csv", |w| write_path_csv(&path, w))?;
            let series = estimate_u_series(&problem, &phi, &chain, n.m)?;
            let rows: Vec<Vec<String>> = series
                .iter()
                .enumerate()
                .map(|(k, e)| {
                    vec![
                        k.to_string(),
                        fmt_f64(k as f64 * eta),
                        fmt_f64(e.value),
                        fmt_f64(e.std_error),
                    ]
                })
                .collect();
            sink.csv("series.csv", &["n", "t", "value", "std_error"], &rows)?;
            json!({ "final": series.last() })
        }
        Experiment::SimulateSde => {
            let mut sde = SdeConfig::from_point(eta, h, n.horizon, x0, n.seed);
            sde.drift = n.drift;
            let path = simulate_sde(&problem, &cutoff, &sde, 0)?;
            let rows: Vec<Vec<String>> = path
                .iter()
                .enumerate()
                .map(|(k, x)| {
                    let mut r = vec![fmt_f64(k as f64 * eta)];
                    r.extend(x.iter().map(|v| fmt_f64(*v)));
                    r
                })
                .collect();
            let names: Vec<String> = (0..problem.dim).map(|i| format!("x_{i}")).collect();
            let mut header = vec!["t"];
            header.extend(names.iter().map(String::as_str));
            sink.csv("path.csv", &header, &rows)?;
            let series = estimate_u_mc(&problem, &cutoff, &phi, &sde, n.m)?;
            let rows: Vec<Vec<String>> = series
                .iter()
                .enumerate()
                .map(|(k, e)| {
                    vec![
                        fmt_f64(k as f64 * eta),
                        fmt_f64(e.value),
                        fmt_f64(e.std_error),
                    ]
                })
                .collect();
            sink.csv("series.csv", &["t", "value", "std_error"], &rows)?;
            json!({ "h": h, "final": series.last() })
        }
        Experiment::SolvePde => {
            let field = solve_kolmogorov(&problem, &cutoff, eta, &phi, &pde_config(cfg, eta))?;
            sink.stream("field.csv", |w| field.write_csv(w))?;
            let last = field.t.len() - 1;
            let probes: Vec<Value> = n
                .probes
                .iter()
                .map(|&p| json!({ "x": p, "u": field.eval(last, p) }))
                .collect();
            json!({ "t_end": field.t[last], "probes": probes })
        }
        Experiment::WeakError | Experiment::OrderFit => {
            let setup = cfg.weak_error_setup()?;
            let points = weak_error_curve(&setup, &n.eta_list, n.horizon)?;
            sink.stream("error_report.csv", |w| write_error_report(&points, w))?;
            let fit = match cfg.experiment {
                Experiment::OrderFit => Some(order_fit(&points)?),
                _ => order_fit(&points).ok(),
            };
            slope_checks(cfg, fit.as_ref(), &mut checks);
            json!({ "points": points, "fit": fit })
        }
        Experiment::TrapCheck => {
            let steps = n.steps.expect("materialized");
            let rep = trap_check(&problem, cutoff.r_inner, eta, steps, n.m, n.seed, n.force)?;
            if let Some(max) = cfg.checks.escapes_max {
                checks.push(CheckResult::band(
                    "escapes",
                    rep.escapes as f64,
                    None,
                    Some(max as f64),
                ));
            }
            json!(rep)
        }
        Experiment::Truncation => {
            let setup = cfg.weak_error_setup()?;
            let rep = truncation_check(
                &setup,
                &n.eta_list,
                n.n_probe,
                n.grid_radius.expect("materialized"),
                n.grid_points,
                n.quad_nodes,
            )?;
            let rows: Vec<Vec<String>> = rep
                .residuals
                .iter()
                .map(|(e, r)| vec![fmt_f64(*e), fmt_f64(*r)])
                .collect();
            sink.csv("truncation.csv", &["eta", "residual"], &rows)?;
            slope_checks(cfg, rep.fit.as_ref(), &mut checks);
            json!(rep)
        }
        Experiment::Uniformity => {
            let setup = cfg.weak_error_setup()?;
            let rep = uniformity_check(&setup, eta, &n.t_list)?;
            let rows: Vec<Vec<String>> = (0..rep.horizons.len())
                .map(|k| {
                    vec![
                        fmt_f64(rep.horizons[k]),
                        fmt_f64(rep.errors[k]),
                        fmt_f64(rep.ratios[k]),
                    ]
                })
                .collect();
            sink.csv("uniformity.csv", &["T", "error", "ratio"], &rows)?;
            if let Some(max) = cfg.checks.ratio_max {
                let worst = rep.ratios.iter().copied().fold(0.0, f64::max);
                checks.push(CheckResult::band("max_ratio", worst, None, Some(max)));
            }
            json!(rep)
        }
        Experiment::DerivativeDecay => {
            let field = solve_kolmogorov(&problem, &cutoff, eta, &phi, &pde_config(cfg, eta))?;
            let series = derivative_sup_series(&field, n.derivative_order, cutoff.r_inner)?;
            let rows: Vec<Vec<String>> = series
                .iter()
                .map(|(t, s)| vec![fmt_f64(*t), fmt_f64(*s)])
                .collect();
            sink.csv("derivative_sup.csv", &["t", "sup_abs_derivative"], &rows)?;
            let fit = decay_fit(&series, n.t_min)?;
            if let Some([lo, hi]) = cfg.checks.gamma {
                checks.push(CheckResult::band("gamma", fit.gamma, Some(lo), Some(hi)));
            }
            json!({ "order": n.derivative_order, "fit": fit })
        }
        Experiment::Moments => {
            let sde = SdeConfig::from_point(eta, h, n.horizon, x0.clone(), n.seed);
            let curve = moment_curve(&problem, &cutoff, &sde, n.m, n.moment_order)?;
            let mut replica_cfg = sde.clone();
            replica_cfg.seed = n.seed.wrapping_add(1);
            let replica = moment_curve(&problem, &cutoff, &replica_cfg, n.m, n.moment_order)?;
            let amplitude = x0
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .powi((n.moment_order / 2) as i32);
            let t: Vec<f64> = curve.iter().map(|(t, _)| *t).collect();
            let y: Vec<f64> = curve.iter().map(|(_, e)| e.value).collect();
            let y_rep: Vec<f64> = replica.iter().map(|(_, e)| e.value).collect();
            let fit = fit_envelope(&t, &y, amplitude)?;
            let excess = fit.max_excess(&t, &y_rep);
            let rows: Vec<Vec<String>> = (0..t.len())
                .map(|k| {
                    vec![
                        fmt_f64(t[k]),
                        fmt_f64(y[k]),
                        fmt_f64(curve[k].1.std_error),
                        fmt_f64(y_rep[k]),
                        fmt_f64(fit.eval(t[k])),
                    ]
                })
                .collect();
            sink.csv(
                "moments.csv",
                &["t", "value", "std_error", "replica_value", "envelope"],
                &rows,
            )?;
            if let Some([lo, hi]) = cfg.checks.gamma {
                checks.push(CheckResult::band("gamma", fit.gamma, Some(lo), Some(hi)));
            }
            if let Some(max) = cfg.checks.excess_max {
                checks.push(CheckResult::band("replica_excess", excess, None, Some(max)));
            }
            json!({ "h": h, "fit": fit, "replica_excess": excess })
        }
        Experiment::Horizon => {
            let setup = cfg.weak_error_setup()?;
            let escape = EscapeCheck {
                radius: n.escape_radius,
                chains: n.escape_chains,
                seed: n.seed,
            };
            let rep = horizon_experiment(&setup, &n.eta_list, n.beta, escape)?;
            let rows: Vec<Vec<String>> = rep
                .rows
                .iter()
                .map(|r| {
                    vec![
                        fmt_f64(r.eta),
                        fmt_f64(r.horizon),
                        fmt_f64(r.error_within),
                        fmt_f64(r.error_beyond),
                        r.escapes.to_string(),
                        r.flagged.to_string(),
                    ]
                })
                .collect();
            sink.csv(
                "horizon.csv",
                &[
                    "eta",
                    "T",
                    "error_within",
                    "error_beyond",
                    "escapes",
                    "flagged",
                ],
                &rows,
            )?;
            for r in &rep.rows {
                checks.push(CheckResult::band(
                    &format!("beyond_minus_within[eta={}]", r.eta),
                    r.error_beyond - r.error_within,
                    Some(0.0),
                    None,
                ));
            }
            slope_checks(cfg, rep.fit_within.as_ref(), &mut checks);
            json!(rep)
        }
    };

    let outcome = RunOutcome {
        experiment: cfg.experiment,
        passed: checks.iter().all(|c| c.passed),
        results,
        checks,
        artifacts: sink.artifacts,
    };
    let mut artifacts = outcome.artifacts.clone();
    if formats.iter().any(|f| f == "json") {
        write_json(&dir.join("summary.json"), &outcome)?;
        artifacts.push("summary.json".into());
    }
    Ok(RunOutcome {
        artifacts,
        ..outcome
    })
}

fn pde_config(cfg: &ExperimentConfig, eta: f64) -> PdeConfig {
    let n = &cfg.numerics;
    let mut pde = PdeConfig::per_epoch(
        eta,
        n.pde_half_width.expect("materialized"),
        n.pde_n_x,
        n.dt,
        n.horizon,
    );
    pde.scheme = n.scheme;
    pde.drift = n.drift;
    pde
}

fn load(cli: &Cli) -> Result<(ExperimentConfig, PathBuf)> {
    let text = match &cli.config {
        Some(p) => fs::read_to_string(p)
            .map_err(|e| Error::config("--config", format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut doc: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config("<document>", e.message().to_string()))?;
    if let Some(exp) = cli.command.experiment() {
        doc.insert("experiment".into(), toml::Value::String(exp.name().into()));
    }
    let numerics = doc
        .entry("numerics")
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    if let toml::Value::Table(t) = numerics {
        if let Some(seed) = cli.seed {
            t.insert("seed".into(), toml::Value::Integer(seed as i64));
        }
        if let Some(threads) = cli.threads {
            t.insert("threads".into(), toml::Value::Integer(threads as i64));
        }
    }
    let cfg = parse_config(&toml::to_string(&doc).expect("table serializes"))?;
    let dir = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.output.directory));
    Ok((cfg, dir))
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: Experiment,
    version: &'static str,
    seed: u64,
    threads: usize,
    wall_time_seconds: f64,
    passed: bool,
    artifacts: &'a [String],
    rerun: String,
    config: &'a ExperimentConfig,
}

/// Parses `args`, runs, and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (cfg, dir) = match load(&cli) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    if cfg.numerics.threads > 0 {
        // Fails only if a pool already exists, in which case it is reused.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.numerics.threads)
            .build_global();
    }
    let start = Instant::now();
    let outcome = run(&cfg, &dir).and_then(|outcome| {
        let echo = toml::to_string(&cfg).map_err(|e| Error::Experiment(e.to_string()))?;
        fs::write(dir.join("config.toml"), echo)?;
        let manifest = Manifest {
            experiment: cfg.experiment,
            version: env!("CARGO_PKG_VERSION"),
            seed: cfg.numerics.seed,
            threads: rayon::current_num_threads(),
            wall_time_seconds: start.elapsed().as_secs_f64(),
            passed: outcome.passed,
            artifacts: &outcome.artifacts,
            rerun: format!(
                "sgd-diffusion run --config config.toml --out {}",
                dir.display()
            ),
            config: &cfg,
        };
        write_json(&dir.join("manifest.json"), &manifest)?;
        Ok(outcome)
    });
    match outcome {
        Ok(o) => {
            for c in &o.checks {
                let status = if c.passed { "ok" } else { "FAILED" };
                eprintln!("check {}: {} ({status})", c.name, c.value);
            }
            println!(
                "{} finished; artifacts in {}",
                cfg.experiment,
                dir.display()
            );
            if o.passed {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_configuration() {
                2
            } else {
                1
            }
        }
    }
}
