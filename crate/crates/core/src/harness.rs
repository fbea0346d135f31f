//! Weak-error experiments: SGD expectations `Uⁿ(x)` against diffusion
//! expectations `u(x, nη)`, order fits, uniformity in time, local truncation
//! and the log-horizon study for nonconvex losses.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cutoff::CutoffSpec;
use crate::error::{Error, Result};
use crate::observable::Observable;
use crate::output::fmt_f64;
use crate::pde::{solve_kolmogorov, PdeConfig};
use crate::problems::ProblemSpec;
use crate::sde::{estimate_u_mc, DriftModel, OuParams, SdeConfig};
use crate::semigroup::{probe_series, Grid1D, GridFunction, TransferOperator};
use crate::sgd::{closed_form_u, count_escapes, estimate_u_series, ChainConfig};
use crate::stats::linear_fit;

/// Default probe set: five equispaced points in `[−1, 1]`.
pub const DEFAULT_PROBES: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];

/// Where an expectation comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    ClosedForm,
    SemigroupGrid,
    Mc,
    Pde,
    OuExact,
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceKind::ClosedForm => "closed_form",
            SourceKind::SemigroupGrid => "semigroup_grid",
            SourceKind::Mc => "mc",
            SourceKind::Pde => "pde",
            SourceKind::OuExact => "ou_exact",
        })
    }
}

/// How `Uⁿ` is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChainSource {
    ClosedForm,
    SemigroupGrid {
        radius: f64,
        n_points: usize,
        quad_nodes: usize,
    },
    Mc {
        m: usize,
        seed: u64,
    },
}

impl ChainSource {
    pub fn kind(&self) -> SourceKind {
        match self {
            ChainSource::ClosedForm => SourceKind::ClosedForm,
            ChainSource::SemigroupGrid { .. } => SourceKind::SemigroupGrid,
            ChainSource::Mc { .. } => SourceKind::Mc,
        }
    }
}

/// How `u(·, nη)` is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiffusionSource {
    OuExact,
    Pde {
        half_width: f64,
        n_x: usize,
        max_dt: f64,
    },
    /// Euler–Maruyama with substep `h` (default `min(η²/10, η/100)`).
    Mc {
        m: usize,
        seed: u64,
        h: Option<f64>,
    },
}

impl DiffusionSource {
    pub fn kind(&self) -> SourceKind {
        match self {
            DiffusionSource::OuExact => SourceKind::OuExact,
            DiffusionSource::Pde { .. } => SourceKind::Pde,
            DiffusionSource::Mc { .. } => SourceKind::Mc,
        }
    }
}

/// Everything a weak-error measurement needs besides `η` and the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakErrorSetup {
    pub problem: ProblemSpec,
    pub cutoff: CutoffSpec,
    pub phi: Observable,
    /// Probe positions along the first axis.
    pub probes: Vec<f64>,
    pub chain: ChainSource,
    pub diffusion: DiffusionSource,
    pub drift: DriftModel,
}

impl WeakErrorSetup {
    fn probe_point(&self, p: f64) -> Vec<f64> {
        let mut x = vec![0.0; self.problem.dim];
        x[0] = p;
        x
    }

    fn validate(&self) -> Result<()> {
        self.phi.check_dim(self.problem.dim)?;
        if self.probes.is_empty() {
            return Err(Error::config("numerics.probes", "probe set is empty"));
        }
        if let Some(p) = self.probes.iter().find(|p| p.abs() > self.cutoff.r_inner) {
            return Err(Error::config(
                "numerics.probes",
                format!("probe {p} lies outside B(0, R = {})", self.cutoff.r_inner),
            ));
        }
        Ok(())
    }
}

/// `Uⁿ(p)` and `u(p, nη)` for every epoch `n ≤ N` and probe `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTable {
    pub eta: f64,
    pub chain: Vec<Vec<f64>>,
    pub diffusion: Vec<Vec<f64>>,
    /// Combined standard error of the difference (zero for deterministic sources).
    pub std_error: Vec<Vec<f64>>,
}

/// Supremum of `|Uⁿ − u(·, nη)|` over a window of epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupError {
    pub error: f64,
    /// `4 · max SE` over the same cells.
    pub noise_budget: f64,
    pub epoch: usize,
    pub probe: f64,
}

impl ErrorTable {
    pub fn n_epochs(&self) -> usize {
        self.chain.len() - 1
    }

    /// Sup over `n ≤ ⌊horizon/η⌋` and all probes.
    pub fn sup_error(&self, horizon: f64, probes: &[f64]) -> SupError {
        let last = epochs_within(self.eta, horizon).min(self.n_epochs());
        let mut out = SupError {
            error: 0.0,
            noise_budget: 0.0,
            epoch: 0,
            probe: probes[0],
        };
        for n in 0..=last {
            for (j, &p) in probes.iter().enumerate() {
                let e = (self.chain[n][j] - self.diffusion[n][j]).abs();
                if e > out.error {
                    out.error = e;
                    out.epoch = n;
                    out.probe = p;
                }
                out.noise_budget = out.noise_budget.max(4.0 * self.std_error[n][j]);
            }
        }
        out
    }
}

fn epochs_within(eta: f64, horizon: f64) -> usize {
    (horizon / eta + 1e-9).floor() as usize
}

type Table = (Vec<Vec<f64>>, Vec<Vec<f64>>);

fn chain_table(setup: &WeakErrorSetup, eta: f64, n: usize) -> Result<Table> {
    let probes = &setup.probes;
    let zeros = || vec![vec![0.0; probes.len()]; n + 1];
    match &setup.chain {
        ChainSource::ClosedForm => {
            let mut v = zeros();
            for (k, row) in v.iter_mut().enumerate() {
                for (j, &p) in probes.iter().enumerate() {
                    row[j] =
                        closed_form_u(&setup.problem, &setup.phi, eta, &setup.probe_point(p), k)?;
                }
            }
            Ok((v, zeros()))
        }
        ChainSource::SemigroupGrid {
            radius,
            n_points,
            quad_nodes,
        } => {
            let grid = Grid1D::symmetric(*radius, *n_points)?;
            let op = TransferOperator::new(&setup.problem, grid, eta, *quad_nodes)?;
            Ok((
                probe_series(&op, &setup.problem, &setup.phi, n, probes)?,
                zeros(),
            ))
        }
        ChainSource::Mc { m, seed } => {
            let (mut v, mut se) = (zeros(), zeros());
            for (j, &p) in probes.iter().enumerate() {
                let cfg = ChainConfig::from_point(
                    eta,
                    n,
                    setup.probe_point(p),
                    seed.wrapping_add(j as u64),
                );
                for (k, e) in estimate_u_series(&setup.problem, &setup.phi, &cfg, *m)?
                    .iter()
                    .enumerate()
                {
                    v[k][j] = e.value;
                    se[k][j] = e.std_error;
                }
            }
            Ok((v, se))
        }
    }
}

fn diffusion_table(setup: &WeakErrorSetup, eta: f64, n: usize) -> Result<Table> {
    let probes = &setup.probes;
    let zeros = || vec![vec![0.0; probes.len()]; n + 1];
    match &setup.diffusion {
        DiffusionSource::OuExact => {
            let ou = OuParams::for_problem(&setup.problem, eta, setup.drift)?;
            let mut v = zeros();
            for (k, row) in v.iter_mut().enumerate() {
                for (j, &p) in probes.iter().enumerate() {
                    row[j] = ou.expectation(
                        &setup.problem,
                        &setup.phi,
                        &setup.probe_point(p),
                        k as f64 * eta,
                    )?;
                }
            }
            Ok((v, zeros()))
        }
        DiffusionSource::Pde {
            half_width,
            n_x,
            max_dt,
        } => {
            let mut cfg = PdeConfig::per_epoch(eta, *half_width, *n_x, *max_dt, n as f64 * eta);
            cfg.drift = setup.drift;
            let field = solve_kolmogorov(&setup.problem, &setup.cutoff, eta, &setup.phi, &cfg)?;
            if field.t.len() < n + 1 {
                return Err(Error::Experiment(
                    "PDE stored fewer snapshots than epochs".into(),
                ));
            }
            let v = (0..=n)
                .map(|k| probes.iter().map(|&p| field.eval(k, p)).collect())
                .collect();
            Ok((v, zeros()))
        }
        DiffusionSource::Mc { m, seed, h } => {
            let (mut v, mut se) = (zeros(), zeros());
            let h = h.unwrap_or_else(|| SdeConfig::default_substep(eta));
            for (j, &p) in probes.iter().enumerate() {
                let mut cfg = SdeConfig::from_point(
                    eta,
                    h,
                    n as f64 * eta,
                    setup.probe_point(p),
                    seed.wrapping_add(j as u64),
                );
                cfg.drift = setup.drift;
                let est = estimate_u_mc(&setup.problem, &setup.cutoff, &setup.phi, &cfg, *m)?;
                for (k, e) in est.iter().enumerate() {
                    v[k][j] = e.value;
                    se[k][j] = e.std_error;
                }
            }
            Ok((v, se))
        }
    }
}

/// Both sides at every epoch up to `horizon`.
pub fn error_table(setup: &WeakErrorSetup, eta: f64, horizon: f64) -> Result<ErrorTable> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::config(
            "numerics.eta_list",
            format!("eta must be positive, got {eta}"),
        ));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::config(
            "numerics.T",
            format!("horizon must be nonnegative, got {horizon}"),
        ));
    }
    setup.validate()?;
    let n = epochs_within(eta, horizon);
    let (chain, se_chain) = chain_table(setup, eta, n)?;
    let (diffusion, se_diff) = diffusion_table(setup, eta, n)?;
    let std_error = se_chain
        .iter()
        .zip(&se_diff)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x.hypot(*y)).collect())
        .collect();
    Ok(ErrorTable {
        eta,
        chain,
        diffusion,
        std_error,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakErrorPoint {
    pub eta: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub error: f64,
    pub u_source: SourceKind,
    #[serde(rename = "U_source")]
    pub chain_source: SourceKind,
    pub noise_budget: f64,
    pub usable: bool,
    pub flags: Vec<String>,
}

impl WeakErrorPoint {
    fn new(setup: &WeakErrorSetup, eta: f64, horizon: f64, sup: SupError) -> Self {
        let mut flags = Vec::new();
        let stochastic =
            setup.chain.kind() == SourceKind::Mc || setup.diffusion.kind() == SourceKind::Mc;
        if stochastic && !(sup.noise_budget < sup.error / 5.0) {
            flags.push("noise_budget".to_string());
        }
        if let Ok(c) = setup.problem.constants(setup.cutoff.r_inner) {
            if eta > c.eta0 {
                flags.push("eta_above_eta0".to_string());
            }
        }
        Self {
            eta,
            horizon,
            error: sup.error,
            u_source: setup.diffusion.kind(),
            chain_source: setup.chain.kind(),
            noise_budget: sup.noise_budget,
            usable: !flags.iter().any(|f| f == "noise_budget"),
            flags,
        }
    }
}

/// `sup_{n ≤ T/η} sup_p |Uⁿ(p) − u(p, nη)|` for every `η`.
pub fn weak_error_curve(
    setup: &WeakErrorSetup,
    eta_list: &[f64],
    horizon: f64,
) -> Result<Vec<WeakErrorPoint>> {
    let points = eta_list
        .iter()
        .map(|&eta| {
            let table = error_table(setup, eta, horizon)?;
            Ok(WeakErrorPoint::new(
                setup,
                eta,
                horizon,
                table.sup_error(horizon, &setup.probes),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    if !points.is_empty() && points.iter().all(|p| !p.usable) {
        return Err(Error::Experiment(
            "every point of the weak-error curve exceeds its Monte Carlo noise budget".into(),
        ));
    }
    Ok(points)
}

/// Least-squares line through `(log η, log E)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

/// Order fit from raw `(η, E)` pairs; zero errors are dropped.
pub fn order_fit_pairs(pairs: &[(f64, f64)]) -> Result<OrderFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = pairs
        .iter()
        .filter(|(eta, e)| *eta > 0.0 && *e > 0.0)
        .map(|(eta, e)| (eta.ln(), e.ln()))
        .unzip();
    if x.len() < 3 {
        return Err(Error::Argument(format!(
            "order fit needs at least 3 usable points, got {}",
            x.len()
        )));
    }
    let fit = linear_fit(&x, &y)?;
    Ok(OrderFit {
        slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        n_points: x.len(),
    })
}

/// Order fit over the usable points of a curve.
pub fn order_fit(points: &[WeakErrorPoint]) -> Result<OrderFit> {
    let pairs: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.usable)
        .map(|p| (p.eta, p.error))
        .collect();
    order_fit_pairs(&pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformityReport {
    pub eta: f64,
    pub horizons: Vec<f64>,
    pub errors: Vec<f64>,
    /// `E(η, T_k) / E(η, T_1)`.
    pub ratios: Vec<f64>,
}

/// Error ratios over increasing horizons from a single table.
pub fn uniformity_check(
    setup: &WeakErrorSetup,
    eta: f64,
    horizons: &[f64],
) -> Result<UniformityReport> {
    if horizons.is_empty() || horizons.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::config(
            "numerics.T_list",
            "horizons must be nonempty and nondecreasing",
        ));
    }
    let table = error_table(setup, eta, *horizons.last().unwrap())?;
    let errors: Vec<f64> = horizons
        .iter()
        .map(|&t| table.sup_error(t, &setup.probes).error)
        .collect();
    let ratios = errors
        .iter()
        .map(|e| if *e == errors[0] { 1.0 } else { e / errors[0] })
        .collect();
    Ok(UniformityReport {
        eta,
        horizons: horizons.to_vec(),
        errors,
        ratios,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncationReport {
    pub n_probe: usize,
    /// `(η, sup_{n ≤ n_probe} sup_p |S uⁿ(p) − uⁿ⁺¹(p)|)`.
    pub residuals: Vec<(f64, f64)>,
    pub fit: Option<OrderFit>,
}

// n ↦ (u(·, nη) on the grid, u(·, nη) at the probes).
type Snapshot<'a> = dyn Fn(usize) -> Result<(Vec<f64>, Vec<f64>)> + 'a;

/// One-step residual `S uⁿ − uⁿ⁺¹` with `uⁿ = u(·, nη)` sampled on the grid
/// `[−radius, radius]` and `S` applied by the transfer operator.
pub fn truncation_check(
    setup: &WeakErrorSetup,
    eta_list: &[f64],
    n_probe: usize,
    radius: f64,
    n_points: usize,
    quad_nodes: usize,
) -> Result<TruncationReport> {
    setup.validate()?;
    let grid = Grid1D::symmetric(radius, n_points)?;
    let nodes = grid.nodes();
    let mut residuals = Vec::with_capacity(eta_list.len());
    for &eta in eta_list {
        let op = TransferOperator::new(&setup.problem, grid, eta, quad_nodes)?;
        let snapshot: Box<Snapshot<'_>> = match &setup.diffusion {
            DiffusionSource::OuExact => {
                let ou = OuParams::for_problem(&setup.problem, eta, setup.drift)?;
                let (problem, phi) = (&setup.problem, &setup.phi);
                let probes = setup.probes.clone();
                let nodes = nodes.clone();
                Box::new(move |n| {
                    let t = n as f64 * eta;
                    let at = |x: f64| ou.expectation(problem, phi, &[x], t);
                    Ok((
                        nodes.iter().map(|&x| at(x)).collect::<Result<_>>()?,
                        probes.iter().map(|&x| at(x)).collect::<Result<_>>()?,
                    ))
                })
            }
            DiffusionSource::Pde {
                half_width,
                n_x,
                max_dt,
            } => {
                let mut cfg = PdeConfig::per_epoch(
                    eta,
                    *half_width,
                    *n_x,
                    *max_dt,
                    (n_probe + 1) as f64 * eta,
                );
                cfg.drift = setup.drift;
                let field = solve_kolmogorov(&setup.problem, &setup.cutoff, eta, &setup.phi, &cfg)?;
                let probes = setup.probes.clone();
                let nodes = nodes.clone();
                Box::new(move |n| {
                    Ok((
                        nodes.iter().map(|&x| field.eval(n, x)).collect(),
                        probes.iter().map(|&x| field.eval(n, x)).collect(),
                    ))
                })
            }
            DiffusionSource::Mc { .. } => {
                return Err(Error::config(
                    "numerics.u_source",
                    "truncation check needs a deterministic u (ou_exact or pde)",
                ))
            }
        };
        let mut sup = 0.0f64;
        for n in 0..=n_probe {
            let (on_grid, _) = snapshot(n)?;
            let su = op.apply(&GridFunction {
                grid,
                values: on_grid,
            })?;
            let (_, next) = snapshot(n + 1)?;
            for (&p, want) in setup.probes.iter().zip(&next) {
                sup = sup.max((su.interpolate(p) - want).abs());
            }
        }
        residuals.push((eta, sup));
    }
    let fit = order_fit_pairs(&residuals).ok();
    Ok(TruncationReport {
        n_probe,
        residuals,
        fit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HorizonRow {
    pub eta: f64,
    /// `β ln(1/η)`.
    pub horizon: f64,
    pub error_within: f64,
    /// Error over `nη ≤ 2T(η)`.
    pub error_beyond: f64,
    pub escapes: u64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HorizonReport {
    pub beta: f64,
    pub radius: f64,
    pub rows: Vec<HorizonRow>,
    pub fit_within: Option<OrderFit>,
    pub fit_beyond: Option<OrderFit>,
}

/// Parameters of the empirical escape check in the horizon study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscapeCheck {
    /// Chains start uniformly in `B(0, radius)` and must stay in `B(0, 2 radius)`.
    pub radius: f64,
    pub chains: usize,
    pub seed: u64,
}

/// Weak error on the log horizon `T(η) = β ln(1/η)` and on `2T(η)`.
pub fn horizon_experiment(
    setup: &WeakErrorSetup,
    eta_list: &[f64],
    beta: f64,
    escape: EscapeCheck,
) -> Result<HorizonReport> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::config(
            "numerics.beta",
            format!("beta must be nonnegative, got {beta}"),
        ));
    }
    if let Some(p) = setup.probes.iter().find(|p| p.abs() > escape.radius) {
        return Err(Error::config(
            "numerics.probes",
            format!("probe {p} lies outside B(0, R = {})", escape.radius),
        ));
    }
    let mut rows = Vec::with_capacity(eta_list.len());
    for &eta in eta_list {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::config(
                "numerics.eta_list",
                format!("eta must lie in (0, 1), got {eta}"),
            ));
        }
        let horizon = beta * (1.0 / eta).ln();
        let table = error_table(setup, eta, 2.0 * horizon)?;
        let within = table.sup_error(horizon, &setup.probes).error;
        let beyond = table.sup_error(2.0 * horizon, &setup.probes).error;
        let steps = epochs_within(eta, horizon);
        let (_, escapes) = count_escapes(
            &setup.problem,
            escape.radius,
            2.0 * escape.radius,
            eta,
            steps,
            escape.chains,
            escape.seed,
        );
        rows.push(HorizonRow {
            eta,
            horizon,
            error_within: within,
            error_beyond: beyond,
            escapes,
            flagged: escapes > 0,
        });
    }
    let pairs = |f: fn(&HorizonRow) -> f64| -> Vec<(f64, f64)> {
        rows.iter()
            .filter(|r| !r.flagged)
            .map(|r| (r.eta, f(r)))
            .collect()
    };
    let fit_within = order_fit_pairs(&pairs(|r| r.error_within)).ok();
    let fit_beyond = order_fit_pairs(&pairs(|r| r.error_beyond)).ok();
    Ok(HorizonReport {
        beta,
        radius: escape.radius,
        rows,
        fit_within,
        fit_beyond,
    })
}

/// Error report with columns `eta,T,error,u_source,U_source,noise_budget,flags`.
pub fn write_error_report<W: Write>(points: &[WeakErrorPoint], mut w: W) -> Result<()> {
    writeln!(w, "eta,T,error,u_source,U_source,noise_budget,flags")?;
    for p in points {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            fmt_f64(p.eta),
            fmt_f64(p.horizon),
            fmt_f64(p.error),
            p.u_source,
            p.chain_source,
            fmt_f64(p.noise_budget),
            p.flags.join(";")
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_setup(phi: Observable) -> WeakErrorSetup {
        WeakErrorSetup {
            problem: ProblemSpec::quadratic(1, 1.0, 0.5).unwrap(),
            cutoff: CutoffSpec::new(2.0, 4.0).unwrap(),
            phi,
            probes: DEFAULT_PROBES.to_vec(),
            chain: ChainSource::ClosedForm,
            diffusion: DiffusionSource::OuExact,
            drift: DriftModel::Modified,
        }
    }

    #[test]
    fn closed_form_weak_error_example() {
        let setup = quadratic_setup(Observable::Coordinate(0));
        let pts = weak_error_curve(&setup, &[0.1], 50.0).unwrap();
        // Independent evaluation of max_n |0.9ⁿ − e^{−0.105 n}|.
        let exact = (0..=500)
            .map(|n| (0.9f64.powi(n) - (-0.105 * n as f64).exp()).abs())
            .fold(0.0, f64::max);
        assert!((pts[0].error - exact).abs() < 1e-15);
        assert!((exact - 1.26e-3).abs() < 0.01e-3, "{exact}");
        assert!(pts[0].usable);
        assert_eq!(pts[0].noise_budget, 0.0);
    }

    #[test]
    fn noiseless_error_is_second_order() {
        let mut setup = quadratic_setup(Observable::Coordinate(0));
        setup.problem = ProblemSpec::quadratic(1, 1.0, 0.0).unwrap();
        let pts = weak_error_curve(&setup, &[0.2, 0.1, 0.05, 0.025], 50.0).unwrap();
        let fit = order_fit(&pts).unwrap();
        assert!((1.9..=2.1).contains(&fit.slope), "{fit:?}");
    }

    #[test]
    fn order_fit_examples() {
        let etas = [0.2, 0.1, 0.05, 0.025];
        let sq: Vec<(f64, f64)> = etas.iter().map(|e| (*e, e * e)).collect();
        let fit = order_fit_pairs(&sq).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12 && (fit.r_squared - 1.0).abs() < 1e-12);
        let lin: Vec<(f64, f64)> = etas.iter().map(|e| (*e, 3.0 * e)).collect();
        assert!((order_fit_pairs(&lin).unwrap().slope - 1.0).abs() < 1e-12);
        assert!(order_fit_pairs(&sq[..2]).is_err());
    }

    #[test]
    fn sup_is_monotone_in_the_horizon() {
        let setup = quadratic_setup(Observable::SquaredNorm);
        let table = error_table(&setup, 0.1, 50.0).unwrap();
        let mut prev = 0.0;
        for t in [0.0, 0.5, 1.0, 5.0, 20.0, 50.0] {
            let e = table.sup_error(t, &setup.probes).error;
            assert!(e >= prev);
            prev = e;
        }
    }

    #[test]
    fn uniformity_examples() {
        let setup = quadratic_setup(Observable::Coordinate(0));
        let rep = uniformity_check(&setup, 0.1, &[5.0, 20.0, 50.0]).unwrap();
        assert!(rep.ratios.iter().all(|r| *r <= 1.05));
        let same = uniformity_check(&setup, 0.1, &[5.0, 5.0]).unwrap();
        assert_eq!(same.ratios, vec![1.0, 1.0]);
        assert!(uniformity_check(&setup, 0.1, &[5.0, 1.0]).is_err());
    }

    #[test]
    fn truncation_residual_is_third_order() {
        let setup = quadratic_setup(Observable::Coordinate(0));
        let rep = truncation_check(&setup, &[0.2, 0.1, 0.05], 3, 2.0, 1025, 64).unwrap();
        let fit = rep.fit.unwrap();
        assert!((2.7..=3.3).contains(&fit.slope), "{rep:?}");
        // Leading term η³/3 at |x| = 1.
        let (eta, r) = rep.residuals[2];
        assert!((r / (eta.powi(3) / 3.0) - 1.0).abs() < 0.1, "{r}");
    }

    #[test]
    fn truncation_of_constants_vanishes() {
        let setup = quadratic_setup(Observable::Polynomial(vec![1.5]));
        let rep = truncation_check(&setup, &[0.2, 0.1, 0.05], 2, 2.0, 513, 16).unwrap();
        assert!(rep.residuals.iter().all(|(_, r)| *r < 1e-14));
        assert!(rep.fit.is_none());
    }

    #[test]
    fn zero_beta_gives_zero_error() {
        let setup = WeakErrorSetup {
            problem: ProblemSpec::double_well(0.5).unwrap(),
            cutoff: CutoffSpec::new(2.0, 3.0).unwrap(),
            phi: Observable::Coordinate(0),
            probes: DEFAULT_PROBES.to_vec(),
            chain: ChainSource::SemigroupGrid {
                radius: 2.0,
                n_points: 257,
                quad_nodes: 2,
            },
            diffusion: DiffusionSource::Pde {
                half_width: 3.25,
                n_x: 261,
                max_dt: 1e-3,
            },
            drift: DriftModel::Modified,
        };
        let esc = EscapeCheck {
            radius: 1.0,
            chains: 100,
            seed: 0,
        };
        let rep = horizon_experiment(&setup, &[0.2, 0.1], 0.0, esc).unwrap();
        for row in &rep.rows {
            assert!(
                row.error_within < 1e-12 && row.error_beyond < 1e-12,
                "{row:?}"
            );
        }
    }

    #[test]
    fn mc_points_carry_a_noise_budget() {
        let mut setup = quadratic_setup(Observable::Coordinate(0));
        setup.chain = ChainSource::Mc { m: 2000, seed: 1 };
        let pts = weak_error_curve(&setup, &[0.2], 2.0);
        // With 2000 chains the noise dwarfs an O(η²) signal.
        assert!(matches!(pts, Err(Error::Experiment(_))));
    }

    #[test]
    fn probes_outside_the_ball_are_rejected() {
        let mut setup = quadratic_setup(Observable::Coordinate(0));
        setup.probes = vec![2.5];
        assert!(matches!(
            weak_error_curve(&setup, &[0.1], 1.0),
            Err(Error::Config { ref key, .. }) if key == "numerics.probes"
        ));
    }

    #[test]
    fn report_csv() {
        let setup = quadratic_setup(Observable::Coordinate(0));
        let pts = weak_error_curve(&setup, &[0.1, 0.05], 5.0).unwrap();
        let mut buf = Vec::new();
        write_error_report(&pts, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "eta,T,error,u_source,U_source,noise_budget,flags"
        );
        assert!(lines.next().unwrap().contains(",ou_exact,closed_form,"));
    }
}
