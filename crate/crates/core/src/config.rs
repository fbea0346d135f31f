//! Experiment configuration: a TOML document with the blocks `[problem]`,
//! `[cutoff]`, `[numerics]`, `[output]` and `[assert]`.
//!
//! Any key can be overridden from the environment as
//! `SGDLAB_<BLOCK>__<KEY>=<toml value>`, e.g. `SGDLAB_NUMERICS__SEED=7`.
//! Unknown keys are rejected and every constraint is checked before any
//! computation; errors name the offending key.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cutoff::CutoffSpec;
use crate::error::{Error, Result};
use crate::harness::{ChainSource, DiffusionSource, WeakErrorSetup, DEFAULT_PROBES};
use crate::observable::Observable;
use crate::pde::Scheme;
use crate::problems::{Family, ProblemSpec};
use crate::sde::DriftModel;
use crate::semigroup::{DEFAULT_GRID_POINTS, DEFAULT_QUADRATURE_NODES};

/// Prefix of environment overrides.
pub const ENV_PREFIX: &str = "SGDLAB_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    SimulateSgd,
    SimulateSde,
    SolvePde,
    #[default]
    WeakError,
    OrderFit,
    TrapCheck,
    Truncation,
    Uniformity,
    DerivativeDecay,
    Moments,
    Horizon,
}

impl Experiment {
    pub const ALL: [Experiment; 11] = [
        Experiment::SimulateSgd,
        Experiment::SimulateSde,
        Experiment::SolvePde,
        Experiment::WeakError,
        Experiment::OrderFit,
        Experiment::TrapCheck,
        Experiment::Truncation,
        Experiment::Uniformity,
        Experiment::DerivativeDecay,
        Experiment::Moments,
        Experiment::Horizon,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::SimulateSgd => "simulate-sgd",
            Experiment::SimulateSde => "simulate-sde",
            Experiment::SolvePde => "solve-pde",
            Experiment::WeakError => "weak-error",
            Experiment::OrderFit => "order-fit",
            Experiment::TrapCheck => "trap-check",
            Experiment::Truncation => "truncation",
            Experiment::Uniformity => "uniformity",
            Experiment::DerivativeDecay => "derivative-decay",
            Experiment::Moments => "moments",
            Experiment::Horizon => "horizon",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::config("experiment", format!("unknown experiment `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemBlock {
    pub family: Family,
    #[serde(default = "one")]
    pub mu: f64,
    #[serde(default = "half")]
    pub s: f64,
    #[serde(default = "one_usize")]
    pub d: usize,
}

impl Default for ProblemBlock {
    fn default() -> Self {
        Self {
            family: Family::Quadratic,
            mu: 1.0,
            s: 0.5,
            d: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffBlock {
    #[serde(rename = "R", default = "two_f64")]
    pub r: f64,
    /// Defaults to `2R`.
    #[serde(rename = "R2")]
    pub r2: Option<f64>,
}

impl Default for CutoffBlock {
    fn default() -> Self {
        Self { r: 2.0, r2: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum USourceName {
    #[default]
    OuExact,
    Pde,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainSourceName {
    #[default]
    ClosedForm,
    SemigroupGrid,
    Mc,
}

/// Numerical knobs. Optional entries are filled from the problem and cutoff
/// during [`parse_config`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsBlock {
    #[serde(default = "default_eta_list")]
    pub eta_list: Vec<f64>,
    /// Step size of single-`η` experiments; defaults to the first of `eta_list`.
    pub eta: Option<f64>,
    #[serde(rename = "T", default = "default_horizon")]
    pub horizon: f64,
    #[serde(rename = "T_list", default = "default_t_list")]
    pub t_list: Vec<f64>,
    /// Trajectories per Monte Carlo estimate.
    #[serde(rename = "M", default = "default_m")]
    pub m: usize,
    /// SDE substep; defaults to `min(η²/10, η/100)` rounded to a divisor of `η`.
    pub h: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_phi")]
    pub phi: String,
    #[serde(default = "default_probes")]
    pub probes: Vec<f64>,
    #[serde(default)]
    pub u_source: USourceName,
    #[serde(rename = "U_source", default)]
    pub chain_source: ChainSourceName,
    #[serde(default)]
    pub drift: DriftModel,
    /// Initial point; defaults to the origin shifted to `x_0 = 1`.
    pub x0: Option<Vec<f64>>,
    /// Steps of simulate-sgd and trap-check; defaults to `⌊T/η⌋`.
    pub steps: Option<usize>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Semigroup grid half-width; defaults to `R`.
    pub grid_radius: Option<f64>,
    #[serde(default = "default_quad_nodes")]
    pub quad_nodes: usize,
    /// PDE half-width `B`; defaults to `R2 + (R2 − R)/4`.
    pub pde_half_width: Option<f64>,
    #[serde(default = "default_grid_points")]
    pub pde_n_x: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub n_probe: usize,
    #[serde(default = "half")]
    pub beta: f64,
    /// Radius `R` of the escape check in the horizon study; defaults to 1.
    #[serde(default = "one")]
    pub escape_radius: f64,
    #[serde(default = "default_escape_chains")]
    pub escape_chains: usize,
    /// Moment exponent `2m`.
    #[serde(default = "two")]
    pub moment_order: u32,
    /// Derivative order `J`.
    #[serde(default = "one_u32")]
    pub derivative_order: u32,
    /// Start of the fitting window of derivative decay.
    #[serde(default = "one")]
    pub t_min: f64,
    /// Run trap-check even when `η > η₀`.
    #[serde(default)]
    pub force: bool,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub threads: usize,
}

impl Default for NumericsBlock {
    fn default() -> Self {
        toml::from_str("").expect("every numerics key has a default")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default = "default_out_dir")]
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            directory: default_out_dir(),
            formats: default_formats(),
        }
    }
}

/// Tolerance bands; a run whose result leaves a configured band exits with 1.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssertBlock {
    pub slope: Option<[f64; 2]>,
    pub r_squared_min: Option<f64>,
    pub ratio_max: Option<f64>,
    pub escapes_max: Option<u64>,
    pub gamma: Option<[f64; 2]>,
    pub excess_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: Experiment,
    #[serde(default)]
    pub problem: ProblemBlock,
    #[serde(default)]
    pub cutoff: CutoffBlock,
    #[serde(default)]
    pub numerics: NumericsBlock,
    #[serde(default)]
    pub output: OutputBlock,
    #[serde(default, rename = "assert")]
    pub checks: AssertBlock,
}

fn two_f64() -> f64 {
    2.0
}
fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn one_usize() -> usize {
    1
}
fn one_u32() -> u32 {
    1
}
fn two() -> u32 {
    2
}
fn default_eta_list() -> Vec<f64> {
    vec![0.2, 0.1, 0.05, 0.025]
}
fn default_horizon() -> f64 {
    50.0
}
fn default_t_list() -> Vec<f64> {
    vec![5.0, 20.0, 50.0]
}
fn default_m() -> usize {
    10_000
}
fn default_phi() -> String {
    "coordinate".into()
}
fn default_probes() -> Vec<f64> {
    DEFAULT_PROBES.to_vec()
}
fn default_grid_points() -> usize {
    DEFAULT_GRID_POINTS
}
fn default_quad_nodes() -> usize {
    DEFAULT_QUADRATURE_NODES
}
fn default_dt() -> f64 {
    1e-3
}
fn default_escape_chains() -> usize {
    1000
}
fn default_out_dir() -> String {
    "out".into()
}
fn default_formats() -> Vec<String> {
    vec!["csv".into(), "json".into()]
}

/// Parses, applies environment overrides from `env`, fills defaults and
/// validates.
pub fn parse_config_with_env<I>(text: &str, env: I) -> Result<ExperimentConfig>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut doc: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config("<document>", e.message().to_string()))?;
    apply_env(&mut doc, env)?;
    let de = toml::Value::Table(doc);
    let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        Error::config(
            if key == "." { "<document>".into() } else { key },
            e.into_inner().to_string(),
        )
    })?;
    materialize(&mut cfg);
    validate(&cfg)?;
    Ok(cfg)
}

/// [`parse_config_with_env`] with the process environment.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_with_env(text, std::env::vars())
}

fn apply_env<I>(doc: &mut toml::Table, env: I) -> Result<()>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut vars: Vec<(String, String)> = env
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    vars.sort();
    for (name, raw) in vars {
        let path = name[ENV_PREFIX.len()..].to_string();
        // Blocks are lower case.
        let (block, key) = match path.split_once("__") {
            Some((b, k)) => (Some(b.to_ascii_lowercase()), k.to_string()),
            None => (None, path.to_ascii_lowercase()),
        };
        let key = canonical_key(&key);
        let value = parse_env_value(&raw);
        match block {
            None => {
                doc.insert(key, value);
            }
            Some(b) => {
                let entry = doc
                    .entry(b.clone())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                match entry {
                    toml::Value::Table(t) => {
                        t.insert(key, value);
                    }
                    _ => return Err(Error::config(b, "override targets a non-table entry")),
                }
            }
        }
    }
    Ok(())
}

// Keys spelled with any lower-case letter are taken verbatim, so
// `SGDLAB_NUMERICS__u_source` and `SGDLAB_NUMERICS__U_source` stay distinct;
// all-caps keys map onto the documented spelling.
fn canonical_key(key: &str) -> String {
    if key.chars().any(|c| c.is_ascii_lowercase()) {
        return key.to_string();
    }
    const UPPER: [&str; 6] = ["R", "R2", "T", "T_list", "M", "U_source"];
    UPPER
        .iter()
        .find(|k| k.eq_ignore_ascii_case(key))
        .map(|k| k.to_string())
        .unwrap_or_else(|| key.to_ascii_lowercase())
}

fn parse_env_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn materialize(cfg: &mut ExperimentConfig) {
    let r = cfg.cutoff.r;
    let r2 = *cfg.cutoff.r2.get_or_insert(2.0 * r);
    let n = &mut cfg.numerics;
    if n.eta.is_none() {
        n.eta = n.eta_list.first().copied();
    }
    if let Some(eta) = n.eta {
        n.steps
            .get_or_insert((n.horizon / eta + 1e-9).floor() as usize);
        if n.h.is_none() {
            n.h = Some(crate::sde::SdeConfig::default_substep(eta));
        }
    }
    n.x0.get_or_insert_with(|| {
        let mut x = vec![0.0; cfg.problem.d.max(1)];
        x[0] = 1.0;
        x
    });
    n.grid_radius.get_or_insert(r);
    n.pde_half_width.get_or_insert(r2 + 0.25 * (r2 - r));
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(
            key,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

fn validate(cfg: &ExperimentConfig) -> Result<()> {
    let problem = cfg.problem_spec()?;
    let cutoff = cfg.cutoff_spec()?;
    let n = &cfg.numerics;
    let phi = cfg.observable()?;
    phi.check_dim(problem.dim)?;
    if n.eta_list.is_empty() {
        return Err(Error::config("numerics.eta_list", "must not be empty"));
    }
    for &eta in &n.eta_list {
        positive("numerics.eta_list", eta)?;
    }
    let eta = n.eta.expect("materialized");
    positive("numerics.eta", eta)?;
    if !(n.horizon >= 0.0 && n.horizon.is_finite()) {
        return Err(Error::config(
            "numerics.T",
            "must be nonnegative and finite",
        ));
    }
    if n.t_list.is_empty() || n.t_list.windows(2).any(|w| w[1] < w[0]) || n.t_list[0] < 0.0 {
        return Err(Error::config(
            "numerics.T_list",
            "must be nonempty, nonnegative and nondecreasing",
        ));
    }
    if n.m < 2 {
        return Err(Error::config(
            "numerics.M",
            format!("need at least 2 trajectories, got {}", n.m),
        ));
    }
    let h = n.h.expect("materialized");
    positive("numerics.h", h)?;
    let k = (eta / h).round();
    if h > eta * (1.0 + 1e-12) || (k * h - eta).abs() > 1e-9 * eta {
        return Err(Error::config(
            "numerics.h",
            format!("substep {h} must divide eta = {eta}"),
        ));
    }
    if n.x0.as_ref().expect("materialized").len() != problem.dim {
        return Err(Error::config(
            "numerics.x0",
            format!("needs {} coordinates", problem.dim),
        ));
    }
    if n.probes.is_empty() {
        return Err(Error::config("numerics.probes", "must not be empty"));
    }
    if let Some(p) = n.probes.iter().find(|p| p.abs() > cutoff.r_inner) {
        return Err(Error::config(
            "numerics.probes",
            format!("probe {p} lies outside B(0, R = {})", cutoff.r_inner),
        ));
    }
    if n.grid_points < 16 {
        return Err(Error::config(
            "numerics.grid_points",
            "need at least 16 points",
        ));
    }
    positive("numerics.grid_radius", n.grid_radius.expect("materialized"))?;
    if n.quad_nodes == 0 {
        return Err(Error::config(
            "numerics.quad_nodes",
            "need at least one node",
        ));
    }
    let b = n.pde_half_width.expect("materialized");
    if !(b > cutoff.r_outer) {
        return Err(Error::config(
            "numerics.pde_half_width",
            format!("B = {b} must exceed R2 = {}", cutoff.r_outer),
        ));
    }
    if n.pde_n_x < 5 {
        return Err(Error::config("numerics.pde_n_x", "need at least 5 points"));
    }
    positive("numerics.dt", n.dt)?;
    if !(n.beta >= 0.0 && n.beta.is_finite()) {
        return Err(Error::config("numerics.beta", "must be nonnegative"));
    }
    positive("numerics.escape_radius", n.escape_radius)?;
    if !n.moment_order.is_multiple_of(2) {
        return Err(Error::config("numerics.moment_order", "must be even"));
    }
    if !(1..=2).contains(&n.derivative_order) {
        return Err(Error::config("numerics.derivative_order", "must be 1 or 2"));
    }
    for f in &cfg.output.formats {
        if f != "csv" && f != "json" {
            return Err(Error::config(
                "output.formats",
                format!("unknown format `{f}`"),
            ));
        }
    }
    let dims_ok = problem.dim == 1
        || matches!(
            cfg.experiment,
            Experiment::SimulateSgd
                | Experiment::SimulateSde
                | Experiment::TrapCheck
                | Experiment::Moments
        );
    let grid_or_pde =
        n.chain_source == ChainSourceName::SemigroupGrid || n.u_source == USourceName::Pde;
    if !dims_ok
        && (grid_or_pde
            || matches!(
                cfg.experiment,
                Experiment::SolvePde
                    | Experiment::DerivativeDecay
                    | Experiment::Horizon
                    | Experiment::Truncation
            ))
    {
        return Err(Error::config(
            "problem.d",
            "grid and PDE solvers are one-dimensional",
        ));
    }
    let closed_form_needed = n.chain_source == ChainSourceName::ClosedForm
        && matches!(
            cfg.experiment,
            Experiment::WeakError
                | Experiment::OrderFit
                | Experiment::Uniformity
                | Experiment::Horizon
        );
    let ou_needed = n.u_source == USourceName::OuExact
        && matches!(
            cfg.experiment,
            Experiment::WeakError
                | Experiment::OrderFit
                | Experiment::Uniformity
                | Experiment::Truncation
                | Experiment::Horizon
        );
    if (closed_form_needed || ou_needed) && problem.isotropic_noise_variance().is_none() {
        let key = if closed_form_needed {
            "numerics.U_source"
        } else {
            "numerics.u_source"
        };
        return Err(Error::config(
            key,
            format!("no closed form for the {} family", problem.family),
        ));
    }
    if cfg.experiment == Experiment::Truncation && n.u_source == USourceName::Mc {
        return Err(Error::config(
            "numerics.u_source",
            "truncation needs ou_exact or pde",
        ));
    }
    if cfg.experiment == Experiment::Horizon && problem.family != Family::DoubleWell {
        return Err(Error::config(
            "problem.family",
            "the horizon experiment is defined for double_well",
        ));
    }
    if cfg.experiment == Experiment::TrapCheck && !n.force {
        let c = problem
            .constants(cutoff.r_inner)
            .map_err(|e| Error::config("cutoff.R", e.to_string()))?;
        if eta > c.eta0 {
            return Err(Error::config(
                "numerics.eta",
                format!(
                    "eta = {eta} exceeds eta0 = min{{(R-L)/M1, 2 nu L^2/M2^2}} = min{{({} - {})/{}, 2*{}*{}^2/{}^2}} = {}; set numerics.force = true to run anyway",
                    cutoff.r_inner, c.confinement_radius, c.grad_bound_inner, c.nu, c.confinement_radius, c.grad_bound_outer, c.eta0
                ),
            ));
        }
    }
    if let Some([lo, hi]) = cfg.checks.slope {
        if !(lo <= hi) {
            return Err(Error::config("assert.slope", "band must satisfy lo <= hi"));
        }
    }
    if let Some([lo, hi]) = cfg.checks.gamma {
        if !(lo <= hi) {
            return Err(Error::config("assert.gamma", "band must satisfy lo <= hi"));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        ProblemSpec::new(
            self.problem.family,
            self.problem.d,
            self.problem.mu,
            self.problem.s,
        )
    }

    pub fn cutoff_spec(&self) -> Result<CutoffSpec> {
        CutoffSpec::new(self.cutoff.r, self.cutoff.r2.unwrap_or(2.0 * self.cutoff.r))
    }

    pub fn observable(&self) -> Result<Observable> {
        self.numerics.phi.parse()
    }

    pub fn eta(&self) -> f64 {
        self.numerics.eta.expect("materialized")
    }

    pub fn chain_source(&self) -> ChainSource {
        let n = &self.numerics;
        match n.chain_source {
            ChainSourceName::ClosedForm => ChainSource::ClosedForm,
            ChainSourceName::SemigroupGrid => ChainSource::SemigroupGrid {
                radius: n.grid_radius.expect("materialized"),
                n_points: n.grid_points,
                quad_nodes: n.quad_nodes,
            },
            ChainSourceName::Mc => ChainSource::Mc {
                m: n.m,
                seed: n.seed,
            },
        }
    }

    pub fn diffusion_source(&self) -> DiffusionSource {
        let n = &self.numerics;
        match n.u_source {
            USourceName::OuExact => DiffusionSource::OuExact,
            USourceName::Pde => DiffusionSource::Pde {
                half_width: n.pde_half_width.expect("materialized"),
                n_x: n.pde_n_x,
                max_dt: n.dt,
            },
            // Each η gets its own default substep.
            USourceName::Mc => DiffusionSource::Mc {
                m: n.m,
                seed: n.seed,
                h: None,
            },
        }
    }

    pub fn weak_error_setup(&self) -> Result<WeakErrorSetup> {
        Ok(WeakErrorSetup {
            problem: self.problem_spec()?,
            cutoff: self.cutoff_spec()?,
            phi: self.observable()?,
            probes: self.numerics.probes.clone(),
            chain: self.chain_source(),
            diffusion: self.diffusion_source(),
            drift: self.numerics.drift,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        parse_config_with_env(text, Vec::new())
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse("[problem]\nfamily = \"quadratic\"\n[cutoff]\nR = 2.0\n").unwrap();
        assert_eq!(cfg.cutoff.r2, Some(4.0));
        assert_eq!(cfg.numerics.seed, 0);
        assert_eq!(cfg.numerics.probes, DEFAULT_PROBES.to_vec());
        assert_eq!(cfg.numerics.eta, Some(0.2));
        assert_eq!(cfg.numerics.pde_half_width, Some(4.5));
        assert_eq!(cfg.experiment, Experiment::WeakError);
        assert_eq!(parse("").unwrap().problem.family, Family::Quadratic);
    }

    #[test]
    fn bad_cutoff_names_r2() {
        let err = parse("[cutoff]\nR = 2.0\nR2 = 1.5\n").unwrap_err();
        assert!(
            matches!(err, Error::Config { ref key, .. } if key == "cutoff.R2"),
            "{err}"
        );
    }

    #[test]
    fn unknown_keys_and_type_errors_name_the_key() {
        let err = parse("[numerics]\nsed = 3\n").unwrap_err();
        assert!(err.to_string().contains("sed"), "{err}");
        let err = parse("[numerics]\nT = \"long\"\n").unwrap_err();
        assert!(
            matches!(err, Error::Config { ref key, .. } if key == "numerics.T"),
            "{err}"
        );
        let err = parse("[problem]\nfamily = \"cubic\"\n").unwrap_err();
        assert!(
            matches!(err, Error::Config { ref key, .. } if key == "problem.family"),
            "{err}"
        );
    }

    #[test]
    fn trap_check_above_eta0_quotes_the_bound() {
        let err = parse("experiment = \"trap-check\"\n[numerics]\neta = 0.2\n").unwrap_err();
        let msg = err.to_string();
        assert!(
            msg.contains("numerics.eta") && msg.contains("0.16"),
            "{msg}"
        );
        assert!(
            parse("experiment = \"trap-check\"\n[numerics]\neta = 0.2\nforce = true\n").is_ok()
        );
    }

    #[test]
    fn environment_overrides() {
        let env = vec![
            ("SGDLAB_NUMERICS__SEED".to_string(), "7".to_string()),
            ("SGDLAB_CUTOFF__R2".to_string(), "5.0".to_string()),
            (
                "SGDLAB_NUMERICS__PHI".to_string(),
                "squared_norm".to_string(),
            ),
            ("OTHER".to_string(), "1".to_string()),
        ];
        let cfg = parse_config_with_env("[numerics]\nseed = 1\n", env).unwrap();
        assert_eq!(cfg.numerics.seed, 7);
        assert_eq!(cfg.cutoff.r2, Some(5.0));
        assert_eq!(cfg.numerics.phi, "squared_norm");

        let env = vec![
            ("SGDLAB_NUMERICS__u_source".to_string(), "pde".to_string()),
            (
                "SGDLAB_NUMERICS__U_SOURCE".to_string(),
                "semigroup_grid".to_string(),
            ),
        ];
        let cfg = parse_config_with_env("", env).unwrap();
        assert_eq!(cfg.numerics.u_source, USourceName::Pde);
        assert_eq!(cfg.numerics.chain_source, ChainSourceName::SemigroupGrid);
    }

    #[test]
    fn substep_must_divide_eta() {
        let err = parse("[numerics]\neta = 0.1\nh = 0.03\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "numerics.h"));
    }

    #[test]
    fn closed_form_requires_a_linear_family() {
        let err = parse("[problem]\nfamily = \"double_well\"\n").unwrap_err();
        assert!(
            matches!(err, Error::Config { ref key, .. } if key == "numerics.U_source"),
            "{err}"
        );
    }

    #[test]
    fn materialized_config_round_trips() {
        let cfg = parse("[problem]\nfamily = \"trig\"\ns = 2.0\n[cutoff]\nR = 6.0\n").unwrap();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(parse(&text).unwrap(), cfg);
    }
}
