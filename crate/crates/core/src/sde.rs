//! Euler–Maruyama simulation of the modified SDE
//! `dX = −(∇f + η ¼∇|∇f|²) dt + √(ηΛ(X)) dW`, the exact Ornstein–Uhlenbeck
//! oracle for the families with linear mean gradient, and moment envelopes.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cutoff::{norm, psd_sqrt, CutoffSpec};
use crate::error::{Error, Result};
use crate::observable::Observable;
use crate::output::fmt_f64;
use crate::problems::ProblemSpec;
use crate::rng::{self, Gaussian, StreamRng};
use crate::sgd::InitialLaw;
use crate::stats::{ensemble, EstimateWithError, BLOCK_SIZE};

/// Which drift the diffusion approximation uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftModel {
    /// Gradient flow plus the `η ¼∇|∇f|²` correction.
    #[default]
    Modified,
    /// Gradient flow only (the classical first-order approximation).
    FirstOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdeConfig {
    pub eta: f64,
    /// Integrator substep; must divide `eta`.
    pub h: f64,
    pub horizon: f64,
    pub init: InitialLaw,
    pub seed: u64,
    #[serde(default)]
    pub drift: DriftModel,
}

impl SdeConfig {
    pub fn from_point(eta: f64, h: f64, horizon: f64, x0: Vec<f64>, seed: u64) -> Self {
        Self {
            eta,
            h,
            horizon,
            init: InitialLaw::Point(x0),
            seed,
            drift: DriftModel::Modified,
        }
    }

    /// Default oracle substep `min(η²/10, η/100)` rounded down to a divisor of `η`.
    pub fn default_substep(eta: f64) -> f64 {
        let target = (eta * eta / 10.0).min(0.01 * eta);
        eta / (eta / target).ceil()
    }

    /// Substeps per epoch.
    pub fn substeps(&self) -> usize {
        (self.eta / self.h).round() as usize
    }

    /// Number of recorded epochs after `t = 0`.
    pub fn n_epochs(&self) -> usize {
        (self.horizon / self.eta + 1e-9).floor() as usize
    }

    pub fn validate(&self, problem: &ProblemSpec) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Argument(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if !(self.h > 0.0 && self.h <= self.eta * (1.0 + 1e-12)) {
            return Err(Error::Argument(format!(
                "substep h = {} must lie in (0, eta = {}]",
                self.h, self.eta
            )));
        }
        let k = (self.eta / self.h).round();
        if (k * self.h - self.eta).abs() > 1e-9 * self.eta {
            return Err(Error::Argument(format!(
                "substep h = {} does not divide eta = {}",
                self.h, self.eta
            )));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::Argument(format!(
                "horizon must be nonnegative, got {}",
                self.horizon
            )));
        }
        if !self.init.dim_matches(problem.dim) {
            return Err(Error::Argument(
                "initial point has the wrong dimension".into(),
            ));
        }
        Ok(())
    }
}

/// `−(∇f(x) + η ¼∇|∇f(x)|²)`.
pub fn modified_drift(problem: &ProblemSpec, x: &[f64], eta: f64) -> Vec<f64> {
    let mut g = problem.grad_expected(x);
    let c = problem.correction_drift(x);
    for (a, b) in g.iter_mut().zip(&c) {
        *a = -(*a + eta * b);
    }
    g
}

/// One Euler–Maruyama step with Brownian increment `dw ~ N(0, hI)`.
pub fn em_step(
    problem: &ProblemSpec,
    cutoff: &CutoffSpec,
    x: &[f64],
    eta: f64,
    h: f64,
    dw: &[f64],
) -> Result<Vec<f64>> {
    let b = modified_drift(problem, x, eta);
    let root = cutoff.sqrt_lambda(problem, x)?;
    let noise = root * nalgebra::DVector::from_column_slice(dw);
    Ok((0..x.len())
        .map(|i| x[i] + b[i] * h + eta.sqrt() * noise[i])
        .collect())
}

/// Allocation-free integrator state for one path.
struct Integrator<'a> {
    problem: &'a ProblemSpec,
    cutoff: &'a CutoffSpec,
    eta: f64,
    h: f64,
    drift: DriftModel,
    /// `√(ηh) Σ^{1/2}`, row-major; `Σ` is state-independent for the built-in families.
    scaled_root: Vec<f64>,
    grad: Vec<f64>,
    corr: Vec<f64>,
    z: Vec<f64>,
}

impl<'a> Integrator<'a> {
    fn new(problem: &'a ProblemSpec, cutoff: &'a CutoffSpec, cfg: &SdeConfig) -> Result<Self> {
        let d = problem.dim;
        let root = psd_sqrt(&problem.sigma(&vec![0.0; d]))?;
        let scale = (cfg.eta * cfg.h).sqrt();
        let scaled_root = (0..d * d).map(|k| scale * root[(k / d, k % d)]).collect();
        Ok(Self {
            problem,
            cutoff,
            eta: cfg.eta,
            h: cfg.h,
            drift: cfg.drift,
            scaled_root,
            grad: vec![0.0; d],
            corr: vec![0.0; d],
            z: vec![0.0; d],
        })
    }

    #[inline]
    fn step(&mut self, rng: &mut StreamRng, gauss: &mut Gaussian, x: &mut [f64]) {
        let d = x.len();
        self.problem.grad_expected_into(x, &mut self.grad);
        match self.drift {
            DriftModel::Modified => self.problem.correction_drift_into(x, &mut self.corr),
            DriftModel::FirstOrder => self.corr.iter_mut().for_each(|v| *v = 0.0),
        }
        for z in self.z.iter_mut() {
            *z = gauss.sample(rng);
        }
        let psi = self.cutoff.psi(norm(x));
        for (i, xi) in x.iter_mut().enumerate() {
            let noise = if psi > 0.0 {
                let row = &self.scaled_root[i * d..(i + 1) * d];
                row.iter().zip(&self.z).map(|(a, z)| a * z).sum()
            } else {
                0.0
            };
            *xi += -(self.grad[i] + self.eta * self.corr[i]) * self.h + psi * noise;
        }
    }
}

fn run_path(
    problem: &ProblemSpec,
    cutoff: &CutoffSpec,
    cfg: &SdeConfig,
    index: u64,
    mut on_epoch: impl FnMut(usize, &[f64]),
    mut on_substep: impl FnMut(&[f64]),
) -> Result<()> {
    let mut rng = rng::stream(cfg.seed, index);
    let mut gauss = Gaussian::new();
    let mut x = vec![0.0; problem.dim];
    cfg.init.draw(&mut rng, &mut gauss, &mut x);
    let mut integ = Integrator::new(problem, cutoff, cfg)?;
    let k = cfg.substeps();
    on_epoch(0, &x);
    on_substep(&x);
    for n in 1..=cfg.n_epochs() {
        for _ in 0..k {
            integ.step(&mut rng, &mut gauss, &mut x);
            on_substep(&x);
        }
        on_epoch(n, &x);
    }
    Ok(())
}

/// Path of trajectory `index` sampled at `t = nη`, `n = 0..=⌊T/η⌋`.
pub fn simulate_sde(
    problem: &ProblemSpec,
    cutoff: &CutoffSpec,
    cfg: &SdeConfig,
    index: u64,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate(problem)?;
    let mut path = Vec::with_capacity(cfg.n_epochs() + 1);
    run_path(
        problem,
        cutoff,
        cfg,
        index,
        |_, x| path.push(x.to_vec()),
        |_| {},
    )?;
    Ok(path)
}

/// Monte Carlo `u(x₀, nη) = E φ(X_{nη})` at every epoch.
pub fn estimate_u_mc(
    problem: &ProblemSpec,
    cutoff: &CutoffSpec,
    phi: &Observable,
    cfg: &SdeConfig,
    m: usize,
) -> Result<Vec<EstimateWithError>> {
    cfg.validate(problem)?;
    phi.check_dim(problem.dim)?;
    if m < 2 {
        return Err(Error::Argument(format!("need at least 2 paths, got {m}")));
    }
    // Surface PSD failures before entering the parallel section.
    Integrator::new(problem, cutoff, cfg)?;
    Ok(ensemble(m, cfg.n_epochs() + 1, |index, out| {
        run_path(
            problem,
            cutoff,
            cfg,
            index,
            |n, x| out[n] = phi.eval(problem, x),
            |_| {},
        )
        .expect("integrator construction checked above");
    }))
}

/// `(t, E|X_t|^{order})` at every epoch; `order` is the even exponent `2m`.
pub fn moment_curve(
    problem: &ProblemSpec,
    cutoff: &CutoffSpec,
    cfg: &SdeConfig,
    m: usize,
    order: u32,
) -> Result<Vec<(f64, EstimateWithError)>> {
    if m < 100 {
        return Err(Error::Argument(format!(
            "moment curves need at least 100 paths, got {m}"
        )));
    }
    if !order.is_multiple_of(2) {
        return Err(Error::Argument(format!(
            "moment order must be even, got {order}"
        )));
    }
    let phi = Observable::SquaredNorm;
    let half = (order / 2) as i32;
    cfg.validate(problem)?;
    Integrator::new(problem, cutoff, cfg)?;
    let est = ensemble(m, cfg.n_epochs() + 1, |index, out| {
        run_path(
            problem,
            cutoff,
            cfg,
            index,
            |n, x| out[n] = phi.eval(problem, x).powi(half),
            |_| {},
        )
        .expect("integrator construction checked above");
    });
    Ok(est
        .into_iter()
        .enumerate()
        .map(|(n, e)| (n as f64 * cfg.eta, e))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfinementReport {
    pub r_outer: f64,
    /// One-step overshoot allowance `10 √(η sup‖Λ‖) √h`.
    pub tolerance: f64,
    pub paths: usize,
    pub points_checked: u64,
    pub max_norm_seen: f64,
    pub violations: u64,
}

/// Counts substep states with `|X| > R₂ + tolerance` over `m` paths.
pub fn confinement_check(
    problem: &ProblemSpec,
    cutoff: &CutoffSpec,
    cfg: &SdeConfig,
    m: usize,
) -> Result<ConfinementReport> {
    cfg.validate(problem)?;
    Integrator::new(problem, cutoff, cfg)?;
    let sigma = problem.sigma(&vec![0.0; problem.dim]);
    let sup_lambda = nalgebra::SymmetricEigen::new(sigma)
        .eigenvalues
        .max()
        .max(0.0);
    let tolerance = 10.0 * (cfg.eta * sup_lambda).sqrt() * cfg.h.sqrt();
    let limit = cutoff.r_outer + tolerance;
    let n_blocks = m.div_ceil(BLOCK_SIZE);
    let (max_norm_seen, violations, points_checked) = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = (0.0f64, 0u64, 0u64);
            for i in b * BLOCK_SIZE..((b + 1) * BLOCK_SIZE).min(m) {
                run_path(
                    problem,
                    cutoff,
                    cfg,
                    i as u64,
                    |_, _| {},
                    |x| {
                        let r = norm(x);
                        acc.0 = acc.0.max(r);
                        acc.1 += u64::from(r > limit);
                        acc.2 += 1;
                    },
                )
                .expect("integrator construction checked above");
            }
            acc
        })
        .reduce(|| (0.0, 0, 0), |a, b| (a.0.max(b.0), a.1 + b.1, a.2 + b.2));
    Ok(ConfinementReport {
        r_outer: cutoff.r_outer,
        tolerance,
        paths: m,
        points_checked,
        max_norm_seen,
        violations,
    })
}

/// Ornstein–Uhlenbeck parameters of the SDE when `∇f(x) = μx` and `Σ = σ²I`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OuParams {
    /// Mean-reversion rate.
    pub a: f64,
    /// Per-coordinate diffusion `ησ²`.
    pub diffusion_sq: f64,
}

impl OuParams {
    pub fn new(mu: f64, eta: f64, s_sq: f64, drift: DriftModel) -> Result<Self> {
        let a = match drift {
            DriftModel::Modified => mu + 0.5 * eta * mu * mu,
            DriftModel::FirstOrder => mu,
        };
        if !(a > 0.0) {
            return Err(Error::Argument(format!(
                "OU rate must be positive, got {a}"
            )));
        }
        if !(s_sq >= 0.0) {
            return Err(Error::Argument(format!(
                "noise variance must be nonnegative, got {s_sq}"
            )));
        }
        Ok(Self {
            a,
            diffusion_sq: eta * s_sq,
        })
    }

    /// Parameters for a built-in family with closed-form moments.
    pub fn for_problem(problem: &ProblemSpec, eta: f64, drift: DriftModel) -> Result<Self> {
        let s_sq = problem.isotropic_noise_variance().ok_or_else(|| {
            Error::Argument(format!(
                "no Ornstein-Uhlenbeck form for the {} family",
                problem.family
            ))
        })?;
        Self::new(problem.mu, eta, s_sq, drift)
    }

    /// `E X_t` (per coordinate).
    pub fn mean(&self, x0: f64, t: f64) -> f64 {
        (-self.a * t).exp() * x0
    }

    /// Per-coordinate variance of `X_t`.
    pub fn variance(&self, t: f64) -> f64 {
        self.diffusion_sq / (2.0 * self.a) * -(-2.0 * self.a * t).exp_m1()
    }

    /// `E φ(X_t)` for `φ` of degree at most two.
    pub fn expectation(
        &self,
        problem: &ProblemSpec,
        phi: &Observable,
        x0: &[f64],
        t: f64,
    ) -> Result<f64> {
        let second = |x: f64| {
            let m = self.mean(x, t);
            m * m + self.variance(t)
        };
        match phi {
            Observable::Coordinate(i) => Ok(self.mean(x0[*i], t)),
            Observable::SquaredNorm => Ok(x0.iter().map(|&x| second(x)).sum()),
            Observable::ExpectedLoss => {
                Ok(0.5 * problem.mu * x0.iter().map(|&x| second(x)).sum::<f64>())
            }
            Observable::Polynomial(c) if c.len() <= 3 && x0.len() == 1 => {
                let coef = |k: usize| c.get(k).copied().unwrap_or(0.0);
                Ok(coef(0) + coef(1) * self.mean(x0[0], t) + coef(2) * second(x0[0]))
            }
            other => Err(Error::Argument(format!(
                "no closed form for observable {other}"
            ))),
        }
    }
}

/// Exact `E φ(X_t)` of the modified SDE on the quadratic family (1-D).
pub fn ou_exact(mu: f64, eta: f64, s_sq: f64, x0: f64, t: f64, phi: &Observable) -> Result<f64> {
    let ou = OuParams::new(mu, eta, s_sq, DriftModel::Modified)?;
    let problem = ProblemSpec::quadratic(1, mu, s_sq.sqrt())?;
    ou.expectation(&problem, phi, &[x0], t)
}

/// Envelope `C (1 + A e^{−γt})` fitted as an upper bound to a moment curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeFit {
    pub c: f64,
    pub gamma: f64,
    /// `A = |x₀|^{2m}`.
    pub amplitude: f64,
    /// Mean of `log(envelope / value)` over the fitted points.
    pub mean_log_gap: f64,
}

impl EnvelopeFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.c * (1.0 + self.amplitude * (-self.gamma * t).exp())
    }

    /// Largest relative excess `y/envelope − 1` (nonpositive when bounded).
    pub fn max_excess(&self, t: &[f64], y: &[f64]) -> f64 {
        t.iter()
            .zip(y)
            .map(|(&t, &y)| y / self.eval(t) - 1.0)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Tightest upper envelope `C(1 + A e^{−γt})`: for each `γ` the smallest `C`
/// bounding every point, with `γ` minimising the mean log gap.
pub fn fit_envelope(t: &[f64], y: &[f64], amplitude: f64) -> Result<EnvelopeFit> {
    if t.len() != y.len() || t.len() < 3 {
        return Err(Error::Argument(
            "envelope fit needs at least 3 (t, y) pairs".into(),
        ));
    }
    if y.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Argument("envelope fit needs positive values".into()));
    }
    let c_of = |g: f64| {
        t.iter()
            .zip(y)
            .map(|(&t, &y)| y / (1.0 + amplitude * (-g * t).exp()))
            .fold(0.0, f64::max)
    };
    let gap = |lg: f64| {
        let g = lg.exp();
        let c = c_of(g);
        t.iter()
            .zip(y)
            .map(|(&t, &y)| (c * (1.0 + amplitude * (-g * t).exp()) / y).ln())
            .sum::<f64>()
            / t.len() as f64
    };
    let (lo, hi, n) = (1e-3f64.ln(), 1e2f64.ln(), 400);
    let step = (hi - lo) / n as f64;
    let best = (0..=n)
        .map(|k| lo + k as f64 * step)
        .min_by(|a, b| gap(*a).total_cmp(&gap(*b)))
        .expect("nonempty grid");
    // Golden-section refinement around the best grid point.
    let (mut a, mut b) = ((best - step).max(lo), (best + step).min(hi));
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    for _ in 0..80 {
        if gap(c) < gap(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - r * (b - a);
        d = a + r * (b - a);
    }
    let lg = 0.5 * (a + b);
    let gamma = lg.exp();
    Ok(EnvelopeFit {
        c: c_of(gamma),
        gamma,
        amplitude,
        mean_log_gap: gap(lg),
    })
}

/// CSV with columns `t,value,std_error`.
pub fn write_curve_csv<W: Write>(curve: &[(f64, EstimateWithError)], mut w: W) -> Result<()> {
    writeln!(w, "t,value,std_error")?;
    for (t, e) in curve {
        writeln!(
            w,
            "{},{},{}",
            fmt_f64(*t),
            fmt_f64(e.value),
            fmt_f64(e.std_error)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::linear_fit;

    fn quad(s: f64) -> ProblemSpec {
        ProblemSpec::quadratic(1, 1.0, s).unwrap()
    }

    fn wide() -> CutoffSpec {
        CutoffSpec::new(5.0, 10.0).unwrap()
    }

    #[test]
    fn drift_examples() {
        let q = quad(0.5);
        assert_eq!(modified_drift(&q, &[1.0], 0.0), vec![-1.0]);
        assert!((modified_drift(&q, &[1.0], 0.1)[0] + 1.05).abs() < 1e-15);
        assert_eq!(modified_drift(&q, &[0.0], 0.1), vec![0.0]);
        let t = ProblemSpec::trig(1.0, 2.0).unwrap();
        assert_eq!(modified_drift(&t, &[0.0], 0.1), vec![0.0]);
    }

    #[test]
    fn em_step_examples() {
        let q = quad(0.5);
        let c = CutoffSpec::new(2.0, 4.0).unwrap();
        let x = em_step(&q, &c, &[1.0], 0.1, 0.01, &[0.1]).unwrap();
        assert!((x[0] - 1.005311).abs() < 1e-6, "{x:?}");
        assert_eq!(
            em_step(&q, &c, &[1.0], 0.1, 0.0, &[0.0]).unwrap(),
            vec![1.0]
        );
        let far = em_step(&q, &c, &[5.0], 0.1, 0.01, &[0.3]).unwrap();
        assert!((far[0] - (5.0 - 5.25 * 0.01)).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let q = quad(0.5);
        assert!(SdeConfig::from_point(0.1, 0.03, 1.0, vec![1.0], 0)
            .validate(&q)
            .is_err());
        assert!(SdeConfig::from_point(0.1, 0.2, 1.0, vec![1.0], 0)
            .validate(&q)
            .is_err());
        assert!(SdeConfig::from_point(0.1, 0.025, 1.0, vec![1.0], 0)
            .validate(&q)
            .is_ok());
        let h = SdeConfig::default_substep(0.1);
        assert!((h - 0.001).abs() < 1e-15);
        let h = SdeConfig::default_substep(0.05);
        assert!((0.05 / h - (0.05 / h).round()).abs() < 1e-9 && h <= 2.5e-4);
    }

    #[test]
    fn ou_examples() {
        let c = Observable::Coordinate(0);
        assert_eq!(ou_exact(1.0, 0.1, 0.25, 0.7, 0.0, &c).unwrap(), 0.7);
        assert!((ou_exact(1.0, 0.1, 0.25, 1.0, 1.0, &c).unwrap() - 0.349938).abs() < 1e-6);
        let v = ou_exact(1.0, 0.1, 1.0, 1.0, 1.0, &Observable::SquaredNorm).unwrap();
        let exact = (-2.1f64).exp() + (0.1 / 2.1) * (1.0 - (-2.1f64).exp());
        assert!((v - exact).abs() < 1e-15);
        assert!((v - 0.164244).abs() < 1e-6);
        assert!(ou_exact(
            1.0,
            0.1,
            1.0,
            1.0,
            1.0,
            &Observable::Polynomial(vec![0.0, 0.0, 0.0, 1.0])
        )
        .is_err());
    }

    #[test]
    fn same_seed_same_path() {
        let t = ProblemSpec::trig(1.0, 2.0).unwrap();
        let c = CutoffSpec::new(6.0, 12.0).unwrap();
        let cfg = SdeConfig::from_point(0.1, 0.01, 2.0, vec![1.0], 3);
        assert_eq!(
            simulate_sde(&t, &c, &cfg, 2).unwrap(),
            simulate_sde(&t, &c, &cfg, 2).unwrap()
        );
        assert_eq!(simulate_sde(&t, &c, &cfg, 2).unwrap().len(), 21);
    }

    /// Classical RK4 on the modified gradient flow.
    fn rk4(problem: &ProblemSpec, x0: f64, eta: f64, t: f64, n: usize) -> f64 {
        let f = |x: f64| modified_drift(problem, &[x], eta)[0];
        let dt = t / n as f64;
        let mut x = x0;
        for _ in 0..n {
            let k1 = f(x);
            let k2 = f(x + 0.5 * dt * k1);
            let k3 = f(x + 0.5 * dt * k2);
            let k4 = f(x + dt * k3);
            x += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        x
    }

    #[test]
    fn noiseless_path_follows_the_ode_to_first_order() {
        let dw = ProblemSpec::double_well(0.0).unwrap();
        let c = CutoffSpec::new(2.0, 3.0).unwrap();
        let reference = rk4(&dw, 1.6, 0.1, 1.0, 10_000);
        let errs: Vec<f64> = [0.01, 0.005, 0.0025]
            .iter()
            .map(|&h| {
                let cfg = SdeConfig::from_point(0.1, h, 1.0, vec![1.6], 0);
                (simulate_sde(&dw, &c, &cfg, 0).unwrap()[10][0] - reference).abs()
            })
            .collect();
        assert!(errs[0] < 0.05);
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((1.7..2.3).contains(&ratio), "{errs:?}");
        }
    }

    #[test]
    fn deterministic_mc_has_zero_error() {
        let cfg = SdeConfig::from_point(0.1, 0.01, 1.0, vec![1.0], 0);
        let est = estimate_u_mc(&quad(0.0), &wide(), &Observable::Coordinate(0), &cfg, 8).unwrap();
        assert!(est.iter().all(|e| e.std_error == 0.0));
        assert!(estimate_u_mc(&quad(0.0), &wide(), &Observable::Coordinate(0), &cfg, 1).is_err());
    }

    #[test]
    fn mc_matches_ou_oracle() {
        let eta = 0.1;
        let q = quad(0.5);
        let cfg = SdeConfig::from_point(eta, eta * eta / 10.0, 2.0, vec![1.0], 11);
        let ou = OuParams::for_problem(&q, eta, DriftModel::Modified).unwrap();
        for phi in [Observable::Coordinate(0), Observable::SquaredNorm] {
            let est = estimate_u_mc(&q, &wide(), &phi, &cfg, 40_000).unwrap();
            for (n, e) in est.iter().enumerate() {
                let exact = ou.expectation(&q, &phi, &[1.0], n as f64 * eta).unwrap();
                let noise = 4.0 * e.std_error + 1e-3 * exact.abs();
                assert!(
                    (e.value - exact).abs() <= noise,
                    "{phi} n={n} {e:?} {exact}"
                );
            }
        }
    }

    #[test]
    fn substep_refinement_is_first_order() {
        let eta = 0.1;
        let q = quad(0.5);
        let ou = OuParams::for_problem(&q, eta, DriftModel::Modified).unwrap();
        let exact = ou.mean(1.0, 1.0);
        let mut hs = Vec::new();
        let mut bias = Vec::new();
        for h in [0.1, 0.05, 0.025] {
            let cfg = SdeConfig::from_point(eta, h, 1.0, vec![1.0], 21);
            let e = *estimate_u_mc(&q, &wide(), &Observable::Coordinate(0), &cfg, 200_000)
                .unwrap()
                .last()
                .unwrap();
            let b = (e.value - exact).abs();
            assert!(e.std_error < b / 5.0, "h={h} {e:?} bias={b}");
            hs.push(h.ln());
            bias.push(b.ln());
        }
        let fit = linear_fit(&hs, &bias).unwrap();
        assert!((0.7..=1.3).contains(&fit.slope), "{fit:?}");
    }

    #[test]
    fn confinement_holds_for_trig() {
        let t = ProblemSpec::trig(1.0, 2.0).unwrap();
        let c = CutoffSpec::new(6.0, 12.0).unwrap();
        let mut cfg = SdeConfig::from_point(0.1, 0.01, 5.0, vec![0.0], 4);
        cfg.init = InitialLaw::UniformBall { radius: 6.0 };
        let rep = confinement_check(&t, &c, &cfg, 1000).unwrap();
        assert_eq!(rep.violations, 0);
        assert_eq!(rep.points_checked, 1000 * 501);
    }

    #[test]
    fn zeroth_moment_is_one() {
        let t = ProblemSpec::trig(1.0, 2.0).unwrap();
        let c = CutoffSpec::new(6.0, 12.0).unwrap();
        let cfg = SdeConfig::from_point(0.1, 0.01, 1.0, vec![3.0], 4);
        let curve = moment_curve(&t, &c, &cfg, 200, 0).unwrap();
        assert!(curve.iter().all(|(_, e)| e.value == 1.0));
        assert!(moment_curve(&t, &c, &cfg, 50, 2).is_err());
    }

    #[test]
    fn envelope_recovers_exact_exponential() {
        let t: Vec<f64> = (0..200).map(|k| k as f64 * 0.1).collect();
        let y: Vec<f64> = t
            .iter()
            .map(|t| 2.0 * (1.0 + 9.0 * (-1.5 * t).exp()))
            .collect();
        let fit = fit_envelope(&t, &y, 9.0).unwrap();
        assert!((fit.gamma - 1.5).abs() < 1e-6, "{fit:?}");
        assert!((fit.c - 2.0).abs() < 1e-6);
        assert!(fit.max_excess(&t, &y) <= 1e-9);
    }

    #[test]
    fn curve_csv_header() {
        let mut buf = Vec::new();
        let e = EstimateWithError {
            value: 1.0,
            std_error: 0.0,
            n_samples: 2,
        };
        write_curve_csv(&[(0.0, e)], &mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("t,value,std_error\n"));
    }
}
