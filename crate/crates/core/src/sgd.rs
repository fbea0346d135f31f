//! The SGD Markov chain `X_{n+1} = X_n − η∇f(X_n; ξ_n)` and Monte Carlo
//! estimates of `Uⁿ(x) = E_x φ(X_n)`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cutoff::norm;
use crate::error::{Error, Result};
use crate::observable::Observable;
use crate::output::fmt_f64;
use crate::problems::ProblemSpec;
use crate::rng::{self, Gaussian, StreamRng};
use crate::stats::{ensemble, EstimateWithError, BLOCK_SIZE};

/// Law of `X₀`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialLaw {
    Point(Vec<f64>),
    UniformBall { radius: f64 },
}

impl InitialLaw {
    pub fn dim_matches(&self, dim: usize) -> bool {
        match self {
            InitialLaw::Point(x) => x.len() == dim,
            InitialLaw::UniformBall { .. } => true,
        }
    }

    /// Draws `X₀` into `out`, consuming the trajectory stream only for the ball.
    pub fn draw(&self, rng: &mut StreamRng, gauss: &mut Gaussian, out: &mut [f64]) {
        match self {
            InitialLaw::Point(x) => out.copy_from_slice(x),
            InitialLaw::UniformBall { radius } => rng::uniform_ball(rng, gauss, *radius, out),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub eta: f64,
    pub n_steps: usize,
    pub init: InitialLaw,
    pub seed: u64,
}

impl ChainConfig {
    pub fn from_point(eta: f64, n_steps: usize, x0: Vec<f64>, seed: u64) -> Self {
        Self {
            eta,
            n_steps,
            init: InitialLaw::Point(x0),
            seed,
        }
    }

    fn validate(&self, problem: &ProblemSpec) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Argument(format!(
                "step size must be nonnegative, got {}",
                self.eta
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

/// `x − η ∇f(x; ξ)`.
pub fn sgd_step(problem: &ProblemSpec, x: &[f64], xi: &[f64], eta: f64) -> Vec<f64> {
    let g = problem.grad_random(x, xi);
    x.iter().zip(&g).map(|(a, b)| a - eta * b).collect()
}

/// Reusable state for simulating one chain without allocation per step.
struct Chain<'a> {
    problem: &'a ProblemSpec,
    eta: f64,
    xi: Vec<f64>,
    grad: Vec<f64>,
}

impl<'a> Chain<'a> {
    fn new(problem: &'a ProblemSpec, eta: f64) -> Self {
        Self {
            problem,
            eta,
            xi: vec![0.0; problem.noise_dim()],
            grad: vec![0.0; problem.dim],
        }
    }

    #[inline]
    fn step(&mut self, rng: &mut StreamRng, x: &mut [f64]) {
        self.problem.sample_xi(rng, &mut self.xi);
        self.problem.grad_random_into(x, &self.xi, &mut self.grad);
        for (a, g) in x.iter_mut().zip(&self.grad) {
            *a -= self.eta * g;
        }
    }
}

/// Path `X₀, …, X_N` of trajectory `index`; `ξ_k` come from `stream(seed, index)`.
pub fn sgd_trajectory(
    problem: &ProblemSpec,
    cfg: &ChainConfig,
    index: u64,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate(problem)?;
    let mut rng = rng::stream(cfg.seed, index);
    let mut gauss = Gaussian::new();
    let mut x = vec![0.0; problem.dim];
    cfg.init.draw(&mut rng, &mut gauss, &mut x);
    let mut chain = Chain::new(problem, cfg.eta);
    let mut path = Vec::with_capacity(cfg.n_steps + 1);
    path.push(x.clone());
    for _ in 0..cfg.n_steps {
        chain.step(&mut rng, &mut x);
        path.push(x.clone());
    }
    Ok(path)
}

/// Monte Carlo `E φ(X_n)` for every `n = 0..=n_steps` over `m` trajectories.
pub fn estimate_u_series(
    problem: &ProblemSpec,
    phi: &Observable,
    cfg: &ChainConfig,
    m: usize,
) -> Result<Vec<EstimateWithError>> {
    cfg.validate(problem)?;
    if m < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 trajectories, got {m}"
        )));
    }
    phi.check_dim(problem.dim)?;
    Ok(ensemble(m, cfg.n_steps + 1, |index, out| {
        let mut rng = rng::stream(cfg.seed, index);
        let mut gauss = Gaussian::new();
        let mut x = vec![0.0; problem.dim];
        cfg.init.draw(&mut rng, &mut gauss, &mut x);
        let mut chain = Chain::new(problem, cfg.eta);
        out[0] = phi.eval(problem, &x);
        for slot in out[1..].iter_mut() {
            chain.step(&mut rng, &mut x);
            *slot = phi.eval(problem, &x);
        }
    }))
}

/// Monte Carlo `U^N(x₀) = E φ(X_N)` with its standard error.
pub fn estimate_u(
    problem: &ProblemSpec,
    phi: &Observable,
    cfg: &ChainConfig,
    m: usize,
) -> Result<EstimateWithError> {
    Ok(*estimate_u_series(problem, phi, cfg, m)?
        .last()
        .expect("series has n_steps + 1 entries"))
}

/// Exact `Uⁿ(x₀)` for observables of degree at most two on the families with
/// `∇f(x; ξ) = μx + ζ`, `E ζ = 0`, `Cov ζ = σ²I` (quadratic and trig).
pub fn closed_form_u(
    problem: &ProblemSpec,
    phi: &Observable,
    eta: f64,
    x0: &[f64],
    n: usize,
) -> Result<f64> {
    let var = problem.isotropic_noise_variance().ok_or_else(|| {
        Error::Argument(format!(
            "no closed-form moments for the {} family",
            problem.family
        ))
    })?;
    let r = 1.0 - eta * problem.mu;
    let mean = |x: f64| r.powi(n as i32) * x;
    // m_{k+1} = r² m_k + η²σ², summed in closed form.
    let r2n = (r * r).powi(n as i32);
    let noise = if (1.0 - r * r).abs() < 1e-300 {
        n as f64 * eta * eta * var
    } else {
        eta * eta * var * (1.0 - r2n) / (1.0 - r * r)
    };
    let second = |x: f64| r2n * x * x + noise;
    match phi {
        Observable::Coordinate(i) => Ok(mean(x0[*i])),
        Observable::SquaredNorm => Ok(x0.iter().map(|&x| second(x)).sum()),
        Observable::ExpectedLoss => {
            Ok(0.5 * problem.mu * x0.iter().map(|&x| second(x)).sum::<f64>())
        }
        Observable::Polynomial(c) if c.len() <= 3 && x0.len() == 1 => {
            let coef = |k: usize| c.get(k).copied().unwrap_or(0.0);
            Ok(coef(0) + coef(1) * mean(x0[0]) + coef(2) * second(x0[0]))
        }
        other => Err(Error::Argument(format!(
            "no closed form for observable {other}"
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrapReport {
    pub radius: f64,
    pub eta: f64,
    pub eta0: f64,
    pub forced: bool,
    pub trajectories: usize,
    pub steps: usize,
    pub max_norm_seen: f64,
    /// Iterates with `|X_n| > R`.
    pub escapes: u64,
}

/// Runs `m` chains of `n_steps` from the uniform law on `B(0, R)` and counts
/// iterates outside the ball. Refuses `η > η₀` unless `force` is set.
pub fn trap_check(
    problem: &ProblemSpec,
    radius: f64,
    eta: f64,
    n_steps: usize,
    m: usize,
    seed: u64,
    force: bool,
) -> Result<TrapReport> {
    let eta0 = problem.constants(radius)?.eta0;
    if eta > eta0 && !force {
        return Err(Error::Domain(format!(
            "eta = {eta} exceeds the trapping bound eta0 = min{{(R-L)/M1, 2 nu L^2/M2^2}} = {eta0} for R = {radius}"
        )));
    }
    let (max_norm_seen, escapes) = count_escapes(problem, radius, radius, eta, n_steps, m, seed);
    Ok(TrapReport {
        radius,
        eta,
        eta0,
        forced: force,
        trajectories: m,
        steps: n_steps,
        max_norm_seen,
        escapes,
    })
}

/// `(max |X_n|, #{(i, n) : |X_n| > bound})` for `m` chains started uniformly
/// in `B(0, init_radius)`.
pub fn count_escapes(
    problem: &ProblemSpec,
    init_radius: f64,
    bound: f64,
    eta: f64,
    n_steps: usize,
    m: usize,
    seed: u64,
) -> (f64, u64) {
    let init = InitialLaw::UniformBall {
        radius: init_radius,
    };
    let n_blocks = m.div_ceil(BLOCK_SIZE);
    (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut max_norm = 0.0f64;
            let mut escapes = 0u64;
            let mut x = vec![0.0; problem.dim];
            let mut chain = Chain::new(problem, eta);
            for i in b * BLOCK_SIZE..((b + 1) * BLOCK_SIZE).min(m) {
                let mut rng = rng::stream(seed, i as u64);
                let mut gauss = Gaussian::new();
                init.draw(&mut rng, &mut gauss, &mut x);
                max_norm = max_norm.max(norm(&x));
                for _ in 0..n_steps {
                    chain.step(&mut rng, &mut x);
                    let r = norm(&x);
                    max_norm = max_norm.max(r);
                    escapes += u64::from(r > bound);
                }
            }
            (max_norm, escapes)
        })
        .reduce(|| (0.0, 0), |a, b| (a.0.max(b.0), a.1 + b.1))
}

/// CSV with columns `step,x_0,…,x_{d−1}`.
pub fn write_path_csv<W: Write>(path: &[Vec<f64>], mut w: W) -> Result<()> {
    let d = path.first().map_or(0, Vec::len);
    let header: Vec<String> = (0..d).map(|i| format!("x_{i}")).collect();
    writeln!(w, "step,{}", header.join(","))?;
    for (k, x) in path.iter().enumerate() {
        let row: Vec<String> = x.iter().map(|v| fmt_f64(*v)).collect();
        writeln!(w, "{k},{}", row.join(","))?;
    }
    Ok(())
}
