//! Finite differences for the one-dimensional backward Kolmogorov equation
//! `u_t = b u_x + ½ηΛ u_xx`, `u(·, 0) = φ`, with `b = −(∇f + η ¼∇|∇f|²)`.
//!
//! Advection is centred where the cell Péclet number `|b| h / (½ηΛ)` is at
//! most 2 and upwinded elsewhere, so every off-diagonal weight is
//! nonnegative. At `±B` the diffusion vanishes and the drift points inward,
//! so a one-sided inward difference closes the system without boundary data.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cutoff::CutoffSpec;
use crate::error::{Error, Result};
use crate::observable::Observable;
use crate::output::fmt_f64;
use crate::problems::ProblemSpec;
use crate::sde::DriftModel;
use crate::semigroup::{Grid1D, GridFunction};
use crate::stats::linear_fit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    CrankNicolson,
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeConfig {
    /// Domain `[−B, B]`; must exceed the outer cutoff radius.
    pub half_width: f64,
    pub n_x: usize,
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    /// Time steps between stored snapshots.
    pub snapshot_every: usize,
    #[serde(default)]
    pub drift: DriftModel,
}

impl PdeConfig {
    /// Crank–Nicolson configuration storing one snapshot per epoch `nη`,
    /// with the largest `dt = η/k` not exceeding `max_dt`.
    pub fn per_epoch(eta: f64, half_width: f64, n_x: usize, max_dt: f64, t_end: f64) -> Self {
        let k = ((eta / max_dt) - 1e-9).ceil().max(1.0) as usize;
        Self {
            half_width,
            n_x,
            dt: eta / k as f64,
            t_end,
            scheme: Scheme::CrankNicolson,
            snapshot_every: k,
            drift: DriftModel::Modified,
        }
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / (self.n_x - 1) as f64
    }

    fn n_steps(&self) -> usize {
        (self.t_end / self.dt + 1e-9).floor() as usize
    }
}

/// `u(x_i, t_k)` on a uniform space grid and the snapshot times.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub x: Vec<f64>,
    pub t: Vec<f64>,
    /// `values[k][i] = u(x_i, t_k)`.
    pub values: Vec<Vec<f64>>,
}

impl ScalarField {
    pub fn spacing(&self) -> f64 {
        self.x[1] - self.x[0]
    }

    /// Index of the snapshot at time `t`.
    pub fn time_index(&self, t: f64) -> Result<usize> {
        let tol = 1e-9 * t.abs().max(1.0);
        self.t
            .iter()
            .position(|s| (s - t).abs() <= tol)
            .ok_or_else(|| Error::Argument(format!("t = {t} is not a stored snapshot time")))
    }

    /// Snapshot `k` as a grid function.
    pub fn snapshot(&self, k: usize) -> GridFunction {
        let n = self.x.len();
        GridFunction {
            grid: Grid1D {
                lo: self.x[0],
                hi: self.x[n - 1],
                n_points: n,
            },
            values: self.values[k].clone(),
        }
    }

    /// Cubic interpolation of snapshot `k` at `y`.
    pub fn eval(&self, k: usize, y: f64) -> f64 {
        crate::interp::cubic_eval(self.x[0], self.spacing(), &self.values[k], y)
    }

    /// CSV with columns `t,x,u`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x,u")?;
        for (t, row) in self.t.iter().zip(&self.values) {
            let t = fmt_f64(*t);
            for (x, u) in self.x.iter().zip(row) {
                writeln!(w, "{t},{},{}", fmt_f64(*x), fmt_f64(*u))?;
            }
        }
        Ok(())
    }
}

/// Spatial operator as a tridiagonal matrix `(A u)_i = l_i u_{i−1} + d_i u_i + r_i u_{i+1}`.
struct Tridiagonal {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl Tridiagonal {
    fn apply(&self, u: &[f64], out: &mut [f64]) {
        let n = u.len();
        for i in 0..n {
            let mut v = self.diag[i] * u[i];
            if i > 0 {
                v += self.lower[i] * u[i - 1];
            }
            if i + 1 < n {
                v += self.upper[i] * u[i + 1];
            }
            out[i] = v;
        }
    }
}

fn assemble(
    problem: &ProblemSpec,
    cutoff: &CutoffSpec,
    eta: f64,
    cfg: &PdeConfig,
) -> Result<(Vec<f64>, Tridiagonal, f64, f64)> {
    let n = cfg.n_x;
    let h = cfg.spacing();
    let x: Vec<f64> = (0..n)
        .map(|i| {
            if i + 1 == n {
                cfg.half_width
            } else {
                -cfg.half_width + h * i as f64
            }
        })
        .collect();
    let sigma = problem.sigma(&[0.0]);
    let sigma = sigma[(0, 0)];
    let mut op = Tridiagonal {
        lower: vec![0.0; n],
        diag: vec![0.0; n],
        upper: vec![0.0; n],
    };
    let (mut max_b, mut max_lambda) = (0.0f64, 0.0f64);
    let mut g = [0.0];
    let mut c = [0.0];
    for i in 0..n {
        problem.grad_expected_into(&x[i..=i], &mut g);
        problem.correction_drift_into(&x[i..=i], &mut c);
        let b = match cfg.drift {
            DriftModel::Modified => -(g[0] + eta * c[0]),
            DriftModel::FirstOrder => -g[0],
        };
        let psi = cutoff.psi(x[i].abs());
        let lambda = psi * psi * sigma;
        let diff = 0.5 * eta * lambda;
        max_b = max_b.max(b.abs());
        max_lambda = max_lambda.max(lambda);
        let (l, r) = if i == 0 || i + 1 == n {
            if diff != 0.0 {
                return Err(Error::config(
                    "pde.half_width",
                    format!("diffusion must vanish at the boundary x = {}", x[i]),
                ));
            }
            let inward = if i == 0 { b >= 0.0 } else { b <= 0.0 };
            if !inward {
                return Err(Error::config(
                    "pde.half_width",
                    format!("drift {b} points outward at the boundary x = {}", x[i]),
                ));
            }
            if i == 0 {
                (0.0, b / h)
            } else {
                (-b / h, 0.0)
            }
        } else if b.abs() * h <= 2.0 * diff {
            let a = b / (2.0 * h);
            let dd = diff / (h * h);
            (dd - a, dd + a)
        } else {
            let dd = diff / (h * h);
            if b > 0.0 {
                (dd, dd + b / h)
            } else {
                (dd - b / h, dd)
            }
        };
        op.lower[i] = l;
        op.upper[i] = r;
        op.diag[i] = -(l + r);
    }
    Ok((x, op, max_b, max_lambda))
}

/// Solves `(I − dt·Θ A) v = rhs` for diagonal `Θ` by the Thomas algorithm.
fn solve_implicit(
    op: &Tridiagonal,
    theta: &[f64],
    dt: f64,
    rhs: &[f64],
    out: &mut [f64],
    scratch: &mut [f64],
) {
    let n = rhs.len();
    let a = |i: usize| -dt * theta[i] * op.lower[i];
    let b = |i: usize| 1.0 - dt * theta[i] * op.diag[i];
    let c = |i: usize| -dt * theta[i] * op.upper[i];
    // Forward sweep: scratch holds modified upper coefficients.
    let mut denom = b(0);
    scratch[0] = c(0) / denom;
    out[0] = rhs[0] / denom;
    for i in 1..n {
        denom = b(i) - a(i) * scratch[i - 1];
        scratch[i] = c(i) / denom;
        out[i] = (rhs[i] - a(i) * out[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        out[i] -= scratch[i] * out[i + 1];
    }
}

/// Solves the backward Kolmogorov equation for `φ` on `[−B, B]`.
///
/// Crank–Nicolson is started with four implicit-Euler quarter steps to damp
/// the stiff diffusion modes.
pub fn solve_kolmogorov(
    problem: &ProblemSpec,
    cutoff: &CutoffSpec,
    eta: f64,
    phi: &Observable,
    cfg: &PdeConfig,
) -> Result<ScalarField> {
    if problem.dim != 1 {
        return Err(Error::config(
            "problem.d",
            "the PDE solver is one-dimensional",
        ));
    }
    if !(eta > 0.0) {
        return Err(Error::Argument(format!("eta must be positive, got {eta}")));
    }
    phi.check_dim(1)?;
    if !(cfg.half_width > cutoff.r_outer) {
        return Err(Error::config(
            "pde.half_width",
            format!("B = {} must exceed R2 = {}", cfg.half_width, cutoff.r_outer),
        ));
    }
    if cfg.n_x < 5 {
        return Err(Error::config("pde.n_x", "need at least 5 grid points"));
    }
    if !(cfg.dt > 0.0) || cfg.snapshot_every == 0 || !(cfg.t_end >= 0.0) {
        return Err(Error::config(
            "pde.dt",
            "dt, t_end and snapshot_every must be positive",
        ));
    }
    let h = cfg.spacing();
    let (x, op, max_b, max_lambda) = assemble(problem, cutoff, eta, cfg)?;
    if cfg.scheme == Scheme::Explicit {
        let max_diag = op.diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        if (max_lambda > 0.0 && cfg.dt > h * h / (eta * max_lambda))
            || (max_b > 0.0 && cfg.dt > h / max_b)
            || cfg.dt * max_diag > 1.0
        {
            return Err(Error::config(
                "pde.dt",
                format!(
                    "explicit scheme unstable: dt = {} exceeds min(h^2/(eta max Lambda), h/max|b|, 1/max|a_ii|) = {}",
                    cfg.dt,
                    (h * h / (eta * max_lambda)).min(h / max_b).min(1.0 / max_diag)
                ),
            ));
        }
    }

    let n = x.len();
    let mut u: Vec<f64> = x.iter().map(|&xi| phi.eval(problem, &[xi])).collect();
    let mut field = ScalarField {
        x,
        t: vec![0.0],
        values: vec![u.clone()],
    };
    let mut work = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let half = vec![0.5; n];
    let full = vec![1.0; n];
    let n_steps = cfg.n_steps();
    for step in 1..=n_steps {
        match cfg.scheme {
            Scheme::Explicit => {
                op.apply(&u, &mut work);
                for (ui, wi) in u.iter_mut().zip(&work) {
                    *ui += cfg.dt * wi;
                }
            }
            Scheme::CrankNicolson if step == 1 => {
                for _ in 0..4 {
                    rhs.copy_from_slice(&u);
                    solve_implicit(&op, &full, 0.25 * cfg.dt, &rhs, &mut u, &mut scratch);
                }
            }
            Scheme::CrankNicolson => {
                op.apply(&u, &mut work);
                for i in 0..n {
                    rhs[i] = u[i] + 0.5 * cfg.dt * work[i];
                }
                solve_implicit(&op, &half, cfg.dt, &rhs, &mut u, &mut scratch);
            }
        }
        if step % cfg.snapshot_every == 0 {
            field.t.push(step as f64 * cfg.dt);
            field.values.push(u.clone());
        }
    }
    Ok(field)
}

/// `∂^J u(·, t)` for `J ∈ {1, 2}` by central differences at the nodes with
/// `|x| ≤ r` (excluding the two outermost grid nodes).
pub fn u_derivative(field: &ScalarField, t: f64, order: u32, r: f64) -> Result<GridFunction> {
    let k = field.time_index(t)?;
    derivative_at(field, k, order, r)
}

fn derivative_at(field: &ScalarField, k: usize, order: u32, r: f64) -> Result<GridFunction> {
    let h = field.spacing();
    let u = &field.values[k];
    let n = u.len();
    let idx: Vec<usize> = (1..n - 1)
        .filter(|&i| field.x[i].abs() <= r + 1e-12)
        .collect();
    if idx.len() < 2 {
        return Err(Error::Argument(format!(
            "fewer than two interior nodes inside radius {r}"
        )));
    }
    let values = idx
        .iter()
        .map(|&i| match order {
            1 => Ok((u[i + 1] - u[i - 1]) / (2.0 * h)),
            2 => Ok((u[i + 1] - 2.0 * u[i] + u[i - 1]) / (h * h)),
            _ => Err(Error::Argument(format!(
                "derivative order must be 1 or 2, got {order}"
            ))),
        })
        .collect::<Result<Vec<f64>>>()?;
    let grid = Grid1D {
        lo: field.x[idx[0]],
        hi: field.x[*idx.last().unwrap()],
        n_points: idx.len(),
    };
    Ok(GridFunction { grid, values })
}

/// `(t_k, sup_{|x| ≤ r} |∂^J u(x, t_k)|)` over every snapshot.
pub fn derivative_sup_series(field: &ScalarField, order: u32, r: f64) -> Result<Vec<(f64, f64)>> {
    (0..field.t.len())
        .map(|k| Ok((field.t[k], derivative_at(field, k, order, r)?.sup_norm())))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub c: f64,
    pub gamma: f64,
    /// RMS residual of the log-linear fit.
    pub residual: f64,
    pub points_used: usize,
    /// True when a zero in the window cut the fit short.
    pub truncated: bool,
}

/// Fits `log y = log C − γ t` on the points with `t ≥ t_min`.
pub fn decay_fit(series: &[(f64, f64)], t_min: f64) -> Result<DecayFit> {
    let window: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|(t, _)| *t >= t_min)
        .collect();
    let prefix = window.iter().take_while(|(_, y)| *y > 0.0).count();
    let truncated = prefix < window.len();
    if prefix < 10 {
        return Err(Error::Argument(format!(
            "decay fit needs at least 10 positive points with t >= {t_min}, got {prefix}"
        )));
    }
    let (t, ly): (Vec<f64>, Vec<f64>) = window[..prefix].iter().map(|(t, y)| (*t, y.ln())).unzip();
    let fit = linear_fit(&t, &ly)?;
    Ok(DecayFit {
        c: fit.intercept.exp(),
        gamma: -fit.slope,
        residual: fit.residual,
        points_used: prefix,
        truncated,
    })
}
