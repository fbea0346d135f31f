//! Random-loss families `f(x; ξ)` with analytic gradients.
//!
//! Every built-in family has a bounded noise law whose expectation can be
//! taken exactly by a finite rule, so the expected gradient, the gradient
//! covariance and the semigroup operator need no sampling.
//!
//! | family        | sample loss                      | noise law                  |
//! |---------------|----------------------------------|----------------------------|
//! | `quadratic`   | `μ/2 |x|² + ξ·x`                 | `ξ_i = ±s` independently   |
//! | `trig` (1-D)  | `μ/2 x² + s sin(x + θ)`          | `θ ~ U[0, 2π)`             |
//! | `double_well` | `(x² − 1)²/4 + ξ x`              | `ξ = ±s`                   |

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Quadratic,
    Trig,
    DoubleWell,
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(Family::Quadratic),
            "trig" => Ok(Family::Trig),
            "double_well" => Ok(Family::DoubleWell),
            other => Err(Error::config(
                "problem.family",
                format!("unknown family `{other}` (expected quadratic, trig or double_well)"),
            )),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Quadratic => "quadratic",
            Family::Trig => "trig",
            Family::DoubleWell => "double_well",
        })
    }
}

/// A random-loss family together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub family: Family,
    pub dim: usize,
    /// Strong-convexity modulus of the expected loss (unused by `double_well`).
    pub mu: f64,
    /// Noise amplitude `s`.
    pub noise_scale: f64,
}

/// Confinement and step-size constants for a trapping radius `R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProblemConstants {
    pub nu: f64,
    #[serde(rename = "L")]
    pub confinement_radius: f64,
    /// Supremum of `|∇f(x; ξ)|` over `|x| ≤ L` and all `ξ`.
    #[serde(rename = "M1")]
    pub grad_bound_inner: f64,
    /// Supremum of `|∇f(x; ξ)|` over `|x| ≤ R` and all `ξ`.
    #[serde(rename = "M2")]
    pub grad_bound_outer: f64,
    pub eta0: f64,
}

const DOUBLE_WELL_NU: f64 = 0.25;
const ROOT_TOL: f64 = 1e-10;

impl ProblemSpec {
    pub fn new(family: Family, dim: usize, mu: f64, noise_scale: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("problem.d", "dimension must be positive"));
        }
        if family != Family::Quadratic && dim != 1 {
            return Err(Error::config(
                "problem.d",
                format!("family {family} is one-dimensional, got d = {dim}"),
            ));
        }
        if family != Family::DoubleWell && !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::config(
                "problem.mu",
                "mu must be positive and finite",
            ));
        }
        if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
            return Err(Error::config(
                "problem.s",
                "noise scale must be nonnegative",
            ));
        }
        Ok(Self {
            family,
            dim,
            mu,
            noise_scale,
        })
    }

    pub fn quadratic(dim: usize, mu: f64, s: f64) -> Result<Self> {
        Self::new(Family::Quadratic, dim, mu, s)
    }

    pub fn trig(mu: f64, s: f64) -> Result<Self> {
        Self::new(Family::Trig, 1, mu, s)
    }

    pub fn double_well(s: f64) -> Result<Self> {
        Self::new(Family::DoubleWell, 1, 1.0, s)
    }

    /// Whether the expected loss is `μ`-strongly convex on the whole space.
    pub fn is_strongly_convex(&self) -> bool {
        self.family != Family::DoubleWell
    }

    /// Length of a noise sample `ξ`.
    pub fn noise_dim(&self) -> usize {
        match self.family {
            Family::Quadratic => self.dim,
            Family::Trig | Family::DoubleWell => 1,
        }
    }

    /// Draws `ξ` from its law (inverse CDF for the uniform angle).
    #[inline]
    pub fn sample_xi(&self, rng: &mut StreamRng, xi: &mut [f64]) {
        let s = self.noise_scale;
        match self.family {
            Family::Quadratic | Family::DoubleWell => {
                for v in xi.iter_mut() {
                    *v = if rng::coin(rng) { s } else { -s };
                }
            }
            Family::Trig => xi[0] = TAU * rng::uniform_open(rng),
        }
    }

    /// Exact (finite-support laws) or Gauss–Legendre (uniform angle, `nodes`
    /// points) rule for expectations over `ξ`. Weights sum to one.
    pub fn xi_quadrature(&self, nodes: usize) -> Vec<(Vec<f64>, f64)> {
        let s = self.noise_scale;
        match self.family {
            Family::Quadratic | Family::DoubleWell => {
                let k = self.noise_dim();
                let w = 0.5f64.powi(k as i32);
                (0..1usize << k)
                    .map(|mask| {
                        let xi = (0..k)
                            .map(|j| if mask >> j & 1 == 1 { s } else { -s })
                            .collect();
                        (xi, w)
                    })
                    .collect()
            }
            Family::Trig => gauss_legendre(nodes, 0.0, TAU)
                .into_iter()
                .map(|(theta, w)| (vec![theta], w / TAU))
                .collect(),
        }
    }

    #[inline]
    pub fn grad_random_into(&self, x: &[f64], xi: &[f64], out: &mut [f64]) {
        match self.family {
            Family::Quadratic => {
                for ((o, xv), e) in out.iter_mut().zip(x).zip(xi) {
                    *o = self.mu * xv + e;
                }
            }
            Family::Trig => out[0] = self.mu * x[0] + self.noise_scale * (x[0] + xi[0]).cos(),
            Family::DoubleWell => out[0] = x[0] * x[0] * x[0] - x[0] + xi[0],
        }
    }

    /// Gradient of the sample loss `f(·; ξ)` at `x`.
    pub fn grad_random(&self, x: &[f64], xi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.grad_random_into(x, xi, &mut out);
        out
    }

    #[inline]
    pub fn grad_expected_into(&self, x: &[f64], out: &mut [f64]) {
        match self.family {
            Family::Quadratic | Family::Trig => {
                for (o, xv) in out.iter_mut().zip(x) {
                    *o = self.mu * xv;
                }
            }
            Family::DoubleWell => out[0] = x[0] * x[0] * x[0] - x[0],
        }
    }

    /// Gradient of the expected loss.
    pub fn grad_expected(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.grad_expected_into(x, &mut out);
        out
    }

    /// `¼ ∇|∇f|²`, i.e. `½ ∇²f ∇f`.
    #[inline]
    pub fn correction_drift_into(&self, x: &[f64], out: &mut [f64]) {
        match self.family {
            Family::Quadratic | Family::Trig => {
                let c = 0.5 * self.mu * self.mu;
                for (o, xv) in out.iter_mut().zip(x) {
                    *o = c * xv;
                }
            }
            Family::DoubleWell => {
                let y = x[0];
                out[0] = 0.5 * (3.0 * y * y - 1.0) * (y * y * y - y);
            }
        }
    }

    pub fn correction_drift(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.correction_drift_into(x, &mut out);
        out
    }

    /// Expected loss `f(x)`, dropping additive constants.
    pub fn expected_loss(&self, x: &[f64]) -> f64 {
        match self.family {
            Family::Quadratic | Family::Trig => {
                0.5 * self.mu * x.iter().map(|v| v * v).sum::<f64>()
            }
            Family::DoubleWell => {
                let y = x[0] * x[0] - 1.0;
                0.25 * y * y
            }
        }
    }

    /// Per-coordinate gradient-noise variance when `Σ = σ² I` and the
    /// expected gradient is `μ x` (the families with closed-form moments).
    pub fn isotropic_noise_variance(&self) -> Option<f64> {
        let s2 = self.noise_scale * self.noise_scale;
        match self.family {
            Family::Quadratic => Some(s2),
            Family::Trig => Some(0.5 * s2),
            Family::DoubleWell => None,
        }
    }

    /// Covariance `Σ(x)` of the stochastic gradient.
    pub fn sigma(&self, _x: &[f64]) -> DMatrix<f64> {
        let s2 = self.noise_scale * self.noise_scale;
        let v = match self.family {
            Family::Quadratic | Family::DoubleWell => s2,
            Family::Trig => 0.5 * s2,
        };
        DMatrix::from_diagonal_element(self.dim, self.dim, v)
    }

    /// Unbiased sample covariance of `∇f(x; ξ)` over `m` draws.
    pub fn sigma_mc(&self, x: &[f64], m: usize, seed: u64) -> Result<DMatrix<f64>> {
        if m < 2 {
            return Err(Error::Argument(format!("sigma_mc needs m >= 2, got {m}")));
        }
        let d = self.dim;
        let mut rng = rng::stream(seed, 0);
        let mut xi = vec![0.0; self.noise_dim()];
        let mut draws = Vec::with_capacity(m * d);
        let mut g = vec![0.0; d];
        for _ in 0..m {
            self.sample_xi(&mut rng, &mut xi);
            self.grad_random_into(x, &xi, &mut g);
            draws.extend_from_slice(&g);
        }
        let mut mean = vec![0.0; d];
        for row in draws.chunks_exact(d) {
            for (a, v) in mean.iter_mut().zip(row) {
                *a += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= m as f64);
        let mut cov = DMatrix::zeros(d, d);
        for row in draws.chunks_exact(d) {
            for i in 0..d {
                let di = row[i] - mean[i];
                for j in 0..d {
                    cov[(i, j)] += di * (row[j] - mean[j]);
                }
            }
        }
        cov /= (m - 1) as f64;
        Ok((&cov + cov.transpose()) * 0.5)
    }

    /// `sup_{|x| ≤ r, ξ} |∇f(x; ξ)|` in closed form.
    pub fn grad_bound(&self, r: f64) -> f64 {
        let s = self.noise_scale;
        match self.family {
            Family::Quadratic => self.mu * r + s * (self.dim as f64).sqrt(),
            Family::Trig => self.mu * r + s,
            Family::DoubleWell => {
                let critical = 1.0 / 3f64.sqrt();
                let interior = if r >= critical {
                    critical - critical.powi(3)
                } else {
                    r - r.powi(3)
                };
                interior.max(r.powi(3) - r) + s
            }
        }
    }

    /// `(ν, L)` with `x·∇f(x; ξ) ≥ ν|x|²` for all `|x| ≥ L` and all `ξ`.
    /// `L` is zero when the bound holds everywhere.
    pub fn confinement(&self) -> (f64, f64) {
        let s = self.noise_scale;
        match self.family {
            Family::Quadratic => (0.5 * self.mu, 2.0 * s * (self.dim as f64).sqrt() / self.mu),
            Family::Trig => (0.5 * self.mu, 2.0 * s / self.mu),
            Family::DoubleWell => (DOUBLE_WELL_NU, double_well_radius(s, DOUBLE_WELL_NU)),
        }
    }

    /// Trapping constants for radius `r`; `η₀ = min{(R−L)/M₁, 2νL²/M₂²}`.
    ///
    /// When the confinement holds on the whole space (`s = 0` for the convex
    /// families) any `L ∈ (0, R)` is admissible and `L = R/2` is used.
    pub fn constants(&self, r: f64) -> Result<ProblemConstants> {
        let (nu, l_min) = self.confinement();
        if !(r > l_min) || !r.is_finite() {
            return Err(Error::Domain(format!(
                "trapping radius R = {r} must exceed the confinement radius L = {l_min}"
            )));
        }
        let l = if l_min > 0.0 { l_min } else { 0.5 * r };
        let m1 = self.grad_bound(l);
        let m2 = self.grad_bound(r);
        let eta0 = ((r - l) / m1).min(2.0 * nu * l * l / (m2 * m2));
        Ok(ProblemConstants {
            nu,
            confinement_radius: l,
            grad_bound_inner: m1,
            grad_bound_outer: m2,
            eta0,
        })
    }
}

/// Smallest `r > 0` beyond which `r³ − (1 + ν) r − s ≥ 0`, by bisection.
/// The upper end of the final bracket is returned so the bound is safe.
fn double_well_radius(s: f64, nu: f64) -> f64 {
    let p = |r: f64| r * r * r - (1.0 + nu) * r - s;
    // p decreases on (0, r_c) and increases afterwards, with p(r_c) < 0.
    let mut lo = ((1.0 + nu) / 3.0).sqrt();
    let mut hi = 1.0 + (1.0 + nu).max(s);
    while hi - lo > ROOT_TOL {
        let mid = 0.5 * (lo + hi);
        if p(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}
