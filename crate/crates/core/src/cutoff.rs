//! Compactly supported diffusion coefficient `Λ = ψ(|x|)² Σ(x)`.
//!
//! `ψ` is the `exp(−1/t)` partition-of-unity bridge: exactly 1 on `[0, R]`,
//! exactly 0 on `[R₂, ∞)`, smooth and nonincreasing in between.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::ProblemSpec;

/// Eigenvalues of `Σ` below this are reported as a PSD violation.
pub const PSD_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    /// Radius inside which `Λ = Σ`.
    pub r_inner: f64,
    /// Radius outside which `Λ = 0`.
    pub r_outer: f64,
}

impl CutoffSpec {
    pub fn new(r_inner: f64, r_outer: f64) -> Result<Self> {
        if !(r_inner > 0.0 && r_inner.is_finite()) {
            return Err(Error::config("cutoff.R", "R must be positive and finite"));
        }
        if !(r_outer > r_inner && r_outer.is_finite()) {
            return Err(Error::config(
                "cutoff.R2",
                format!("R2 = {r_outer} must be strictly larger than R = {r_inner}"),
            ));
        }
        Ok(Self { r_inner, r_outer })
    }

    /// Cutoff with the default outer radius `R₂ = 2R`.
    pub fn with_default_outer(r_inner: f64) -> Result<Self> {
        Self::new(r_inner, 2.0 * r_inner)
    }

    pub fn psi(&self, r: f64) -> f64 {
        if r <= self.r_inner {
            return 1.0;
        }
        if r >= self.r_outer {
            return 0.0;
        }
        let tau = (r - self.r_inner) / (self.r_outer - self.r_inner);
        let a = bump(1.0 - tau);
        let b = bump(tau);
        a / (a + b)
    }

    /// `Λ(x) = ψ(|x|)² Σ(x)`.
    pub fn lambda_at(&self, problem: &ProblemSpec, x: &[f64]) -> DMatrix<f64> {
        let p = self.psi(norm(x));
        let sigma = problem.sigma(x);
        if p == 1.0 {
            sigma
        } else {
            sigma * (p * p)
        }
    }

    /// `ψ(|x|) Σ(x)^{1/2}` with the symmetric PSD square root.
    pub fn sqrt_lambda(&self, problem: &ProblemSpec, x: &[f64]) -> Result<DMatrix<f64>> {
        let p = self.psi(norm(x));
        let root = psd_sqrt(&problem.sigma(x))?;
        Ok(root * p)
    }
}

#[inline]
fn bump(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

#[inline]
pub(crate) fn norm(x: &[f64]) -> f64 {
    if x.len() == 1 {
        x[0].abs()
    } else {
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Symmetric PSD square root by spectral decomposition (scalar root in 1-D).
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() == 1 {
        let v = m[(0, 0)];
        if v < -PSD_TOLERANCE {
            return Err(Error::NotPsd { min_eigenvalue: v });
        }
        return Ok(DMatrix::from_element(1, 1, v.max(0.0).sqrt()));
    }
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.min();
    if min < -PSD_TOLERANCE {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
        });
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}
