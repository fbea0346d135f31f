//! Deterministic one-dimensional SGD expectations `Uⁿ = Sⁿφ`.
//!
//! The transfer operator `(Su)(x) = E u(x − η∇f(x; ξ))` is applied on a
//! uniform grid over `[−R, R]`: the expectation over `ξ` is a finite rule and
//! `u` is evaluated off-grid by local cubic interpolation. For steps below the
//! trapping bound every query stays in `[−R, R]`, so no boundary data is
//! needed. The operator is a fixed sparse matrix, assembled once per step size.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::interp::{cubic_eval, cubic_stencil};
use crate::observable::Observable;
use crate::output::fmt_f64;
use crate::problems::ProblemSpec;

/// Default Gauss–Legendre size for the uniform-angle law.
pub const DEFAULT_QUADRATURE_NODES: usize = 64;
/// Default number of grid points.
pub const DEFAULT_GRID_POINTS: usize = 4097;
const MIN_GRID_POINTS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Grid1D {
    pub lo: f64,
    pub hi: f64,
    pub n_points: usize,
}

impl Grid1D {
    pub fn new(lo: f64, hi: f64, n_points: usize) -> Result<Self> {
        if n_points < MIN_GRID_POINTS {
            return Err(Error::Argument(format!(
                "grid needs at least {MIN_GRID_POINTS} points, got {n_points}"
            )));
        }
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Argument(format!("empty grid interval [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi, n_points })
    }

    /// Grid over `[−r, r]`.
    pub fn symmetric(r: f64, n_points: usize) -> Result<Self> {
        Self::new(-r, r, n_points)
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n_points - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n_points {
            self.hi
        } else {
            self.lo + self.spacing() * i as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.node(i)).collect()
    }
}

/// Values of a function at the nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: Grid1D,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn sample(grid: Grid1D, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().into_iter().map(f).collect();
        Self { grid, values }
    }

    pub fn from_observable(problem: &ProblemSpec, phi: &Observable, grid: Grid1D) -> Self {
        Self::sample(grid, |x| phi.eval(problem, &[x]))
    }

    /// Cubic interpolation at `y` (extrapolates the end cubics outside).
    pub fn interpolate(&self, y: f64) -> f64 {
        cubic_eval(self.grid.lo, self.grid.spacing(), &self.values, y)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// CSV with columns `x,u`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,u")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{},{}", fmt_f64(self.grid.node(i)), fmt_f64(*v))?;
        }
        Ok(())
    }
}

/// `S` for a fixed problem, step size and grid, stored row by row as
/// `(stencil start, combined weights)` for every quadrature node.
#[derive(Debug, Clone)]
pub struct TransferOperator {
    grid: Grid1D,
    rows: Vec<Vec<(usize, [f64; 4])>>,
}

impl TransferOperator {
    pub fn new(problem: &ProblemSpec, grid: Grid1D, eta: f64, quad_nodes: usize) -> Result<Self> {
        if problem.dim != 1 {
            return Err(Error::Argument(
                "the grid semigroup solver is one-dimensional; use Monte Carlo for d > 1".into(),
            ));
        }
        if !(eta > 0.0) {
            return Err(Error::Argument(format!(
                "step size must be positive, got {eta}"
            )));
        }
        let rule = problem.xi_quadrature(quad_nodes);
        let h = grid.spacing();
        let slack = 1e-12 * (grid.hi - grid.lo);
        let mut rows = Vec::with_capacity(grid.n_points);
        let mut g = [0.0];
        for i in 0..grid.n_points {
            let x = grid.node(i);
            let mut row = Vec::with_capacity(rule.len());
            for (xi, w) in &rule {
                problem.grad_random_into(&[x], xi, &mut g);
                let y = x - eta * g[0];
                if y < grid.lo - slack || y > grid.hi + slack {
                    return Err(out_of_grid(problem, grid, eta, x, y));
                }
                let (start, mut weights) = cubic_stencil(grid.lo, h, grid.n_points, y);
                weights.iter_mut().for_each(|c| *c *= w);
                row.push((start, weights));
            }
            rows.push(row);
        }
        Ok(Self { grid, rows })
    }

    pub fn grid(&self) -> Grid1D {
        self.grid
    }

    /// One application `u ↦ Su`. Nodes are independent, so the parallel map
    /// equals the sequential result exactly.
    pub fn apply(&self, u: &GridFunction) -> Result<GridFunction> {
        if u.grid != self.grid {
            return Err(Error::Argument(
                "grid function lives on a different grid".into(),
            ));
        }
        let v = &u.values;
        let values = self
            .rows
            .par_iter()
            .map(|row| {
                row.iter()
                    .map(|(s, w)| {
                        w[0] * v[*s] + w[1] * v[s + 1] + w[2] * v[s + 2] + w[3] * v[s + 3]
                    })
                    .sum()
            })
            .collect();
        Ok(GridFunction {
            grid: self.grid,
            values,
        })
    }
}

fn out_of_grid(problem: &ProblemSpec, grid: Grid1D, eta: f64, x: f64, y: f64) -> Error {
    let bound = if grid.lo == -grid.hi {
        problem
            .constants(grid.hi)
            .map(|c| {
                format!(
                    "; the trapping bound for R = {} is eta0 = {}",
                    grid.hi, c.eta0
                )
            })
            .unwrap_or_default()
    } else {
        String::new()
    };
    Error::Domain(format!(
        "step eta = {eta} maps node {x} to {y}, outside the grid [{}, {}]{bound}",
        grid.lo, grid.hi
    ))
}

/// `Su` with the default quadrature.
pub fn apply_s(problem: &ProblemSpec, u: &GridFunction, eta: f64) -> Result<GridFunction> {
    TransferOperator::new(problem, u.grid, eta, DEFAULT_QUADRATURE_NODES)?.apply(u)
}

/// `Sⁿφ` on `grid`.
pub fn iterate_s(
    problem: &ProblemSpec,
    phi: &Observable,
    grid: Grid1D,
    eta: f64,
    n: usize,
) -> Result<GridFunction> {
    let mut u = GridFunction::from_observable(problem, phi, grid);
    if n == 0 {
        return Ok(u);
    }
    let op = TransferOperator::new(problem, grid, eta, DEFAULT_QUADRATURE_NODES)?;
    for _ in 0..n {
        u = op.apply(&u)?;
    }
    Ok(u)
}

/// `Uⁿ(p)` for every `n ≤ n_steps` and probe `p`; row `n` holds the probes.
pub fn probe_series(
    op: &TransferOperator,
    problem: &ProblemSpec,
    phi: &Observable,
    n_steps: usize,
    probes: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let mut u = GridFunction::from_observable(problem, phi, op.grid());
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(probes.iter().map(|p| u.interpolate(*p)).collect());
    for _ in 0..n_steps {
        u = op.apply(&u)?;
        out.push(probes.iter().map(|p| u.interpolate(*p)).collect());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_endpoints_are_exact() {
        let g = Grid1D::symmetric(2.0, 4097).unwrap();
        assert_eq!(g.node(0), -2.0);
        assert_eq!(g.node(4096), 2.0);
        assert!(Grid1D::symmetric(1.0, 8).is_err());
    }

    #[test]
    fn constants_are_preserved() {
        let p = ProblemSpec::trig(1.0, 2.0).unwrap();
        let g = Grid1D::symmetric(6.0, 513).unwrap();
        let u = GridFunction::sample(g, |_| 3.25);
        let su = apply_s(&p, &u, 0.1).unwrap();
        assert!(su.values.iter().all(|v| (v - 3.25).abs() < 1e-13));
    }

    #[test]
    fn linear_is_exact_for_quadratic() {
        let p = ProblemSpec::quadratic(1, 1.0, 0.5).unwrap();
        let g = Grid1D::symmetric(2.0, 4097).unwrap();
        let su = apply_s(&p, &GridFunction::sample(g, |x| x), 0.1).unwrap();
        assert!((su.interpolate(1.0) - 0.9).abs() < 1e-10);
        let un = iterate_s(&p, &Observable::Coordinate(0), g, 0.1, 25).unwrap();
        let f = 0.9f64.powi(25);
        for (i, v) in un.values.iter().enumerate() {
            assert!((v - f * g.node(i)).abs() < 1e-9);
        }
    }

    #[test]
    fn second_moment_matches_recursion() {
        let p = ProblemSpec::quadratic(1, 1.0, 1.0).unwrap();
        let g = Grid1D::symmetric(2.0, 4097).unwrap();
        let un = iterate_s(&p, &Observable::SquaredNorm, g, 0.1, 10).unwrap();
        // Oracle: m_{k+1} = (1 − ημ)² m_k + η² s².
        let mut m = 1.0;
        for _ in 0..10 {
            m = 0.81 * m + 0.01;
        }
        assert!((un.interpolate(1.0) - m).abs() < 1e-6);
        assert!((m - 0.167810).abs() < 1e-6);
    }

    #[test]
    fn zero_steps_returns_phi() {
        let p = ProblemSpec::trig(1.0, 2.0).unwrap();
        let g = Grid1D::symmetric(6.0, 101).unwrap();
        let u = iterate_s(&p, &Observable::ExpectedLoss, g, 0.1, 0).unwrap();
        assert_eq!(
            u,
            GridFunction::from_observable(&p, &Observable::ExpectedLoss, g)
        );
    }

    #[test]
    fn leaving_the_grid_is_a_domain_error() {
        let p = ProblemSpec::trig(1.0, 2.0).unwrap();
        let g = Grid1D::symmetric(6.0, 257).unwrap();
        let err = TransferOperator::new(&p, g, 2.5, 16).unwrap_err();
        assert!(matches!(err, Error::Domain(_)), "{err}");
    }

    #[test]
    fn sup_norm_never_grows() {
        let p = ProblemSpec::trig(1.0, 2.0).unwrap();
        let g = Grid1D::symmetric(6.0, 1025).unwrap();
        let op = TransferOperator::new(&p, g, 0.2, 64).unwrap();
        let mut u = GridFunction::from_observable(
            &p,
            &Observable::Polynomial(vec![0.0, 1.0, 0.0, -0.1]),
            g,
        );
        let mut prev = u.sup_norm();
        for _ in 0..50 {
            u = op.apply(&u).unwrap();
            let s = u.sup_norm();
            assert!(s <= prev * (1.0 + 1e-12));
            prev = s;
        }
    }

    #[test]
    fn quadrature_cross_check_64_vs_128() {
        let p = ProblemSpec::trig(1.0, 2.0).unwrap();
        let g = Grid1D::symmetric(6.0, 1025).unwrap();
        let u = GridFunction::from_observable(
            &p,
            &Observable::Polynomial(vec![0.0, 0.0, 0.0, 0.0, 1.0]),
            g,
        );
        let a = TransferOperator::new(&p, g, 0.1, 64)
            .unwrap()
            .apply(&u)
            .unwrap();
        let b = TransferOperator::new(&p, g, 0.1, 128)
            .unwrap()
            .apply(&u)
            .unwrap();
        let diff = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-10 * u.sup_norm(), "{diff}");
    }

    #[test]
    fn csv_has_header_and_rows() {
        let g = Grid1D::symmetric(1.0, 16).unwrap();
        let u = GridFunction::sample(g, |x| 2.0 * x);
        let mut buf = Vec::new();
        u.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 17);
        assert!(text.starts_with("x,u\n"));
    }
}
