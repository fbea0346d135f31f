//! Test functions `φ` whose expectations are tracked.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::ProblemSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    /// `x_i`.
    Coordinate(usize),
    /// `|x|²`.
    SquaredNorm,
    /// The family's expected loss `f(x)`.
    ExpectedLoss,
    /// `Σ_k c_k x_0^k` in the first coordinate.
    Polynomial(Vec<f64>),
}

impl Observable {
    #[inline]
    pub fn eval(&self, problem: &ProblemSpec, x: &[f64]) -> f64 {
        match self {
            Observable::Coordinate(i) => x[*i],
            Observable::SquaredNorm => x.iter().map(|v| v * v).sum(),
            Observable::ExpectedLoss => problem.expected_loss(x),
            Observable::Polynomial(c) => c.iter().rev().fold(0.0, |acc, ck| acc * x[0] + ck),
        }
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        match self {
            Observable::Coordinate(i) if *i >= dim => Err(Error::config(
                "numerics.phi",
                format!("coordinate index {i} out of range for d = {dim}"),
            )),
            Observable::Polynomial(c) if c.is_empty() => Err(Error::config(
                "numerics.phi",
                "polynomial needs at least one coefficient",
            )),
            _ => Ok(()),
        }
    }
}

impl FromStr for Observable {
    type Err = Error;

    /// `coordinate[:i]`, `squared_norm`, `expected_loss` or
    /// `polynomial:c0,c1,...`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: String| Error::config("numerics.phi", msg);
        let (head, tail) = match s.split_once(':') {
            Some((h, t)) => (h.trim(), Some(t.trim())),
            None => (s.trim(), None),
        };
        match (head, tail) {
            ("coordinate", None) => Ok(Observable::Coordinate(0)),
            ("coordinate", Some(i)) => i
                .parse()
                .map(Observable::Coordinate)
                .map_err(|_| bad(format!("bad coordinate index `{i}`"))),
            ("squared_norm", None) => Ok(Observable::SquaredNorm),
            ("expected_loss", None) => Ok(Observable::ExpectedLoss),
            ("polynomial", Some(list)) => list
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Observable::Polynomial)
                .map_err(|_| bad(format!("bad polynomial coefficients `{list}`"))),
            _ => Err(bad(format!("unknown observable `{s}`"))),
        }
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observable::Coordinate(i) => write!(f, "coordinate:{i}"),
            Observable::SquaredNorm => f.write_str("squared_norm"),
            Observable::ExpectedLoss => f.write_str("expected_loss"),
            Observable::Polynomial(c) => {
                let parts: Vec<String> = c.iter().map(|v| v.to_string()).collect();
                write!(f, "polynomial:{}", parts.join(","))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_eval() {
        let p = ProblemSpec::quadratic(2, 2.0, 0.1).unwrap();
        let x = [1.0, -2.0];
        assert_eq!(
            "coordinate:1".parse::<Observable>().unwrap().eval(&p, &x),
            -2.0
        );
        assert_eq!(
            "squared_norm".parse::<Observable>().unwrap().eval(&p, &x),
            5.0
        );
        assert_eq!(
            "expected_loss".parse::<Observable>().unwrap().eval(&p, &x),
            5.0
        );
        let poly: Observable = "polynomial:1, 0, 3".parse().unwrap();
        assert_eq!(poly.eval(&p, &x), 4.0);
        assert_eq!(poly.to_string().parse::<Observable>().unwrap(), poly);
        assert!("cube".parse::<Observable>().is_err());
        assert!(Observable::Coordinate(2).check_dim(2).is_err());
    }
}
