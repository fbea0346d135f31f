//! Ensemble statistics with a schedule-independent reduction order.
//!
//! Trajectories are grouped into fixed blocks of consecutive indices. Each
//! block is accumulated sequentially, and block summaries are combined by a
//! pairwise tree over block index. The result is bit-identical regardless of
//! how many threads run the blocks.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

/// Trajectories per reduction block.
pub const BLOCK_SIZE: usize = 1024;

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimateWithError {
    pub value: f64,
    /// Sample standard deviation divided by the square root of `n_samples`.
    pub std_error: f64,
    pub n_samples: u64,
}

/// Running count, mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Chan et al. combination of two disjoint samples.
    pub fn merge(&self, other: &Moments) -> Moments {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let w = other.n as f64 / n as f64;
        Moments {
            n,
            mean: self.mean + delta * w,
            m2: self.m2 + other.m2 + delta * delta * self.n as f64 * w,
        }
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn estimate(&self) -> EstimateWithError {
        EstimateWithError {
            value: self.mean,
            std_error: (self.variance() / self.n.max(1) as f64).sqrt(),
            n_samples: self.n,
        }
    }
}

fn pairwise(parts: &[Vec<Moments>]) -> Vec<Moments> {
    match parts.len() {
        0 => Vec::new(),
        1 => parts[0].clone(),
        len => {
            let (left, right) = parts.split_at(len / 2);
            let (l, r) = (pairwise(left), pairwise(right));
            l.iter().zip(&r).map(|(a, b)| a.merge(b)).collect()
        }
    }
}

/// Runs `m` independent trajectories and reduces `width` observables per
/// trajectory. `simulate(index, out)` must fill `out` (length `width`) from
/// trajectory `index` only.
pub fn ensemble<F>(m: usize, width: usize, simulate: F) -> Vec<EstimateWithError>
where
    F: Fn(u64, &mut [f64]) + Sync,
{
    let n_blocks = m.div_ceil(BLOCK_SIZE);
    let blocks: Vec<Vec<Moments>> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![Moments::default(); width];
            let mut buf = vec![0.0; width];
            let end = ((b + 1) * BLOCK_SIZE).min(m);
            for i in b * BLOCK_SIZE..end {
                simulate(i as u64, &mut buf);
                for (a, v) in acc.iter_mut().zip(&buf) {
                    a.push(*v);
                }
            }
            acc
        })
        .collect();
    pairwise(&blocks).iter().map(Moments::estimate).collect()
}

/// Least-squares line `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Root-mean-square residual.
    pub residual: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Argument(format!(
            "linear fit needs two equally long series with at least 2 points, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Argument("linear fit abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - (slope * a + intercept);
            r * r
        })
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(LineFit {
        slope,
        intercept,
        r_squared,
        residual: (ss_res / n).sqrt(),
    })
}
