//! Gauss–Legendre rules.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    assert!(n >= 1, "Gauss–Legendre rule needs at least one node");
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut rule = vec![(0.0, 0.0); n];
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, then Newton on P_n.
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let step = p / d;
            z -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        rule[i] = (mid - half * z, half * w);
        rule[n - 1 - i] = (mid + half * z, half * w);
    }
    rule
}

/// P_n(z) and P_n'(z) by the three-term recurrence.
fn legendre(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        let rule = gauss_legendre(8, -1.0, 2.0);
        let w: f64 = rule.iter().map(|(_, w)| w).sum();
        assert!((w - 3.0).abs() < 1e-14);
        // x^15 has antiderivative x^16/16.
        let i: f64 = rule.iter().map(|(x, w)| w * x.powi(15)).sum();
        let exact = (2f64.powi(16) - 1.0) / 16.0;
        assert!((i - exact).abs() < 1e-10 * exact);
    }

    #[test]
    fn cosine_squared_average() {
        let rule = gauss_legendre(64, 0.0, std::f64::consts::TAU);
        let avg: f64 = rule
            .iter()
            .map(|(t, w)| w * (0.3 + t).cos().powi(2))
            .sum::<f64>()
            / std::f64::consts::TAU;
        assert!((avg - 0.5).abs() < 1e-14);
    }
}
