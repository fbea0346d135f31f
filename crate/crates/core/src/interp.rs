//! Local four-point Lagrange interpolation on uniform grids.

/// Stencil start and weights for evaluating at `y` on the grid
/// `lo + i h`, `i = 0..n`. Near the ends the stencil is shifted inward, so
/// the rule is exact for cubics everywhere in `[lo, lo + (n − 1) h]`.
#[inline]
pub fn cubic_stencil(lo: f64, h: f64, n: usize, y: f64) -> (usize, [f64; 4]) {
    debug_assert!(n >= 4);
    let s = (y - lo) / h;
    let start = (s.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
    let t = s - start as f64;
    let (t1, t2, t3) = (t - 1.0, t - 2.0, t - 3.0);
    let w = [
        -t1 * t2 * t3 / 6.0,
        t * t2 * t3 / 2.0,
        -t * t1 * t3 / 2.0,
        t * t1 * t2 / 6.0,
    ];
    (start, w)
}

#[inline]
pub fn cubic_eval(lo: f64, h: f64, values: &[f64], y: f64) -> f64 {
    let (i, w) = cubic_stencil(lo, h, values.len(), y);
    w[0] * values[i] + w[1] * values[i + 1] + w[2] * values[i + 2] + w[3] * values[i + 3]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_cubics() {
        let (lo, h, n) = (-1.0, 0.1, 21);
        let f = |x: f64| 2.0 - x + 0.5 * x * x - 3.0 * x * x * x;
        let v: Vec<f64> = (0..n).map(|i| f(lo + h * i as f64)).collect();
        for &y in &[-1.0, -0.97, -0.5, 0.033, 0.95, 1.0] {
            assert!((cubic_eval(lo, h, &v, y) - f(y)).abs() < 1e-13);
        }
    }

    #[test]
    fn fourth_order_convergence() {
        let err = |n: usize| {
            let h = 2.0 / (n - 1) as f64;
            let v: Vec<f64> = (0..n).map(|i| (-1.0 + h * i as f64).sin()).collect();
            (0..200)
                .map(|k| {
                    let y = -1.0 + 2.0 * (k as f64 + 0.31) / 200.0;
                    (cubic_eval(-1.0, h, &v, y) - y.sin()).abs()
                })
                .fold(0.0, f64::max)
        };
        let ratio = err(33) / err(65);
        assert!(ratio > 12.0 && ratio < 20.0, "{ratio}");
    }
}
