//! Gauss–Legendre and composite Simpson rules.

use std::f64::consts::PI;

/// Nodes and weights of the `order`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    let m = order.div_ceil(2);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (order as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(order, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, d) = legendre(order, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[order - 1 - i] = x;
        weights[i] = w;
        weights[order - 1 - i] = w;
    }
    (nodes, weights)
}

/// `P_n(x)` and its derivative by the three-term recurrence.
fn legendre(order: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=order {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let n = order as f64;
    (p1, n * (x * p1 - p0) / (x * x - 1.0))
}

/// Composite Simpson rule for samples on a uniform grid with an even
/// number of intervals.
pub fn simpson(samples: &[f64], h: f64) -> f64 {
    let intervals = samples.len() - 1;
    assert!(intervals >= 2 && intervals.is_multiple_of(2), "Simpson needs an even interval count");
    let interior: f64 = samples[1..intervals]
        .iter()
        .enumerate()
        .map(|(i, v)| if i % 2 == 0 { 4.0 * v } else { 2.0 * v })
        .sum();
    h / 3.0 * (samples[0] + interior + samples[intervals])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(10);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        // exact up to degree 19
        let int: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(18)).sum();
        assert!((int - 2.0 / 19.0).abs() < 1e-14);
    }

    #[test]
    fn simpson_cubic_exact() {
        let h = 0.125;
        let s: Vec<f64> = (0..=8).map(|i| (i as f64 * h).powi(3)).collect();
        assert!((simpson(&s, h) - 0.25).abs() < 1e-15);
    }
}
