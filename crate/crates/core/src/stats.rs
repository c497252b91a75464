//! Small statistics helpers for the studies.

use crate::linalg::sorted_copy;

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (sorted_copy(a), sorted_copy(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic p-value from the Kolmogorov distribution.
pub fn ks_p_value(d: f64, n: usize, m: usize) -> f64 {
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-1f64).powi(k - 1) * (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
        s += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    s.clamp(0.0, 1.0)
}

/// Asymptotic two-sample critical value at level 0.01.
pub fn ks_critical_01(n: usize, m: usize) -> f64 {
    1.628 * (((n + m) as f64) / (n * m) as f64).sqrt()
}

/// Least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 || x.len() != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Standard deviation with divisor `n - 1`.
pub fn sd(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Empirical CDF of `x` at each grid point.
pub fn ecdf(x: &[f64], grid: &[f64]) -> Vec<f64> {
    let s = sorted_copy(x);
    grid.iter()
        .map(|&g| s.partition_point(|&v| v <= g) as f64 / s.len() as f64)
        .collect()
}

/// `k` equally spaced points spanning the pooled range of two samples.
pub fn pooled_grid(a: &[f64], b: &[f64], k: usize) -> Vec<f64> {
    let lo = a.iter().chain(b).cloned().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).cloned().fold(f64::NEG_INFINITY, f64::max);
    if k < 2 || !(hi > lo) {
        return vec![lo];
    }
    (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_known_values() {
        assert_eq!(ks_statistic(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(ks_statistic(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
        // F_a jumps to 1/2 at 1, F_b is 0 until 1.5
        assert!((ks_statistic(&[1.0, 2.0], &[1.5, 2.5]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ks_ties_are_grouped() {
        assert_eq!(ks_statistic(&[0.0, 0.0, 1.0], &[0.0, 1.0, 1.0]), 1.0 / 3.0);
    }

    #[test]
    fn kolmogorov_tail() {
        // P(K > 1.628) is about 0.01
        let ne = 1e8 as usize;
        let d = 1.628 / (ne as f64 / 2.0).sqrt();
        let p = ks_p_value(d, ne, ne);
        assert!((p - 0.01).abs() < 5e-4, "{p}");
        assert_eq!(ks_p_value(0.0, 10, 10), 1.0);
    }

    #[test]
    fn slope_of_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| -0.5 * v + 3.0).collect();
        assert!((ols_slope(&x, &y).unwrap() + 0.5).abs() < 1e-14);
        assert!(ols_slope(&[1.0, 1.0], &[0.0, 1.0]).is_none());
    }

    #[test]
    fn ecdf_steps() {
        assert_eq!(ecdf(&[1.0, 2.0, 2.0, 3.0], &[0.0, 2.0, 2.5, 3.0]), vec![0.0, 0.75, 0.75, 1.0]);
    }
}
