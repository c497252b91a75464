//! Small dense helpers. Heavy lifting (SVD, symmetric eigen) goes through nalgebra.

use nalgebra::{DMatrix, DVector};

/// Singular values below this fraction of the largest are treated as zero.
pub const PINV_RTOL: f64 = 1e-10;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalized(a: &[f64]) -> Option<Vec<f64>> {
    let r = norm(a);
    if r > 0.0 && r.is_finite() {
        Some(a.iter().map(|v| v / r).collect())
    } else {
        None
    }
}

/// Least squares through a thresholded SVD.
pub struct LeastSquares {
    pub coef: Vec<f64>,
    /// Squared norm of the fitted values, i.e. `y' H y`.
    pub fitted_ss: f64,
    pub rank: usize,
}

pub fn least_squares(a: &DMatrix<f64>, y: &DVector<f64>) -> LeastSquares {
    let cols = a.ncols();
    if a.nrows() == 0 {
        return LeastSquares {
            coef: vec![0.0; cols],
            fitted_ss: 0.0,
            rank: 0,
        };
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let mut coef = DVector::zeros(cols);
    let mut fitted_ss = 0.0;
    let mut rank = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if smax == 0.0 || s <= PINV_RTOL * smax {
            continue;
        }
        rank += 1;
        let uy = u.column(i).dot(y);
        fitted_ss += uy * uy;
        coef += vt.row(i).transpose() * (uy / s);
    }
    LeastSquares {
        coef: coef.iter().cloned().collect(),
        fitted_ss,
        rank,
    }
}

/// Computes `b' A^{-1} b` for a symmetric `d x d` matrix stored row-major, by
/// Cholesky. Returns `None` when a pivot falls below `rtol * max diag`.
/// `work` must hold at least `d * d + d` values.
pub fn chol_quad_form(a: &[f64], b: &[f64], d: usize, rtol: f64, work: &mut [f64]) -> Option<f64> {
    let (l, z) = work[..d * d + d].split_at_mut(d * d);
    let maxdiag = (0..d).map(|i| a[i * d + i]).fold(0.0, f64::max);
    if maxdiag <= 0.0 {
        return None;
    }
    let tol = rtol * maxdiag;
    for j in 0..d {
        let mut s = a[j * d + j];
        for k in 0..j {
            s -= l[j * d + k] * l[j * d + k];
        }
        if s <= tol {
            return None;
        }
        let ljj = s.sqrt();
        l[j * d + j] = ljj;
        for i in (j + 1)..d {
            let mut t = a[i * d + j];
            for k in 0..j {
                t -= l[i * d + k] * l[j * d + k];
            }
            l[i * d + j] = t / ljj;
        }
    }
    let mut acc = 0.0;
    for i in 0..d {
        let mut t = b[i];
        for k in 0..i {
            t -= l[i * d + k] * z[k];
        }
        z[i] = t / l[i * d + i];
        acc += z[i] * z[i];
    }
    Some(acc)
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Lower-triangular factor `L` with `L L' = sigma`. Falls back to a symmetric
/// square root when the matrix is only semidefinite.
pub fn sym_factor(sigma: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if let Some(ch) = sigma.clone().cholesky() {
        return Some(ch.l());
    }
    let eig = sigma.clone().symmetric_eigen();
    let scale = eig.eigenvalues.iter().cloned().fold(0.0, f64::max).max(0.0);
    if eig.eigenvalues.iter().any(|&l| l < -1e-10 * scale.max(1e-300)) {
        return None;
    }
    let sq = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()),
    );
    Some(&eig.eigenvectors * DMatrix::from_diagonal(&sq))
}

/// Householder reflection that sends `e1` to the unit vector `c`, applied to `v`.
pub fn reflect_e1_to(c: &[f64], v: &[f64]) -> Vec<f64> {
    let p = c.len();
    let mut u = c.to_vec();
    u[0] -= 1.0;
    let uu = dot(&u, &u);
    if uu < 1e-30 {
        return v.to_vec();
    }
    let f = 2.0 * dot(&u, v) / uu;
    (0..p).map(|i| v[i] - f * u[i]).collect()
}

/// Type-7 sample quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty sample");
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn sorted_copy(x: &[f64]) -> Vec<f64> {
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    s
}
