//! Hard-margin separating hyperplane by a primal active-set method.
//!
//! Solves `min 0.5 |w|^2` over `(w, b)` subject to `v_i (w'x_i - b) >= 1`.
//! The Hessian is singular in `b`; with an empty working set the step is the
//! minimum-norm Newton step `(-w, 0)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};

#[derive(Debug, Clone)]
pub struct MaxMargin {
    pub w: Vec<f64>,
    pub b: f64,
    /// Indices of the margin-defining rows at the optimum.
    pub support: Vec<usize>,
    pub iterations: usize,
}

/// `x` is row-major `n x p`, `v` holds signs in {-1, +1}. `(w0, b0)` must be
/// feasible.
pub fn max_margin(x: &[f64], p: usize, v: &[i8], w0: &[f64], b0: f64) -> Result<MaxMargin> {
    let n = v.len();
    let q = p + 1;
    let row = |i: usize| -> Vec<f64> {
        let s = v[i] as f64;
        let mut a: Vec<f64> = x[i * p..(i + 1) * p].iter().map(|t| s * t).collect();
        a.push(-s);
        a
    };
    let rows: Vec<Vec<f64>> = (0..n).map(row).collect();
    let amax = rows.iter().map(|a| norm(a)).fold(1.0, f64::max);

    let mut z: Vec<f64> = w0.to_vec();
    z.push(b0);
    let slack0 = rows.iter().map(|a| dot(a, &z) - 1.0).fold(f64::INFINITY, f64::min);
    if slack0 < -1e-9 * (1.0 + norm(&z) * amax) {
        return Err(Error::Consistency("starting point violates the margin constraints".into()));
    }

    let mut work: Vec<usize> = Vec::new();
    let mut bland = false;
    let max_iter = 50 * (n + q) + 100;
    for it in 0..max_iter {
        let m = work.len();
        let mut s = vec![0.0; q];
        let mut lambda = vec![0.0; m];
        if m == 0 {
            for j in 0..p {
                s[j] = -z[j];
            }
        } else {
            let k = q + m;
            let mut kkt = DMatrix::zeros(k, k);
            let mut rhs = DVector::zeros(k);
            for j in 0..p {
                kkt[(j, j)] = 1.0;
                rhs[j] = -z[j];
            }
            for (r, &i) in work.iter().enumerate() {
                for c in 0..q {
                    kkt[(q + r, c)] = rows[i][c];
                    kkt[(c, q + r)] = -rows[i][c];
                }
            }
            let sol = match kkt.clone().lu().solve(&rhs) {
                Some(sol) if sol.iter().all(|v| v.is_finite()) => sol,
                _ => kkt
                    .pseudo_inverse(1e-12)
                    .map_err(|e| Error::Singular(e.to_string()))?
                    * rhs,
            };
            for c in 0..q {
                s[c] = sol[c];
            }
            for r in 0..m {
                lambda[r] = sol[q + r];
            }
        }

        let scale = 1.0 + norm(&z);
        if norm(&s) <= 1e-12 * scale {
            let lam_tol = 1e-10 * (1.0 + lambda.iter().fold(0.0f64, |a, &l| a.max(l.abs())));
            let drop = if bland {
                (0..m).filter(|&r| lambda[r] < -lam_tol).min_by_key(|&r| work[r])
            } else {
                (0..m)
                    .filter(|&r| lambda[r] < -lam_tol)
                    .min_by(|&a, &b| lambda[a].total_cmp(&lambda[b]).then(work[a].cmp(&work[b])))
            };
            match drop {
                Some(r) => {
                    work.remove(r);
                    continue;
                }
                None => {
                    verify(&rows, &z, &work, &lambda, p, amax)?;
                    let mut support = work.clone();
                    support.sort_unstable();
                    return Ok(MaxMargin {
                        w: z[..p].to_vec(),
                        b: z[p],
                        support,
                        iterations: it + 1,
                    });
                }
            }
        }

        // ratio test over constraints outside the working set
        let mut alpha = 1.0;
        let mut blocking: Option<usize> = None;
        let snorm = norm(&s);
        for i in 0..n {
            if work.contains(&i) {
                continue;
            }
            let as_ = dot(&rows[i], &s);
            if as_ < -1e-14 * snorm * amax {
                let slack = (dot(&rows[i], &z) - 1.0).max(0.0);
                let t = slack / -as_;
                if t < alpha || (t == alpha && blocking.is_some_and(|b| i < b)) {
                    alpha = t;
                    blocking = Some(i);
                }
            }
        }
        for j in 0..q {
            z[j] += alpha * s[j];
        }
        match blocking {
            Some(i) if alpha < 1.0 => {
                bland = alpha == 0.0;
                work.push(i);
            }
            _ => bland = false,
        }
    }
    Err(Error::Convergence(format!("max-margin QP did not terminate in {max_iter} iterations")))
}

fn verify(rows: &[Vec<f64>], z: &[f64], work: &[usize], lambda: &[f64], p: usize, amax: f64) -> Result<()> {
    let zscale = 1.0 + norm(z) * amax;
    for (i, a) in rows.iter().enumerate() {
        if dot(a, z) - 1.0 < -1e-10 * zscale {
            return Err(Error::Convergence(format!("QP primal infeasible at row {i}")));
        }
    }
    let q = p + 1;
    let mut grad = vec![0.0; q];
    grad[..p].copy_from_slice(&z[..p]);
    for (r, &i) in work.iter().enumerate() {
        for c in 0..q {
            grad[c] -= lambda[r] * rows[i][c];
        }
        if (dot(&rows[i], z) - 1.0).abs() > 1e-10 * zscale {
            return Err(Error::Convergence("QP complementarity violated".into()));
        }
    }
    let lscale = 1.0 + norm(z) + lambda.iter().fold(0.0f64, |a, &l| a.max(l.abs())) * amax;
    if norm(&grad) > 1e-10 * lscale {
        return Err(Error::Convergence(format!("QP stationarity residual {}", norm(&grad))));
    }
    Ok(())
}
