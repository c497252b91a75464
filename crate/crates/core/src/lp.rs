//! Dense simplex for tiny linear programs of the form
//! `max c'x  s.t.  A x <= b`, `x` free.
//!
//! The number of variables is small (at most a handful) while the number of
//! constraints may be in the hundreds, so the solver works on the dual
//! `min b'y  s.t.  A'y = c, y >= 0`, whose basis is only `#vars` wide. Pivoting
//! uses Bland's rule throughout.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    /// The primal objective is unbounded above (dual infeasible).
    Unbounded,
    /// No `x` satisfies the constraints (dual unbounded).
    Infeasible,
}

const EPS: f64 = 1e-10;

struct Tableau {
    /// `rows x (cols + 1)`; the last column is the right-hand side.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    cols: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let pv = self.t[r][c];
        for v in self.t[r].iter_mut() {
            *v /= pv;
        }
        let prow = self.t[r].clone();
        for (i, row) in self.t.iter_mut().enumerate() {
            if i != r {
                let f = row[c];
                if f != 0.0 {
                    for (a, b) in row.iter_mut().zip(&prow) {
                        *a -= f * b;
                    }
                }
            }
        }
        self.basis[r] = c;
    }

    /// Minimises `cost'y` from the current basic feasible solution. Returns false if unbounded.
    fn minimize(&mut self, cost: &[f64], allowed: &dyn Fn(usize) -> bool) -> bool {
        let m = self.t.len();
        let rhs = self.cols;
        let scale = 1.0 + cost.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        for _ in 0..10_000 {
            // reduced costs: c_j - c_B' B^{-1} a_j, with the tableau already holding B^{-1} A
            let entering = (0..self.cols).filter(|&j| allowed(j) && !self.basis.contains(&j)).find(|&j| {
                let mut rc = cost[j];
                for i in 0..m {
                    rc -= cost[self.basis[i]] * self.t[i][j];
                }
                rc < -EPS * scale
            });
            let Some(c) = entering else { return true };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                let a = self.t[i][c];
                if a > EPS {
                    let ratio = self.t[i][rhs] / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr - 1e-14 * lr.abs().max(1.0)
                                || ((ratio - lr).abs() <= 1e-14 * lr.abs().max(1.0) && self.basis[i] < self.basis[li])
                            {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            match leave {
                Some((r, _)) => self.pivot(r, c),
                None => return false,
            }
        }
        false
    }
}

/// `a` is row-major `rows x nv`.
pub fn maximize(c: &[f64], a: &[f64], b: &[f64]) -> LpOutcome {
    let nv = c.len();
    let nc = b.len();
    assert_eq!(a.len(), nv * nc, "constraint matrix shape");
    // dual columns j = 0..nc are constraint rows; nc..nc+nv are artificials
    let cols = nc + nv;
    let mut t = vec![vec![0.0; cols + 1]; nv];
    for r in 0..nv {
        let sign = if c[r] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..nc {
            t[r][j] = sign * a[j * nv + r];
        }
        t[r][nc + r] = 1.0;
        t[r][cols] = sign * c[r];
    }
    let mut tab = Tableau { t, basis: (nc..nc + nv).collect(), cols };
    let phase1: Vec<f64> = (0..cols).map(|j| if j >= nc { 1.0 } else { 0.0 }).collect();
    tab.minimize(&phase1, &|_| true);
    let infeas: f64 = (0..nv).filter(|&r| tab.basis[r] >= nc).map(|r| tab.t[r][cols]).sum();
    let cscale = 1.0 + c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if infeas > 1e-9 * cscale {
        return LpOutcome::Unbounded;
    }
    // drive zero-level artificials out of the basis; rows that cannot be cleared are redundant
    let mut redundant = vec![false; nv];
    for r in 0..nv {
        if tab.basis[r] >= nc {
            match (0..nc).find(|&j| !tab.basis.contains(&j) && tab.t[r][j].abs() > 1e-9) {
                Some(j) => tab.pivot(r, j),
                None => redundant[r] = true,
            }
        }
    }
    let mut cost = vec![0.0; cols];
    cost[..nc].copy_from_slice(b);
    if !tab.minimize(&cost, &|j| j < nc) {
        return LpOutcome::Infeasible;
    }
    // complementary slackness: basic dual variables mark tight primal constraints
    let tight: Vec<usize> = (0..nv).filter(|&r| !redundant[r]).map(|r| tab.basis[r]).collect();
    let mut ab = DMatrix::zeros(tight.len(), nv);
    let mut bb = DVector::zeros(tight.len());
    for (r, &j) in tight.iter().enumerate() {
        for k in 0..nv {
            ab[(r, k)] = a[j * nv + k];
        }
        bb[r] = b[j];
    }
    let x: Vec<f64> = if tight.len() == nv {
        match ab.clone().lu().solve(&bb) {
            Some(x) => x.iter().cloned().collect(),
            None => return LpOutcome::Infeasible,
        }
    } else {
        match ab.pseudo_inverse(1e-12) {
            Ok(pinv) => (pinv * bb).iter().cloned().collect(),
            Err(_) => return LpOutcome::Infeasible,
        }
    };
    let value = c.iter().zip(&x).map(|(a, b)| a * b).sum();
    LpOutcome::Optimal { x, value }
}

/// Largest violation `max_j (a_j'x - b_j)` of a candidate point.
pub fn max_violation(a: &[f64], b: &[f64], x: &[f64]) -> f64 {
    let nv = x.len();
    (0..b.len())
        .map(|j| a[j * nv..(j + 1) * nv].iter().zip(x).map(|(p, q)| p * q).sum::<f64>() - b[j])
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_two_variables() {
        // max 3x + 5y; x <= 4; 2y <= 12; 3x + 2y <= 18; x,y >= 0
        let a = [1.0, 0.0, 0.0, 2.0, 3.0, 2.0, -1.0, 0.0, 0.0, -1.0];
        let b = [4.0, 12.0, 18.0, 0.0, 0.0];
        match maximize(&[3.0, 5.0], &a, &b) {
            LpOutcome::Optimal { x, value } => {
                assert!((value - 36.0).abs() < 1e-10);
                assert!((x[0] - 2.0).abs() < 1e-10 && (x[1] - 6.0).abs() < 1e-10);
            }
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn detects_unbounded() {
        // max x s.t. -x <= 1
        assert_eq!(maximize(&[1.0], &[-1.0], &[1.0]), LpOutcome::Unbounded);
    }

    #[test]
    fn detects_infeasible() {
        // x <= -1 and -x <= -1
        assert_eq!(maximize(&[0.0], &[1.0, -1.0], &[-1.0, -1.0]), LpOutcome::Infeasible);
    }

    #[test]
    fn free_variables_and_degeneracy() {
        // max -|x - 2| written as max t s.t. t <= x-2, t <= 2-x, with extra duplicate rows
        let a = [1.0, -1.0, 1.0, 1.0, 1.0, -1.0, 1.0, 1.0];
        let b = [-2.0, 2.0, -2.0, 2.0];
        match maximize(&[1.0, 0.0], &a, &b) {
            LpOutcome::Optimal { x, value } => {
                assert!(value.abs() < 1e-10);
                assert!((x[1] - 2.0).abs() < 1e-10);
            }
            o => panic!("{o:?}"),
        }
    }
}
