//! Least-squares criterion, its sum-of-squares profile over thresholds, and
//! feasibility of a split.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{chol_quad_form, least_squares, min_eigenvalue, norm};

/// Relative pivot tolerance used to decide that a subgroup design has full rank.
pub const RANK_RTOL: f64 = 1e-10;

/// Which splits are admissible during estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRule {
    /// Minimum rows on each side.
    pub min_size: usize,
    /// When set, both subgroup second-moment matrices need smallest eigenvalue >= c3.
    /// Otherwise only numerical positive definiteness is required.
    pub c3: Option<f64>,
}

impl SplitRule {
    pub fn for_dim(d: usize) -> Self {
        SplitRule { min_size: d.max(2), c3: None }
    }

    /// Every split between distinct projections is admissible; rank-deficient
    /// blocks are handled by the pseudo-inverse.
    pub fn unconstrained() -> Self {
        SplitRule { min_size: 1, c3: None }
    }

    fn requires_full_rank(&self) -> bool {
        self.min_size > 1 || self.c3.is_some()
    }
}

fn check_omega(ds: &Dataset, omega: &[f64]) -> Result<()> {
    if omega.len() != ds.p() {
        return Err(Error::Dimension(format!("omega has length {}, data has p = {}", omega.len(), ds.p())));
    }
    if !((norm(omega) - 1.0).abs() <= 1e-9) {
        return Err(Error::InvalidData("omega must be a unit vector".into()));
    }
    Ok(())
}

/// `true` for rows with `omega'x - gamma <= 0`.
pub fn subgroup_mask(ds: &Dataset, omega: &[f64], gamma: f64) -> Result<Vec<bool>> {
    check_omega(ds, omega)?;
    Ok(mask_from_projection(&ds.project(omega), gamma))
}

pub fn mask_from_projection(proj: &[f64], gamma: f64) -> Vec<bool> {
    proj.iter().map(|&u| u - gamma <= 0.0).collect()
}

fn block(ds: &Dataset, mask: &[bool], side: bool) -> (DMatrix<f64>, DVector<f64>) {
    let rows: Vec<usize> = (0..ds.n()).filter(|&i| mask[i] == side).collect();
    let d = ds.d();
    let mut a = DMatrix::zeros(rows.len(), d);
    let mut y = DVector::zeros(rows.len());
    for (r, &i) in rows.iter().enumerate() {
        for j in 0..d {
            a[(r, j)] = ds.z_row(i)[j];
        }
        y[r] = ds.y()[i];
    }
    (a, y)
}

/// Regression sum of squares `Y'H+Y + Y'H-Y` for a given partition.
pub fn ssr_for_mask(ds: &Dataset, mask: &[bool]) -> f64 {
    let (al, yl) = block(ds, mask, true);
    let (ar, yr) = block(ds, mask, false);
    least_squares(&al, &yl).fitted_ss + least_squares(&ar, &yr).fitted_ss
}

pub fn ssr(ds: &Dataset, omega: &[f64], gamma: f64) -> Result<f64> {
    Ok(ssr_for_mask(ds, &subgroup_mask(ds, omega, gamma)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFit {
    /// Coefficients on the `omega'x <= gamma` side; `None` if that side is empty.
    pub beta: Option<Vec<f64>>,
    pub delta: Option<Vec<f64>>,
    pub ssr: f64,
    /// Mean squared residual `M_n`.
    pub m_value: f64,
    pub n_left: usize,
    pub n_right: usize,
}

pub fn least_squares_for_mask(ds: &Dataset, mask: &[bool]) -> SplitFit {
    let (al, yl) = block(ds, mask, true);
    let (ar, yr) = block(ds, mask, false);
    let fl = least_squares(&al, &yl);
    let fr = least_squares(&ar, &yr);
    let mut rss = 0.0;
    for (a, y, f) in [(&al, &yl, &fl), (&ar, &yr, &fr)] {
        if a.nrows() > 0 {
            let r = y - a * DVector::from_column_slice(&f.coef);
            rss += r.norm_squared();
        }
    }
    SplitFit {
        beta: (al.nrows() > 0).then(|| fl.coef.clone()),
        delta: (ar.nrows() > 0).then(|| fr.coef.clone()),
        ssr: fl.fitted_ss + fr.fitted_ss,
        m_value: rss / ds.n() as f64,
        n_left: al.nrows(),
        n_right: ar.nrows(),
    }
}

pub fn subgroup_least_squares(ds: &Dataset, omega: &[f64], gamma: f64) -> Result<SplitFit> {
    Ok(least_squares_for_mask(ds, &subgroup_mask(ds, omega, gamma)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub min_eig_left: f64,
    pub min_eig_right: f64,
    pub in_kn: bool,
    pub in_kn_prime: bool,
    pub n_left: usize,
    pub n_right: usize,
}

fn conditional_moment(ds: &Dataset, mask: &[bool], side: bool) -> (DMatrix<f64>, usize) {
    let d = ds.d();
    let mut m = DMatrix::zeros(d, d);
    let mut count = 0;
    for i in (0..ds.n()).filter(|&i| mask[i] == side) {
        let z = ds.z_row(i);
        for a in 0..d {
            for b in 0..d {
                m[(a, b)] += z[a] * z[b];
            }
        }
        count += 1;
    }
    if count > 0 {
        m /= count as f64;
    }
    (m, count)
}

/// Smallest eigenvalues of the subgroup-conditional second-moment matrices of Z.
pub fn feasibility(ds: &Dataset, omega: &[f64], gamma: f64, c3: f64) -> Result<FeasibilityReport> {
    if !(c3 >= 0.0) {
        return Err(Error::Config("c3 must be nonnegative".into()));
    }
    let mask = subgroup_mask(ds, omega, gamma)?;
    let side = |s: bool| {
        let (m, count) = conditional_moment(ds, &mask, s);
        if count == 0 {
            return (0.0, false, 0);
        }
        let eig = m.clone().symmetric_eigen().eigenvalues;
        let maxe = eig.iter().cloned().fold(0.0, f64::max);
        let mine = min_eigenvalue(&m);
        (mine, maxe > 0.0 && mine > RANK_RTOL * maxe, count)
    };
    let (el, pl, nl) = side(true);
    let (er, pr, nr) = side(false);
    let in_kn_prime = pl && pr;
    Ok(FeasibilityReport {
        min_eig_left: el,
        min_eig_right: er,
        in_kn: in_kn_prime && el >= c3 && er >= c3,
        in_kn_prime,
        n_left: nl,
        n_right: nr,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub gamma: f64,
    pub ssr: f64,
    /// Number of distinct-gap midpoints examined.
    pub candidates: usize,
    /// Number that passed the split rule.
    pub feasible: usize,
}

/// Reusable buffers for [`profile_fast`].
pub struct ProfileWorkspace {
    order: Vec<usize>,
    proj: Vec<f64>,
    suffix_a: Vec<f64>,
    suffix_b: Vec<f64>,
    left_a: Vec<f64>,
    left_b: Vec<f64>,
    scratch: Vec<f64>,
}

impl ProfileWorkspace {
    pub fn new(n: usize, d: usize) -> Self {
        ProfileWorkspace {
            order: Vec::with_capacity(n),
            proj: Vec::with_capacity(n),
            suffix_a: vec![0.0; (n + 1) * d * d],
            suffix_b: vec![0.0; (n + 1) * d],
            left_a: vec![0.0; d * d],
            left_b: vec![0.0; d],
            scratch: vec![0.0; d * d + d + d * d],
        }
    }
}

/// Profiles SSR over thresholds by incremental normal equations. Returns the
/// best admissible split, or `Ok(None)` if no split is admissible. The SSR
/// returned here is the fast-path value; [`profile_gamma`] refines it.
pub fn profile_fast(ds: &Dataset, omega: &[f64], rule: &SplitRule, ws: &mut ProfileWorkspace) -> Result<Option<Profile>> {
    let (n, d) = (ds.n(), ds.d());
    let dd = d * d;
    ws.proj.clear();
    ws.proj.extend((0..n).map(|i| crate::linalg::dot(ds.x_row(i), omega)));
    ws.order.clear();
    ws.order.extend(0..n);
    let proj = &ws.proj;
    ws.order.sort_by(|&a, &b| proj[a].total_cmp(&proj[b]).then(a.cmp(&b)));
    let s_first = proj[ws.order[0]];
    let s_last = proj[ws.order[n - 1]];
    if s_first == s_last {
        return Err(Error::NoValidSplit);
    }
    // suffix sums accumulated from the right end, independent of the left sums
    for v in ws.suffix_a[n * dd..].iter_mut() {
        *v = 0.0;
    }
    for v in ws.suffix_b[n * d..].iter_mut() {
        *v = 0.0;
    }
    for k in (0..n).rev() {
        let i = ws.order[k];
        let z = ds.z_row(i);
        let y = ds.y()[i];
        let (head, tail) = ws.suffix_a.split_at_mut((k + 1) * dd);
        let cur = &mut head[k * dd..];
        for a in 0..d {
            for b in 0..d {
                cur[a * d + b] = tail[a * d + b] + z[a] * z[b];
            }
        }
        let (hb, tb) = ws.suffix_b.split_at_mut((k + 1) * d);
        for a in 0..d {
            hb[k * d + a] = tb[a] + z[a] * y;
        }
    }
    ws.left_a.iter_mut().for_each(|v| *v = 0.0);
    ws.left_b.iter_mut().for_each(|v| *v = 0.0);
    let mut best: Option<(f64, f64)> = None;
    let mut candidates = 0;
    let mut feasible = 0;
    let full_rank = rule.requires_full_rank();
    let (chol_work, eig_work) = ws.scratch.split_at_mut(dd + d);
    for k in 1..n {
        let i = ws.order[k - 1];
        let z = ds.z_row(i);
        let y = ds.y()[i];
        for a in 0..d {
            for b in 0..d {
                ws.left_a[a * d + b] += z[a] * z[b];
            }
            ws.left_b[a] += z[a] * y;
        }
        let lo = proj[i];
        let hi = proj[ws.order[k]];
        if !(hi > lo) {
            continue;
        }
        let mid = 0.5 * (lo + hi);
        if !(mid < hi) {
            continue;
        }
        candidates += 1;
        let (nl, nr) = (k, n - k);
        if nl < rule.min_size || nr < rule.min_size {
            continue;
        }
        let ra = &ws.suffix_a[k * dd..(k + 1) * dd];
        let rb = &ws.suffix_b[k * d..(k + 1) * d];
        let value = if full_rank {
            if let Some(c3) = rule.c3 {
                eig_work.copy_from_slice(&ws.left_a);
                let ml = DMatrix::from_row_slice(d, d, eig_work) / nl as f64;
                let mr = DMatrix::from_row_slice(d, d, ra) / nr as f64;
                if min_eigenvalue(&ml) < c3 || min_eigenvalue(&mr) < c3 {
                    continue;
                }
            }
            let ql = chol_quad_form(&ws.left_a, &ws.left_b, d, RANK_RTOL, chol_work);
            let qr = chol_quad_form(ra, rb, d, RANK_RTOL, chol_work);
            match (ql, qr) {
                (Some(a), Some(b)) => a + b,
                _ => continue,
            }
        } else {
            let ql = chol_quad_form(&ws.left_a, &ws.left_b, d, RANK_RTOL, chol_work);
            let qr = chol_quad_form(ra, rb, d, RANK_RTOL, chol_work);
            match (ql, qr) {
                (Some(a), Some(b)) => a + b,
                _ => ssr_for_mask(ds, &mask_from_projection(proj, mid)),
            }
        };
        feasible += 1;
        match best {
            Some((_, b)) if !(value > b) => {}
            _ => best = Some((mid, value)),
        }
    }
    Ok(best.map(|(gamma, ssr)| Profile { gamma, ssr, candidates, feasible }))
}

/// Best threshold for a fixed direction among midpoints of consecutive distinct
/// projections. Ties go to the smallest threshold.
pub fn profile_gamma(ds: &Dataset, omega: &[f64], rule: &SplitRule) -> Result<Profile> {
    check_omega(ds, omega)?;
    let mut ws = ProfileWorkspace::new(ds.n(), ds.d());
    let mut prof = profile_fast(ds, omega, rule, &mut ws)?.ok_or(Error::NoFeasibleSplit)?;
    prof.ssr = ssr(ds, omega, prof.gamma)?;
    Ok(prof)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{simulate_scenario, ScenarioSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_ds(n: usize, d: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut z = Vec::new();
        for _ in 0..n {
            z.push(1.0);
            for _ in 1..d {
                z.push(rng.random_range(-1.0..1.0));
            }
        }
        let x = (0..n * p).map(|_| rng.random_range(-2.0..2.0)).collect();
        Dataset::new(y, z, x, d, p).unwrap()
    }

    // Oracle: normal equations solved by Gaussian elimination on the block rows.
    fn oracle_rss(ds: &Dataset, rows: &[usize]) -> f64 {
        let d = ds.d();
        if rows.is_empty() {
            return 0.0;
        }
        let mut a = vec![vec![0.0; d + 1]; d];
        for &i in rows {
            let z = ds.z_row(i);
            for r in 0..d {
                for c in 0..d {
                    a[r][c] += z[r] * z[c];
                }
                a[r][d] += z[r] * ds.y()[i];
            }
        }
        for c in 0..d {
            let piv = (c..d).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, piv);
            for r in 0..d {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..=d {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        let coef: Vec<f64> = (0..d).map(|r| a[r][d] / a[r][r]).collect();
        rows.iter()
            .map(|&i| {
                let f: f64 = ds.z_row(i).iter().zip(&coef).map(|(z, b)| z * b).sum();
                (ds.y()[i] - f).powi(2)
            })
            .sum()
    }

    #[test]
    fn mask_examples() {
        let ds = Dataset::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![0.5, 1.5], 1, 1).unwrap();
        assert_eq!(subgroup_mask(&ds, &[1.0], 1.0).unwrap(), vec![true, false]);
        assert_eq!(subgroup_mask(&ds, &[1.0], 1.5).unwrap(), vec![true, true]);
        assert_eq!(subgroup_mask(&ds, &[-1.0], -1.0).unwrap(), vec![false, true]);
    }

    #[test]
    fn ssr_intercept_only_is_group_means() {
        let ds = Dataset::new(
            vec![1.0, 2.0, 3.0, 10.0, 12.0],
            vec![1.0; 5],
            vec![0.0, 1.0, 2.0, 3.0, 4.0],
            1,
            1,
        )
        .unwrap();
        let v = ssr(&ds, &[1.0], 2.5).unwrap();
        assert!((v - (3.0 * 4.0 + 2.0 * 121.0)).abs() < 1e-10);
    }

    #[test]
    fn ssr_matches_residual_oracle_on_n8() {
        let ds = random_ds(8, 2, 2, 5);
        let om = crate::linalg::normalized(&[0.6, -0.3]).unwrap();
        let mask = subgroup_mask(&ds, &om, 0.1).unwrap();
        let left: Vec<usize> = (0..8).filter(|&i| mask[i]).collect();
        let right: Vec<usize> = (0..8).filter(|&i| !mask[i]).collect();
        let rss = oracle_rss(&ds, &left) + oracle_rss(&ds, &right);
        let v = ssr(&ds, &om, 0.1).unwrap();
        assert!((v - (ds.yty() - rss)).abs() < 1e-9 * ds.yty());
    }

    #[test]
    fn noiseless_true_split_recovers_coefficients() {
        let spec = ScenarioSpec::table(1, 2, 0.0).unwrap();
        let ds = simulate_scenario(&spec, 60, 2).unwrap();
        let fit = subgroup_least_squares(&ds, &[1.0], 1.0).unwrap();
        for (a, b) in fit.beta.unwrap().iter().zip(&spec.beta0) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in fit.delta.unwrap().iter().zip(&spec.delta0) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!((fit.ssr - ds.yty()).abs() < 1e-9 * ds.yty());
        assert!(fit.m_value < 1e-20);
    }

    #[test]
    fn identity_holds_and_empty_side_is_flagged() {
        let ds = random_ds(30, 3, 2, 9);
        let om = crate::linalg::normalized(&[1.0, 2.0]).unwrap();
        for &g in &[-5.0, -0.4, 0.0, 0.7, 5.0] {
            let f = subgroup_least_squares(&ds, &om, g).unwrap();
            let lhs = ds.n() as f64 * f.m_value + f.ssr;
            assert!((lhs - ds.yty()).abs() <= 1e-9 * ds.yty());
            assert_eq!(f.n_left + f.n_right, 30);
        }
        assert!(subgroup_least_squares(&ds, &om, 100.0).unwrap().delta.is_none());
    }

    #[test]
    fn feasibility_examples() {
        let ds = Dataset::new(vec![1.0, 2.0, 3.0], vec![1.0; 3], vec![0.0, 1.0, 2.0], 1, 1).unwrap();
        let f = feasibility(&ds, &[1.0], 0.5, 1.0).unwrap();
        assert!((f.min_eig_left - 1.0).abs() < 1e-12 && (f.min_eig_right - 1.0).abs() < 1e-12);
        assert!(f.in_kn && f.in_kn_prime);
        let f = feasibility(&ds, &[1.0], 5.0, 0.0).unwrap();
        assert!(!f.in_kn_prime && f.min_eig_right == 0.0);
    }

    #[test]
    fn model1_true_split_is_in_kn() {
        let spec = ScenarioSpec::table(1, 1, 1.0).unwrap();
        let ds = simulate_scenario(&spec, 500, 4).unwrap();
        let f = feasibility(&ds, &[1.0], 1.0, 1e-6).unwrap();
        // D = [[1, m], [m, m]] with m the Bernoulli mean; smallest eigenvalue is
        // (1 + m - sqrt((1 - m)^2 + 4 m^2)) / 2
        let mask = subgroup_mask(&ds, &[1.0], 1.0).unwrap();
        let rows: Vec<usize> = (0..500).filter(|&i| mask[i]).collect();
        let m = rows.iter().map(|&i| ds.z_row(i)[1]).sum::<f64>() / rows.len() as f64;
        let expected = (1.0 + m - ((1.0 - m).powi(2) + 4.0 * m * m).sqrt()) / 2.0;
        assert!((f.min_eig_left - expected).abs() < 1e-12);
        assert!(f.in_kn);
    }

    fn exhaustive(ds: &Dataset, omega: &[f64], rule: &SplitRule) -> Option<(f64, f64)> {
        let proj = ds.project(omega);
        let mut s = proj.clone();
        s.sort_by(|a, b| a.total_cmp(b));
        s.dedup();
        let mut best: Option<(f64, f64)> = None;
        for w in s.windows(2) {
            let g = 0.5 * (w[0] + w[1]);
            let mask = mask_from_projection(&proj, g);
            let left: Vec<usize> = (0..ds.n()).filter(|&i| mask[i]).collect();
            let right: Vec<usize> = (0..ds.n()).filter(|&i| !mask[i]).collect();
            if left.len() < rule.min_size || right.len() < rule.min_size {
                continue;
            }
            let fl = feasibility(ds, omega, g, 0.0).unwrap();
            if !fl.in_kn_prime {
                continue;
            }
            let v = ds.yty() - oracle_rss(ds, &left) - oracle_rss(ds, &right);
            if best.map_or(true, |(_, b)| v > b + 1e-9 * b.abs()) {
                best = Some((g, v));
            }
        }
        best
    }

    #[test]
    fn profile_matches_exhaustive_model1() {
        let spec = ScenarioSpec::table(1, 1, 1.0).unwrap();
        let ds = simulate_scenario(&spec, 50, 3).unwrap();
        let rule = SplitRule::for_dim(2);
        let prof = profile_gamma(&ds, &[1.0], &rule).unwrap();
        let (g, v) = exhaustive(&ds, &[1.0], &rule).unwrap();
        assert_eq!(prof.gamma, g);
        assert!((prof.ssr - v).abs() < 1e-9 * v);
    }

    #[test]
    fn profile_with_duplicates() {
        let mut ds = random_ds(40, 2, 1, 11);
        let x: Vec<f64> = ds.x_flat().iter().map(|v| (v * 2.0).round() / 2.0).collect();
        ds = Dataset::new(ds.y().to_vec(), ds.z_flat().to_vec(), x, 2, 1).unwrap();
        let rule = SplitRule::for_dim(2);
        let prof = profile_gamma(&ds, &[1.0], &rule).unwrap();
        assert!(prof.candidates < 39);
        let (g, v) = exhaustive(&ds, &[1.0], &rule).unwrap();
        assert_eq!(prof.gamma, g);
        assert!((prof.ssr - v).abs() < 1e-9 * v);
    }

    #[test]
    fn two_points_single_candidate() {
        let ds = Dataset::new(vec![1.0, 5.0], vec![1.0, 1.0], vec![0.0, 3.0], 1, 1).unwrap();
        let prof = profile_gamma(&ds, &[1.0], &SplitRule::unconstrained()).unwrap();
        assert_eq!(prof.gamma, 1.5);
        assert_eq!(prof.candidates, 1);
    }

    #[test]
    fn identical_projections_have_no_split() {
        let ds = Dataset::new(vec![1.0, 5.0, 2.0], vec![1.0; 3], vec![0.3; 3], 1, 1).unwrap();
        assert!(matches!(
            profile_gamma(&ds, &[1.0], &SplitRule::unconstrained()),
            Err(Error::NoValidSplit)
        ));
    }

    #[test]
    fn unconstrained_profile_handles_rank_deficient_blocks() {
        let ds = random_ds(12, 3, 1, 21);
        let rule = SplitRule::unconstrained();
        let prof = profile_gamma(&ds, &[1.0], &rule).unwrap();
        let proj = ds.project(&[1.0]);
        let mut s = proj.clone();
        s.sort_by(|a, b| a.total_cmp(b));
        let best = s
            .windows(2)
            .map(|w| ssr(&ds, &[1.0], 0.5 * (w[0] + w[1])).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((prof.ssr - best).abs() < 1e-9 * best);
    }
}
