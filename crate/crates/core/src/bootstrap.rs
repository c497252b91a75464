//! Plug-in parametric bootstrap of the joint limit law and percentile
//! confidence intervals.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ChangePlaneParams, Dataset};
use crate::error::{Error, Result};
use crate::limit::{sample_limit_distribution, sigma_covariances_empirical, LimitDraw, LimitSpec, MarkSource, NoiseLaw, Which};
use crate::linalg::{dot, norm, quantile_sorted, sorted_copy};
use crate::rng::TAG_BOOTSTRAP;

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSummary {
    /// `omega'X_i - gamma`.
    pub u_hat: Vec<f64>,
    pub eps_hat: Vec<f64>,
    pub eps_bar: f64,
    /// `n^{-1} sum (u_hat - mean)^2`.
    pub tau2: f64,
    /// `n^{-1} sum (eps_hat - eps_bar)^2`.
    pub sigma2: f64,
    pub left: Vec<bool>,
    pub sigma1: Option<DMatrix<f64>>,
    pub sigma2_cov: Option<DMatrix<f64>>,
}

fn variance(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n)
}

pub fn residual_summary(ds: &Dataset, theta: &ChangePlaneParams) -> Result<ResidualSummary> {
    if theta.omega.len() != ds.p() || theta.beta.len() != ds.d() {
        return Err(Error::Dimension("parameters do not match the dataset".into()));
    }
    let u_hat: Vec<f64> = ds.project(&theta.omega).iter().map(|u| u - theta.gamma).collect();
    let left: Vec<bool> = u_hat.iter().map(|&u| u <= 0.0).collect();
    let eps_hat: Vec<f64> = (0..ds.n())
        .map(|i| {
            let coef = if left[i] { &theta.beta } else { &theta.delta };
            ds.y()[i] - dot(ds.z_row(i), coef)
        })
        .collect();
    let (_, tau2) = variance(&u_hat);
    let (eps_bar, sigma2) = variance(&eps_hat);
    let (sigma1, sigma2_cov) = match sigma_covariances_empirical(ds.z_flat(), ds.d(), &left, sigma2) {
        Ok((a, b)) => (Some(a), Some(b)),
        Err(_) => (None, None),
    };
    Ok(ResidualSummary { u_hat, eps_hat, eps_bar, tau2, sigma2, left, sigma1, sigma2_cov })
}

/// Gaussian-kernel density of `u` at zero with bandwidth `mult * tau * n^exp`,
/// `tau` being the standard deviation of `u`.
pub fn kernel_density_at_zero(u: &[f64], mult: f64, exp: f64) -> Result<f64> {
    let n = u.len();
    if n < 2 {
        return Err(Error::InvalidData("density estimate needs at least two points".into()));
    }
    let tau = variance(u).1.sqrt();
    let h = mult * tau * (n as f64).powf(exp);
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config("kernel bandwidth must be positive".into()));
    }
    let c = 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt());
    Ok(u.iter().map(|&v| c * (-0.5 * (v / h) * (v / h)).exp()).sum::<f64>() / n as f64)
}

/// Smoothed residual law: `(eps_I - eps_bar) + mult * sigma * n^exp * N(0,1)`.
pub fn residual_resampler(eps_hat: &[f64], eps_bar: f64, sigma: f64, mult: f64, exp: f64) -> Result<NoiseLaw> {
    let n = eps_hat.len();
    if n < 2 {
        return Err(Error::InvalidData("resampler needs at least two residuals".into()));
    }
    if !(sigma > 0.0) {
        return Err(Error::Config("residual variance is zero; the bootstrap is degenerate".into()));
    }
    Ok(NoiseLaw::Smoothed {
        centred: eps_hat.iter().map(|e| e - eps_bar).collect(),
        bandwidth: mult * sigma * (n as f64).powf(exp),
    })
}

/// Gram-Schmidt on the canonical basis against `omega`: a `p x (p-1)` matrix
/// with orthonormal columns orthogonal to `omega`.
pub fn orthonormal_complement(omega: &[f64]) -> DMatrix<f64> {
    let p = omega.len();
    let mut basis: Vec<Vec<f64>> = vec![omega.iter().map(|v| v / norm(omega)).collect()];
    for e in 0..p {
        if basis.len() == p {
            break;
        }
        let mut v = vec![0.0; p];
        v[e] = 1.0;
        // two passes for numerical orthogonality
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(vi, bi)| *vi -= c * bi);
            }
        }
        let nv = norm(&v);
        if nv > 1e-6 {
            basis.push(v.iter().map(|x| x / nv).collect());
        }
    }
    DMatrix::from_fn(p, p - 1, |r, c| basis[c + 1][r])
}

/// Indices of the `r` smallest `|u|` (ties by index) and the `r`-th order statistic.
pub fn neighborhood_set(u_hat: &[f64], r: usize) -> Result<(Vec<usize>, f64)> {
    if r == 0 || r > u_hat.len() {
        return Err(Error::Config(format!("neighbourhood size {r} must lie in 1..={}", u_hat.len())));
    }
    let mut idx: Vec<usize> = (0..u_hat.len()).collect();
    idx.sort_by(|&a, &b| u_hat[a].abs().total_cmp(&u_hat[b].abs()).then(a.cmp(&b)));
    idx.truncate(r);
    let t = u_hat[idx[r - 1]].abs();
    idx.sort_unstable();
    Ok((idx, t))
}

pub fn neighborhood_size(n: usize, r_exponent: f64) -> usize {
    ((n as f64).powf(r_exponent).ceil() as usize).clamp(1, n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub b: usize,
    pub level: f64,
    pub r_exponent: f64,
    pub bandwidth_mult: f64,
    pub bandwidth_exp: f64,
    /// Coefficient vectors over `(beta, delta, omega, gamma)`.
    pub contrasts: Vec<Vec<f64>>,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            b: 1000,
            level: 0.95,
            r_exponent: 2.0 / 3.0,
            bandwidth_mult: 2.0,
            bandwidth_exp: -0.2,
            contrasts: vec![],
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config("level must lie in (0, 1)".into()));
        }
        if !(self.r_exponent > 0.5 && self.r_exponent < 1.0) {
            return Err(Error::Config("r_exponent must lie in (1/2, 1)".into()));
        }
        if !(self.bandwidth_mult > 0.0) || !self.bandwidth_exp.is_finite() {
            return Err(Error::Config("invalid bandwidth constants".into()));
        }
        for c in &self.contrasts {
            if c.iter().all(|&v| v == 0.0) || c.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("contrast vectors must be finite and nonzero".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapPlugins {
    pub f0_hat: f64,
    pub sigma2_hat: f64,
    pub tau2_hat: f64,
    pub eps_bar: f64,
    pub r_n: usize,
    pub t_hat: f64,
    pub k1: f64,
}

#[derive(Debug, Clone)]
pub struct BootstrapOutput {
    pub plugins: BootstrapPlugins,
    pub spec: LimitSpec,
    pub draws: Vec<LimitDraw>,
}

/// Builds the plug-in limit law around `theta` and samples `cfg.b` draws.
pub fn parametric_bootstrap(ds: &Dataset, theta: &ChangePlaneParams, cfg: &BootstrapConfig, which: Which) -> Result<BootstrapOutput> {
    cfg.check()?;
    let n = ds.n();
    let (p, d) = (ds.p(), ds.d());
    let rs = residual_summary(ds, theta)?;
    let (s1, s2) = match (rs.sigma1.clone(), rs.sigma2_cov.clone()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Singular("subgroup moment matrix at the fitted split".into())),
    };
    let f0_hat = kernel_density_at_zero(&rs.u_hat, cfg.bandwidth_mult, cfg.bandwidth_exp)?;
    let noise = residual_resampler(&rs.eps_hat, rs.eps_bar, rs.sigma2.sqrt(), cfg.bandwidth_mult, cfg.bandwidth_exp)?;
    let r_n = neighborhood_size(n, cfg.r_exponent);
    let (idx, t_hat) = neighborhood_set(&rs.u_hat, r_n)?;
    let mut z = Vec::with_capacity(idx.len() * d);
    let mut x = Vec::with_capacity(idx.len() * p);
    for &i in &idx {
        z.extend_from_slice(ds.z_row(i));
        x.extend_from_slice(ds.x_row(i));
    }
    let k1 = (0..n).map(|i| norm(ds.x_row(i))).fold(0.0, f64::max);
    let spec = LimitSpec {
        f0: f0_hat,
        sigma2: rs.sigma2,
        contrast: theta.beta.iter().zip(&theta.delta).map(|(b, d)| b - d).collect(),
        sigma1: s1,
        sigma2_cov: s2,
        omega0: theta.omega.clone(),
        gamma0: theta.gamma,
        obar: orthonormal_complement(&theta.omega),
        k1,
        marks: MarkSource::Empirical { z, x },
        noise,
        max_growth: 12,
    };
    let draws = if cfg.b == 0 {
        vec![]
    } else {
        sample_limit_distribution(&spec, cfg.b, crate::rng::derive_seed(cfg.seed, &[TAG_BOOTSTRAP]), which)?
    };
    Ok(BootstrapOutput {
        plugins: BootstrapPlugins {
            f0_hat,
            sigma2_hat: rs.sigma2,
            tau2_hat: rs.tau2,
            eps_bar: rs.eps_bar,
            r_n,
            t_hat,
            k1,
        },
        spec,
        draws,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub name: String,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    /// `"sqrt_n"`, `"n"` or `"mixed"`.
    pub rate: String,
    pub q_lo: f64,
    pub q_hi: f64,
}

impl Interval {
    pub fn covers(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CISet {
    pub summary: String,
    pub n: usize,
    pub draws: usize,
    pub coordinates: Vec<Interval>,
    pub contrasts: Vec<Interval>,
}

impl CISet {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("coordinate,estimate,lo,hi,level,rate\n");
        for iv in self.coordinates.iter().chain(&self.contrasts) {
            s.push_str(&format!("{},{},{},{},{},{}\n", iv.name, iv.estimate, iv.lo, iv.hi, iv.level, iv.rate));
        }
        s
    }

    pub fn get(&self, name: &str) -> Option<&Interval> {
        self.coordinates.iter().chain(&self.contrasts).find(|iv| iv.name == name)
    }
}

pub fn coordinate_names(d: usize, p: usize) -> Vec<String> {
    let mut v: Vec<String> = (1..=d).map(|i| format!("beta{i}")).collect();
    v.extend((1..=d).map(|i| format!("delta{i}")));
    v.extend((1..=p).map(|i| format!("omega{i}")));
    v.push("gamma".into());
    v
}

/// Percentile inversion: `estimate - q_{1-a/2}/rate` to `estimate - q_{a/2}/rate`,
/// with rate `sqrt(n)` for regression coordinates and `n` for the plane.
/// `mode` selects the widest-corridor summaries of the draws.
pub fn confidence_intervals(
    theta: &ChangePlaneParams,
    draws: &[LimitDraw],
    n: usize,
    level: f64,
    contrasts: &[Vec<f64>],
    mode: bool,
) -> Result<CISet> {
    if draws.len() < 50 {
        return Err(Error::Config(format!("need at least 50 draws for intervals, got {}", draws.len())));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config("level must lie in (0, 1)".into()));
    }
    let (d, p) = (theta.beta.len(), theta.omega.len());
    let dim = 2 * d + p + 1;
    let flat: Vec<Vec<f64>> = draws
        .iter()
        .map(|dr| dr.flat(mode).ok_or_else(|| Error::Config("draws lack the requested summary".into())))
        .collect::<Result<_>>()?;
    let est = theta.to_vec();
    let sn = (n as f64).sqrt();
    let nn = n as f64;
    let scale: Vec<f64> = (0..dim).map(|c| if c < 2 * d { sn } else { nn }).collect();
    let a = (1.0 - level) / 2.0;
    let make = |name: String, estimate: f64, vals: Vec<f64>, rate: &str| {
        let s = sorted_copy(&vals);
        let (q_lo, q_hi) = (quantile_sorted(&s, a), quantile_sorted(&s, 1.0 - a));
        Interval { name, estimate, lo: estimate - q_hi, hi: estimate - q_lo, level, rate: rate.into(), q_lo, q_hi }
    };
    let names = coordinate_names(d, p);
    let coordinates = (0..dim)
        .map(|c| {
            let vals = flat.iter().map(|f| f[c] / scale[c]).collect();
            make(names[c].clone(), est[c], vals, if c < 2 * d { "sqrt_n" } else { "n" })
        })
        .collect();
    let mut out_c = Vec::with_capacity(contrasts.len());
    for (k, a_vec) in contrasts.iter().enumerate() {
        if a_vec.len() != dim {
            return Err(Error::Dimension(format!("contrast {k} has length {}, expected {dim}", a_vec.len())));
        }
        let vals = flat.iter().map(|f| (0..dim).map(|c| a_vec[c] * f[c] / scale[c]).sum()).collect();
        out_c.push(make(format!("contrast{}", k + 1), dot(a_vec, &est), vals, "mixed"));
    }
    Ok(CISet {
        summary: if mode { "mode" } else { "mean" }.into(),
        n,
        draws: draws.len(),
        coordinates,
        contrasts: out_c,
    })
}

/// Uniform `(-1, 1)` contrast vectors.
pub fn random_contrasts<R: Rng>(dim: usize, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn complement_examples() {
        let m = orthonormal_complement(&[1.0, 0.0]);
        assert_eq!(m.shape(), (2, 1));
        assert!((m[(0, 0)]).abs() < 1e-15 && (m[(1, 0)] - 1.0).abs() < 1e-15);
        assert_eq!(orthonormal_complement(&[1.0]).shape(), (1, 0));
    }

    #[test]
    fn neighborhood_example() {
        let (idx, t) = neighborhood_set(&[0.1, 0.5, 0.2], 2).unwrap();
        assert_eq!(idx, vec![0, 2]);
        assert_eq!(t, 0.2);
        let (all, _) = neighborhood_set(&[0.1, -0.5, 0.2], 3).unwrap();
        assert_eq!(all, vec![0, 1, 2]);
    }

    #[test]
    fn far_mass_has_tiny_density() {
        let u: Vec<f64> = (0..1000).map(|i| 5.0 + i as f64 / 1000.0).collect();
        let f = kernel_density_at_zero(&u, 2.0, -0.2).unwrap();
        assert!(f < 1e-6);
    }

    proptest! {
        #[test]
        fn complement_projector_identity(v in proptest::collection::vec(-1.0f64..1.0, 1..=8)) {
            prop_assume!(norm(&v) > 1e-3);
            let w: Vec<f64> = v.iter().map(|x| x / norm(&v)).collect();
            let m = orthonormal_complement(&w);
            let wv = nalgebra::DVector::from_column_slice(&w);
            let proj = &m * m.transpose() + &wv * wv.transpose();
            let id = DMatrix::<f64>::identity(w.len(), w.len());
            prop_assert!((proj - id).amax() < 1e-10);
            prop_assert!((m.transpose() * &wv).amax() < 1e-12);
        }
    }
}
