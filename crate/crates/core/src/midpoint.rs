//! Canonical summaries of the argmin level set: the corridor-weighted mean
//! direction and the widest-corridor (maximum margin) direction.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ChangePlaneParams, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{dot, normalized};
use crate::qp::max_margin;
use crate::rng::{rng_for, TAG_MIDPOINT};

/// Partition induced by a witness `(omega, gamma)`: `v_i = +1` iff `omega'x_i - gamma > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSet {
    pub v: Vec<i8>,
    pub witness_omega: Vec<f64>,
    pub witness_gamma: f64,
}

impl LevelSet {
    pub fn has_both_signs(&self) -> bool {
        self.v.contains(&-1) && self.v.contains(&1)
    }

    /// Mask convention used by the objective: `true` on the `v = -1` side.
    pub fn mask(&self) -> Vec<bool> {
        self.v.iter().map(|&s| s < 0).collect()
    }
}

pub fn induced_signs(ds: &Dataset, omega: &[f64], gamma: f64) -> LevelSet {
    let v = signs_from_projection(&ds.project(omega), gamma);
    LevelSet {
        v,
        witness_omega: omega.to_vec(),
        witness_gamma: gamma,
    }
}

pub fn signs_from_projection(proj: &[f64], gamma: f64) -> Vec<i8> {
    proj.iter().map(|&u| if u - gamma > 0.0 { 1 } else { -1 }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Corridor {
    pub c_l: f64,
    pub c_u: f64,
    pub c_r: f64,
}

impl Corridor {
    pub fn from_bounds(c_l: f64, c_u: f64) -> Self {
        Corridor { c_l, c_u, c_r: c_u - c_l }
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.c_l + self.c_u)
    }

    pub fn contains(&self, g: f64) -> bool {
        self.c_r > 0.0 && self.c_l <= g && g < self.c_u
    }
}

/// `c_l = max_{v=-1} omega'x`, `c_u = min_{v=+1} omega'x` (empty max is `-inf`).
pub fn corridor_from_projection(proj: &[f64], v: &[i8]) -> Corridor {
    let mut c_l = f64::NEG_INFINITY;
    let mut c_u = f64::INFINITY;
    for (&u, &s) in proj.iter().zip(v) {
        if s < 0 {
            c_l = c_l.max(u);
        } else {
            c_u = c_u.min(u);
        }
    }
    Corridor::from_bounds(c_l, c_u)
}

pub fn corridor(ds: &Dataset, omega: &[f64], level: &LevelSet) -> Corridor {
    corridor_from_projection(&ds.project(omega), &level.v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeMethod {
    /// Maximum-margin quadratic program.
    Qp,
    /// Best sampled direction from the mean-midpoint sampler.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MidpointConfig {
    /// Candidates in the first round.
    pub m_n: usize,
    /// Required number of candidates with a positive corridor.
    pub r0: usize,
    /// Initial cap half-angle around the centre direction.
    pub cap0: f64,
    pub max_rounds: usize,
    pub seed: u64,
    pub mode_method: ModeMethod,
}

impl Default for MidpointConfig {
    fn default() -> Self {
        MidpointConfig {
            m_n: 800,
            r0: 200,
            cap0: PI / 8.0,
            max_rounds: 60,
            seed: 0,
            mode_method: ModeMethod::Qp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanMidpoint {
    pub omega: Vec<f64>,
    pub gamma: f64,
    pub corridor: Corridor,
    pub rounds: usize,
    /// Candidate count of the accepted round.
    pub m_n: usize,
    /// Cap half-angle of the accepted round; the cap is `<omega, centre> >= cos(cap)`.
    pub cap: f64,
    pub hits: usize,
    /// Best sampled direction of the accepted round (widest corridor).
    #[serde(skip)]
    pub best_sampled: Option<(Vec<f64>, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeMidpoint {
    pub omega: Vec<f64>,
    pub gamma: f64,
    /// Lower corridor end at the mode direction, kept as a diagnostic.
    pub gamma_star: f64,
    pub corridor: Corridor,
    pub iterations: usize,
}

fn check_level(ds: &Dataset, level: &LevelSet) -> Result<()> {
    if level.v.len() != ds.n() {
        return Err(Error::Dimension("sign vector length differs from n".into()));
    }
    if !level.has_both_signs() {
        return Err(Error::InvalidData("level set must contain both signs".into()));
    }
    Ok(())
}

fn witness_corridor(ds: &Dataset, level: &LevelSet) -> Result<Corridor> {
    let c = corridor(ds, &level.witness_omega, level);
    if !(c.c_r > 0.0) {
        return Err(Error::InvalidData("witness corridor is empty".into()));
    }
    Ok(c)
}

fn reproduces(ds: &Dataset, omega: &[f64], gamma: f64, level: &LevelSet) -> bool {
    signs_from_projection(&ds.project(omega), gamma) == level.v
}

/// Antithetic pair of uniform draws from the cap of half-angle `cap` around
/// the unit vector `c` (p >= 2): the two points share the polar angle and
/// have opposite tangent directions.
fn sample_cap_pair<R: Rng>(c: &[f64], cap: f64, rng: &mut R) -> [Vec<f64>; 2] {
    let p = c.len();
    let smax = cap.min(PI / 2.0).sin();
    let alpha = loop {
        let a: f64 = rng.random_range(0.0..cap);
        if p == 2 {
            break a;
        }
        let acc = (a.sin() / smax).powi(p as i32 - 2);
        if rng.random::<f64>() < acc {
            break a;
        }
    };
    let u = loop {
        let g: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let gc = dot(&g, c);
        let h: Vec<f64> = g.iter().zip(c).map(|(a, b)| a - gc * b).collect();
        if let Some(u) = normalized(&h) {
            break u;
        }
    };
    let (s, co) = alpha.sin_cos();
    let plus: Vec<f64> = c.iter().zip(&u).map(|(a, b)| co * a + s * b).collect();
    let minus: Vec<f64> = c.iter().zip(&u).map(|(a, b)| co * a - s * b).collect();
    [
        normalized(&plus).expect("unit combination"),
        normalized(&minus).expect("unit combination"),
    ]
}

fn angle_between(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b).clamp(-1.0, 1.0).acos()
}

/// Corridor-weighted mean direction of the level set, by uniform sampling on
/// an adaptive spherical cap.
pub fn mean_midargmin(ds: &Dataset, level: &LevelSet, cfg: &MidpointConfig) -> Result<MeanMidpoint> {
    check_level(ds, level)?;
    let wc = witness_corridor(ds, level)?;
    let p = ds.p();
    if p == 1 {
        let omega = level.witness_omega.clone();
        return Ok(MeanMidpoint {
            gamma: wc.mid(),
            omega,
            corridor: wc,
            rounds: 0,
            m_n: 0,
            cap: 0.0,
            hits: 1,
            best_sampled: None,
        });
    }
    if cfg.r0 == 0 || cfg.m_n == 0 {
        return Err(Error::Config("r0 and m_n must be positive".into()));
    }
    // Centre on the widest-corridor direction: it lies deep inside the region and
    // every separating direction is within a right angle of it.
    let centre = match mode_qp(ds, level, &wc) {
        Ok(m) => m.omega,
        Err(_) => level.witness_omega.clone(),
    };
    let proj_cols: Vec<&[f64]> = (0..ds.n()).map(|i| ds.x_row(i)).collect();
    let mut cap = cfg.cap0.min(PI / 2.0);
    let mut m_n = cfg.m_n;
    let mut widened = false;
    for round in 0..cfg.max_rounds {
        let mut rng = rng_for(cfg.seed, &[TAG_MIDPOINT, round as u64]);
        let cands: Vec<Vec<f64>> = (0..m_n.div_ceil(2))
            .flat_map(|_| sample_cap_pair(&centre, cap, &mut rng))
            .take(m_n)
            .collect();
        let corr: Vec<Corridor> = cands
            .par_iter()
            .map(|w| {
                let proj: Vec<f64> = proj_cols.iter().map(|x| dot(x, w)).collect();
                corridor_from_projection(&proj, &level.v)
            })
            .collect();
        let hits: Vec<usize> = (0..m_n).filter(|&j| corr[j].c_r > 0.0).collect();
        let max_angle = hits.iter().map(|&j| angle_between(&cands[j], &centre)).fold(0.0, f64::max);
        if hits.is_empty() {
            if widened {
                m_n *= 2;
            } else {
                cap *= 0.5;
            }
            continue;
        }
        if max_angle > 0.5 * cap && cap < PI / 2.0 {
            cap = (2.0 * cap).min(PI / 2.0);
            widened = true;
            continue;
        }
        if max_angle < 0.25 * cap && !widened {
            cap *= 0.5;
            continue;
        }
        if hits.len() < cfg.r0 {
            m_n *= 2;
            continue;
        }
        let mut acc = vec![0.0; p];
        for &j in &hits {
            for k in 0..p {
                acc[k] += cands[j][k] * corr[j].c_r;
            }
        }
        let omega = normalized(&acc).ok_or_else(|| Error::Consistency("zero weighted sum".into()))?;
        let c = corridor(ds, &omega, level);
        let gamma = c.mid();
        if !(c.c_r > 0.0) || !reproduces(ds, &omega, gamma, level) {
            m_n *= 2;
            continue;
        }
        let best = hits
            .iter()
            .copied()
            .max_by(|&a, &b| corr[a].c_r.total_cmp(&corr[b].c_r).then(b.cmp(&a)))
            .map(|j| (cands[j].clone(), corr[j].c_r));
        return Ok(MeanMidpoint {
            omega,
            gamma,
            corridor: c,
            rounds: round + 1,
            m_n,
            cap,
            hits: hits.len(),
            best_sampled: best,
        });
    }
    Err(Error::Convergence(format!(
        "mean-midpoint sampler did not meet its stopping rule in {} rounds",
        cfg.max_rounds
    )))
}

fn mode_qp(ds: &Dataset, level: &LevelSet, wc: &Corridor) -> Result<ModeMidpoint> {
    let p = ds.p();
    let w0: Vec<f64> = level.witness_omega.iter().map(|a| 2.0 * a / wc.c_r).collect();
    let b0 = 2.0 * wc.mid() / wc.c_r;
    let sol = max_margin(ds.x_flat(), p, &level.v, &w0, b0)?;
    let omega = normalized(&sol.w).ok_or_else(|| Error::Consistency("zero QP direction".into()))?;
    let c = corridor(ds, &omega, level);
    Ok(ModeMidpoint {
        gamma: c.mid(),
        gamma_star: c.c_l,
        omega,
        corridor: c,
        iterations: sol.iterations,
    })
}

/// Direction with the widest corridor over the level set.
pub fn mode_midargmin(ds: &Dataset, level: &LevelSet, cfg: &MidpointConfig) -> Result<ModeMidpoint> {
    check_level(ds, level)?;
    let wc = witness_corridor(ds, level)?;
    if ds.p() == 1 {
        return Ok(ModeMidpoint {
            omega: level.witness_omega.clone(),
            gamma: wc.mid(),
            gamma_star: wc.c_l,
            corridor: wc,
            iterations: 0,
        });
    }
    let out = match cfg.mode_method {
        ModeMethod::Qp => mode_qp(ds, level, &wc)?,
        ModeMethod::Sampled => {
            let mean = mean_midargmin(ds, level, cfg)?;
            let (omega, _) = mean
                .best_sampled
                .ok_or_else(|| Error::Consistency("sampler returned no candidates".into()))?;
            let c = corridor(ds, &omega, level);
            ModeMidpoint {
                gamma: c.mid(),
                gamma_star: c.c_l,
                omega,
                corridor: c,
                iterations: mean.rounds,
            }
        }
    };
    if !(out.corridor.c_r > 0.0) || !reproduces(ds, &out.omega, out.gamma, level) {
        return Err(Error::Consistency("mode midpoint left the level set".into()));
    }
    Ok(out)
}

/// Fixes the sign ambiguity `(beta, delta, omega, gamma) ~ (delta, beta, -omega, -gamma)`
/// by making the first nonzero coordinate of omega positive.
pub fn canonicalize_orientation(theta: &ChangePlaneParams) -> ChangePlaneParams {
    let first = theta.omega.iter().copied().find(|&w| w != 0.0).unwrap_or(1.0);
    if first < 0.0 {
        ChangePlaneParams {
            beta: theta.delta.clone(),
            delta: theta.beta.clone(),
            omega: theta.omega.iter().map(|w| -w).collect(),
            gamma: -theta.gamma,
        }
    } else {
        theta.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds2(points: &[[f64; 2]]) -> Dataset {
        let n = points.len();
        let x: Vec<f64> = points.iter().flat_map(|p| p.iter().copied()).collect();
        Dataset::new(vec![0.0; n], vec![1.0; n], x, 1, 2).unwrap()
    }

    #[test]
    fn signs_and_corridor_p1() {
        let ds = Dataset::new(vec![0.0; 4], vec![1.0; 4], vec![0.2, 1.0, 1.7, -0.4], 1, 1).unwrap();
        let lv = induced_signs(&ds, &[1.0], 1.0);
        assert_eq!(lv.v, vec![-1, -1, 1, -1]);
        let c = corridor(&ds, &[1.0], &lv);
        assert_eq!((c.c_l, c.c_u), (1.0, 1.7));
        let all_left = induced_signs(&ds, &[1.0], 5.0);
        assert!(all_left.v.iter().all(|&s| s == -1));
    }

    #[test]
    fn orthogonal_direction_has_no_corridor() {
        let ds = ds2(&[[-1.0, 0.5], [-1.0, -0.5], [1.0, 0.5], [1.0, -0.5]]);
        let lv = induced_signs(&ds, &[1.0, 0.0], 0.0);
        assert!(corridor(&ds, &[0.0, 1.0], &lv).c_r <= 0.0);
        assert!(corridor(&ds, &[1.0, 0.0], &lv).c_r > 0.0);
    }

    #[test]
    fn p1_midpoints_coincide() {
        let ds = Dataset::new(vec![0.0; 4], vec![1.0; 4], vec![0.0, 1.0, 2.0, 3.0], 1, 1).unwrap();
        let lv = induced_signs(&ds, &[-1.0], -1.5);
        let cfg = MidpointConfig::default();
        let a = mean_midargmin(&ds, &lv, &cfg).unwrap();
        let b = mode_midargmin(&ds, &lv, &cfg).unwrap();
        assert_eq!(a.omega, vec![-1.0]);
        assert_eq!((a.omega.clone(), a.gamma), (b.omega.clone(), b.gamma));
        assert_eq!(a.gamma, -1.5);
    }

    #[test]
    fn two_point_mode() {
        let ds = ds2(&[[-1.0, 0.0], [1.0, 0.0]]);
        let w = normalized(&[1.0, 0.3]).unwrap();
        let lv = induced_signs(&ds, &w, 0.1);
        let m = mode_midargmin(&ds, &lv, &MidpointConfig::default()).unwrap();
        assert!((m.omega[0] - 1.0).abs() < 1e-12 && m.omega[1].abs() < 1e-12);
        assert!((m.corridor.c_l + 1.0).abs() < 1e-12 && (m.corridor.c_u - 1.0).abs() < 1e-12);
        assert!(m.gamma.abs() < 1e-12);
    }

    #[test]
    fn symmetric_configuration_mean() {
        let e = 0.05;
        let ds = ds2(&[[-1.0, e], [-1.0, -e], [1.0, e], [1.0, -e]]);
        let lv = induced_signs(&ds, &normalized(&[1.0, 0.2]).unwrap(), 0.0);
        let m = mean_midargmin(&ds, &lv, &MidpointConfig { seed: 3, ..Default::default() }).unwrap();
        assert!((m.omega[0] - 1.0).abs() < 1e-2 && m.omega[1].abs() < 1e-2, "{:?}", m.omega);
        assert!(m.gamma.abs() < 1e-2);
        assert!(m.corridor.contains(m.gamma));
    }

    #[test]
    fn canonicalization() {
        let th = ChangePlaneParams::new(vec![1.0], vec![2.0], vec![-1.0], 0.5).unwrap();
        let c = canonicalize_orientation(&th);
        assert_eq!(c, ChangePlaneParams::new(vec![2.0], vec![1.0], vec![1.0], -0.5).unwrap());
        assert_eq!(canonicalize_orientation(&c), c);
        let th2 = ChangePlaneParams::new(vec![1.0], vec![2.0], vec![0.0, -1.0], 0.5).unwrap();
        assert_eq!(canonicalize_orientation(&th2).omega, vec![0.0, 1.0]);
    }
}
