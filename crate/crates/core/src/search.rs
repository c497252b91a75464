//! Random search over the unit sphere for the direction maximising the
//! profiled regression sum of squares, and assembly of a complete fit.

use std::f64::consts::PI;
use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{validate_dataset, ChangePlaneParams, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{normalized, reflect_e1_to};
use crate::midpoint::{
    induced_signs, mean_midargmin, mode_midargmin, Corridor, MeanMidpoint, MidpointConfig, ModeMidpoint,
};
use crate::objective::{
    least_squares_for_mask, mask_from_projection, profile_fast, ssr_for_mask, ProfileWorkspace, SplitRule,
};
use crate::rng::{rng_for, TAG_SEARCH};

/// Largest angle grid accepted by [`sample_local_sphere`].
pub const MAX_GRID: usize = 1 << 22;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Angles per chart coordinate; `None` picks 64, 32 or 16 by dimension.
    pub m0: Option<usize>,
    /// Local candidates per iteration.
    pub m: usize,
    pub a_decay: f64,
    pub a_init: f64,
    /// Stop after this many iterations without relative improvement above 1e-10.
    pub n0: usize,
    pub n_initial: usize,
    pub max_iter: usize,
    /// `None` means `max(d, 2)`.
    pub min_subgroup: Option<usize>,
    /// Lower eigenvalue bound for subgroup designs; `None` only requires positive definiteness.
    pub c3: Option<f64>,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            m0: None,
            m: 256,
            a_decay: 0.8,
            a_init: 1.0,
            n0: 20,
            n_initial: 4096,
            max_iter: 400,
            min_subgroup: None,
            c3: None,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn m0_for(&self, p: usize) -> usize {
        self.m0.unwrap_or(match p {
            0..=2 => 64,
            3 => 32,
            _ => 16,
        })
    }

    pub fn rule(&self, d: usize) -> SplitRule {
        SplitRule {
            min_size: self.min_subgroup.unwrap_or(d.max(2)),
            c3: self.c3,
        }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.a_decay > 0.0 && self.a_decay < 1.0) {
            return Err(Error::Config("a_decay must lie in (0, 1)".into()));
        }
        if !(self.a_init > 0.0 && self.a_init <= 1.0) {
            return Err(Error::Config("a_init must lie in (0, 1]".into()));
        }
        if self.n0 == 0 || self.m == 0 || self.n_initial == 0 || self.max_iter == 0 {
            return Err(Error::Config("n0, m, n_initial and max_iter must be positive".into()));
        }
        if self.m0 == Some(0) {
            return Err(Error::Config("m0 must be positive".into()));
        }
        if let Some(c3) = self.c3 {
            if !(c3 >= 0.0) {
                return Err(Error::Config("c3 must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub best_ssr: f64,
    pub span: f64,
    pub candidates: usize,
    /// Elapsed time; kept out of serialized output so files stay reproducible.
    #[serde(skip)]
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub rows: Vec<TraceRow>,
}

impl SearchTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,ssr,span,candidates\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.iteration, r.best_ssr, r.span, r.candidates));
        }
        s
    }
}

pub fn sample_uniform_sphere_with<R: Rng>(p: usize, m: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..m)
        .map(|_| {
            if p == 1 {
                return vec![if rng.random_bool(0.5) { 1.0 } else { -1.0 }];
            }
            loop {
                let g: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
                if let Some(u) = normalized(&g) {
                    break u;
                }
            }
        })
        .collect()
}

/// `m` independent uniform points on the unit sphere in `p` dimensions.
pub fn sample_uniform_sphere(p: usize, m: usize, seed: u64) -> Vec<Vec<f64>> {
    sample_uniform_sphere_with(p, m, &mut rng_for(seed, &[TAG_SEARCH, u64::MAX]))
}

/// Point of the hemisphere around `e1` with chart angles `phi`:
/// `u <- (cos(phi_k) u, sin(phi_k))`, starting from `u = (1)`.
fn chart_point(phi: &[f64]) -> Vec<f64> {
    let mut u = vec![1.0];
    for &a in phi {
        let (s, c) = a.sin_cos();
        for v in u.iter_mut() {
            *v *= c;
        }
        u.push(s);
    }
    u
}

/// Surface element of [`chart_point`]: `prod_k cos(phi_k)^k`.
fn chart_jacobian(phi: &[f64]) -> f64 {
    phi.iter().enumerate().map(|(k, a)| a.cos().powi(k as i32)).product()
}

pub fn sample_local_sphere_with<R: Rng>(
    center: &[f64],
    a: f64,
    m0: usize,
    m: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let p = center.len();
    if !(a > 0.0 && a <= 1.0) {
        return Err(Error::Config("span must lie in (0, 1]".into()));
    }
    if p == 1 {
        return Ok(vec![center.to_vec(); m]);
    }
    let dims = p - 1;
    let cells = (0..dims).try_fold(1usize, |acc, _| acc.checked_mul(m0)).filter(|&c| c <= MAX_GRID);
    let Some(cells) = cells else {
        return Err(Error::Config(format!(
            "angle grid m0^(p-1) exceeds {MAX_GRID} cells; use a smaller m0"
        )));
    };
    let half = a * PI / 2.0;
    let angles: Vec<Vec<f64>> = (0..dims)
        .map(|_| (0..m0).map(|_| rng.random_range(-half..half)).collect())
        .collect();
    let decode = |mut idx: usize| -> Vec<f64> {
        let mut phi = vec![0.0; dims];
        for k in 0..dims {
            phi[k] = angles[k][idx % m0];
            idx /= m0;
        }
        phi
    };
    let weights: Vec<f64> = (0..cells).map(|c| chart_jacobian(&decode(c))).collect();
    let dist = WeightedIndex::new(&weights).map_err(|e| Error::Consistency(e.to_string()))?;
    Ok((0..m)
        .map(|_| {
            let u = chart_point(&decode(dist.sample(rng)));
            let w = reflect_e1_to(center, &u);
            normalized(&w).expect("unit vector")
        })
        .collect())
}

/// `m` draws near `center`: chart angles within `a * [-pi/2, pi/2)`, weighted
/// by the surface element so that `a = 1` is uniform on the hemisphere.
pub fn sample_local_sphere(center: &[f64], a: f64, m0: usize, m: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    sample_local_sphere_with(center, a, m0, m, &mut rng_for(seed, &[TAG_SEARCH, u64::MAX - 1]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub omega: Vec<f64>,
    pub gamma: f64,
    pub ssr: f64,
    pub trace: SearchTrace,
}

fn evaluate(ds: &Dataset, cands: &[Vec<f64>], rule: &SplitRule) -> Vec<Option<(f64, f64)>> {
    cands
        .par_iter()
        .map_init(
            || ProfileWorkspace::new(ds.n(), ds.d()),
            |ws, w| match profile_fast(ds, w, rule, ws) {
                Ok(Some(pr)) => Some((pr.gamma, pr.ssr)),
                _ => None,
            },
        )
        .collect()
}

/// First index within a relative 1e-12 of the best value, so rounding noise
/// between equivalent candidates cannot change the choice.
fn pick_best(vals: &[Option<(f64, f64)>]) -> Option<usize> {
    let max = vals.iter().flatten().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let tol = 1e-12 * max.abs().max(1e-300);
    vals.iter().position(|v| v.is_some_and(|(_, s)| s >= max - tol))
}

pub fn maximize_ssr(ds: &Dataset, cfg: &SearchConfig) -> Result<SearchOutcome> {
    cfg.check()?;
    validate_dataset(ds)?;
    let rule = cfg.rule(ds.d());
    let p = ds.p();
    let start = Instant::now();
    let mut trace = SearchTrace::default();
    let refine = |omega: Vec<f64>, gamma: f64, trace: SearchTrace| {
        let ssr = ssr_for_mask(ds, &mask_from_projection(&ds.project(&omega), gamma));
        SearchOutcome { omega, gamma, ssr, trace }
    };
    if p == 1 {
        let cands = vec![vec![1.0], vec![-1.0]];
        let vals = evaluate(ds, &cands, &rule);
        let best = pick_best(&vals).ok_or(Error::NoFeasibleSplit)?;
        let (gamma, ssr) = vals[best].expect("picked feasible");
        trace.rows.push(TraceRow {
            iteration: 0,
            best_ssr: ssr,
            span: 1.0,
            candidates: 2,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        return Ok(refine(cands[best].clone(), gamma, trace));
    }
    let m0 = cfg.m0_for(p);
    let mut rng = rng_for(cfg.seed, &[TAG_SEARCH, 0]);
    let cands = sample_uniform_sphere_with(p, cfg.n_initial, &mut rng);
    let vals = evaluate(ds, &cands, &rule);
    let best = pick_best(&vals).ok_or(Error::NoFeasibleSplit)?;
    let mut omega = cands[best].clone();
    let (mut gamma, mut best_ssr) = vals[best].expect("picked feasible");
    trace.rows.push(TraceRow {
        iteration: 0,
        best_ssr,
        span: cfg.a_init,
        candidates: cands.len(),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    });
    let mut stall = 0;
    let mut span = cfg.a_init;
    for iter in 1..=cfg.max_iter {
        span *= cfg.a_decay;
        let mut rng = rng_for(cfg.seed, &[TAG_SEARCH, iter as u64]);
        let cands = sample_local_sphere_with(&omega, span, m0, cfg.m, &mut rng)?;
        let vals = evaluate(ds, &cands, &rule);
        let mut improved = false;
        if let Some(j) = pick_best(&vals) {
            let (g, s) = vals[j].expect("picked feasible");
            let scale = best_ssr.abs().max(1e-300);
            if s > best_ssr + 1e-12 * scale {
                improved = s > best_ssr + 1e-10 * scale;
                omega = cands[j].clone();
                gamma = g;
                best_ssr = s;
            }
        }
        stall = if improved { 0 } else { stall + 1 };
        trace.rows.push(TraceRow {
            iteration: iter,
            best_ssr,
            span,
            candidates: cands.len(),
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
        if stall >= cfg.n0 {
            break;
        }
    }
    Ok(refine(omega, gamma, trace))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub search: SearchConfig,
    pub midpoint: MidpointConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub n: usize,
    pub d: usize,
    pub p: usize,
    /// Raw maximiser returned by the search.
    pub theta_tilde: ChangePlaneParams,
    /// Mean midpoint of the argmin level set.
    pub theta_hat: ChangePlaneParams,
    /// Mode (widest corridor) midpoint of the argmin level set.
    pub theta_check: ChangePlaneParams,
    pub gamma_check_star: f64,
    pub m_n: f64,
    pub ssr: f64,
    pub yty: f64,
    pub n_left: usize,
    pub n_right: usize,
    pub corridor_hat: Corridor,
    pub corridor_check: Corridor,
    /// Both midpoints reproduce the partition of the raw maximiser.
    pub closure_ok: bool,
    pub mean_midpoint: MeanMidpoint,
    pub mode_midpoint: ModeMidpoint,
    pub trace: SearchTrace,
    pub warnings: Vec<String>,
}

impl FitResult {
    /// Copy with all three parameter vectors oriented so the first nonzero
    /// coordinate of omega is positive.
    pub fn canonical(&self) -> FitResult {
        use crate::midpoint::canonicalize_orientation as c;
        let mut out = self.clone();
        out.theta_tilde = c(&self.theta_tilde);
        out.theta_hat = c(&self.theta_hat);
        out.theta_check = c(&self.theta_check);
        if out.theta_check.omega != self.theta_check.omega {
            out.gamma_check_star = -self.gamma_check_star;
        }
        out
    }
}

pub fn fit(ds: &Dataset, cfg: &FitConfig) -> Result<FitResult> {
    let found = maximize_ssr(ds, &cfg.search)?;
    let mask = mask_from_projection(&ds.project(&found.omega), found.gamma);
    let ls = least_squares_for_mask(ds, &mask);
    let (beta, delta) = match (ls.beta.clone(), ls.delta.clone()) {
        (Some(b), Some(d)) => (b, d),
        _ => return Err(Error::Consistency("search returned a one-sided split".into())),
    };
    let level = induced_signs(ds, &found.omega, found.gamma);
    let mid_cfg = MidpointConfig {
        seed: crate::rng::derive_seed(cfg.midpoint.seed ^ cfg.search.seed, &[0x6d6964]),
        ..cfg.midpoint.clone()
    };
    let mean = mean_midargmin(ds, &level, &mid_cfg)?;
    let mode = mode_midargmin(ds, &level, &mid_cfg)?;
    let mk = |omega: &[f64], gamma: f64| ChangePlaneParams {
        beta: beta.clone(),
        delta: delta.clone(),
        omega: omega.to_vec(),
        gamma,
    };
    let closure_ok = mask_from_projection(&ds.project(&mean.omega), mean.gamma) == mask
        && mask_from_projection(&ds.project(&mode.omega), mode.gamma) == mask;
    let mut warnings = Vec::new();
    if !closure_ok {
        warnings.push("a midpoint does not reproduce the fitted partition".into());
    }
    Ok(FitResult {
        n: ds.n(),
        d: ds.d(),
        p: ds.p(),
        theta_tilde: mk(&found.omega, found.gamma),
        theta_hat: mk(&mean.omega, mean.gamma),
        theta_check: mk(&mode.omega, mode.gamma),
        gamma_check_star: mode.gamma_star,
        m_n: ls.m_value,
        ssr: ls.ssr,
        yty: ds.yty(),
        n_left: ls.n_left,
        n_right: ls.n_right,
        corridor_hat: mean.corridor,
        corridor_check: mode.corridor,
        closure_ok,
        mean_midpoint: mean,
        mode_midpoint: mode,
        trace: found.trace,
        warnings,
    })
}
