//! Sampler for the joint limit law: Gaussian regression limits `W1`, `W2`
//! and the change-plane limit obtained from two marked Poisson jump streams.
//!
//! Jump `j` on the minus side sits at distance `U_j` below the plane and is
//! misclassified (cost `E_j^-`) when `g1'X~_j - g2 - U_j > 0`; jump `j` on the
//! plus side sits at `U_j` above and is misclassified (cost `E_j^+`) when
//! `g1'X~_j - g2 + U_j <= 0`. Writing `pi_j(g1) = g1'X~_j + offset_j` with
//! `offset = -U` (minus) or `+U` (plus), the sign is `V_j = +1` iff `pi_j > g2`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bootstrap::orthonormal_complement;
use crate::data::ScenarioSpec;
use crate::error::{Error, Result};
use crate::linalg::{dot, sym_factor};
use crate::lp::{maximize, LpOutcome};
use crate::midpoint::Corridor;
use crate::rng::{derive_seed, rng_for, TAG_LIMIT};
use crate::search::{sample_local_sphere_with, sample_uniform_sphere_with};

/// Source of the `(Z, X)` marks attached to jumps.
#[derive(Debug, Clone)]
pub enum MarkSource {
    /// Exact conditional law on the true plane of a simulation design.
    Scenario(ScenarioSpec),
    /// Uniform resampling of stored rows (row-major `z` and `x`).
    Empirical { z: Vec<f64>, x: Vec<f64> },
}

/// Law of the residual marks.
#[derive(Debug, Clone)]
pub enum NoiseLaw {
    Normal { sigma: f64 },
    /// `e_I + bandwidth * N(0,1)` with `I` uniform over the (already centred) residuals.
    Smoothed { centred: Vec<f64>, bandwidth: f64 },
}

impl NoiseLaw {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            NoiseLaw::Normal { sigma } => sigma * rng.sample::<f64, _>(StandardNormal),
            NoiseLaw::Smoothed { centred, bandwidth } => {
                let i = rng.random_range(0..centred.len());
                centred[i] + bandwidth * rng.sample::<f64, _>(StandardNormal)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct LimitSpec {
    /// Density of the signed distance to the plane at zero.
    pub f0: f64,
    pub sigma2: f64,
    /// `beta0 - delta0`.
    pub contrast: Vec<f64>,
    pub sigma1: DMatrix<f64>,
    pub sigma2_cov: DMatrix<f64>,
    pub omega0: Vec<f64>,
    pub gamma0: f64,
    /// `p x (p-1)` orthonormal basis of the complement of `omega0`.
    pub obar: DMatrix<f64>,
    /// Bound on `|X|` used for the acceptance box of the window.
    pub k1: f64,
    pub marks: MarkSource,
    pub noise: NoiseLaw,
    /// Maximum number of window doublings.
    pub max_growth: usize,
}

impl LimitSpec {
    pub fn p(&self) -> usize {
        self.omega0.len()
    }
    pub fn d(&self) -> usize {
        self.contrast.len()
    }

    pub fn from_scenario(spec: &ScenarioSpec) -> Result<LimitSpec> {
        spec.check()?;
        if !(spec.sigma > 0.0) {
            return Err(Error::Config("the limit law needs sigma > 0".into()));
        }
        let (s1, s2) = sigma_covariances(spec)?;
        Ok(LimitSpec {
            f0: spec.boundary_density(),
            sigma2: spec.sigma * spec.sigma,
            contrast: spec.contrast(),
            sigma1: s1,
            sigma2_cov: s2,
            omega0: spec.omega0.clone(),
            gamma0: spec.gamma0,
            obar: orthonormal_complement(&spec.omega0),
            k1: spec.x_bound(),
            marks: MarkSource::Scenario(spec.clone()),
            noise: NoiseLaw::Normal { sigma: spec.sigma },
            max_growth: 12,
        })
    }

    pub fn check(&self) -> Result<()> {
        let (p, d) = (self.p(), self.d());
        if !(self.f0 > 0.0 && self.f0.is_finite()) {
            return Err(Error::Config("f0 must be positive".into()));
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::Config("sigma2 must be positive".into()));
        }
        if self.contrast.iter().all(|&c| c == 0.0) {
            return Err(Error::Config("beta0 - delta0 must be nonzero".into()));
        }
        if self.obar.nrows() != p || self.obar.ncols() != p - 1 {
            return Err(Error::Dimension("obar must be p x (p-1)".into()));
        }
        let om = DVector::from_column_slice(&self.omega0);
        if (self.obar.transpose() * &om).amax() > 1e-10
            || (self.obar.transpose() * &self.obar - DMatrix::identity(p - 1, p - 1)).amax() > 1e-10
        {
            return Err(Error::Config("obar must be orthonormal and orthogonal to omega0".into()));
        }
        for s in [&self.sigma1, &self.sigma2_cov] {
            if s.nrows() != d || s.ncols() != d || (s - s.transpose()).amax() > 1e-10 * (1.0 + s.amax()) {
                return Err(Error::Config("Sigma matrices must be symmetric d x d".into()));
            }
            if s.clone().cholesky().is_none() {
                return Err(Error::Config("Sigma matrices must be positive definite".into()));
            }
        }
        if !(self.k1 > 0.0) {
            return Err(Error::Config("k1 must be positive".into()));
        }
        match &self.marks {
            MarkSource::Empirical { z, x } => {
                if z.is_empty() || z.len() % d != 0 || x.len() / p != z.len() / d || x.len() % p != 0 {
                    return Err(Error::Dimension("empirical marks have inconsistent shapes".into()));
                }
            }
            MarkSource::Scenario(s) => {
                if s.d() != d || s.p() != p {
                    return Err(Error::Dimension("scenario marks do not match the limit dimensions".into()));
                }
            }
        }
        if let NoiseLaw::Smoothed { centred, .. } = &self.noise {
            if centred.is_empty() {
                return Err(Error::Config("residual pool is empty".into()));
            }
        }
        Ok(())
    }
}

/// `Sigma_1 = sigma^2 E[ZZ' 1{U<=0}]^{-1}` and `Sigma_2 = sigma^2 E[ZZ' 1{U>0}]^{-1}`,
/// in closed form for the simulation designs (Z is independent of X).
pub fn sigma_covariances(spec: &ScenarioSpec) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let m = spec.z_second_moment();
    let q = spec.left_probability();
    let s2 = spec.sigma * spec.sigma;
    let inv = |w: f64| {
        (m.clone() * w)
            .try_inverse()
            .map(|i| i * s2)
            .ok_or_else(|| Error::Singular("subgroup moment matrix".into()))
    };
    Ok((inv(q)?, inv(1.0 - q)?))
}

/// Empirical counterpart `sigma^2 [n^{-1} sum 1{side} z z']^{-1}` for each side.
pub fn sigma_covariances_empirical(
    z: &[f64],
    d: usize,
    left: &[bool],
    sigma2: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = left.len();
    let mut ml = DMatrix::zeros(d, d);
    let mut mr = DMatrix::zeros(d, d);
    for i in 0..n {
        let zi = &z[i * d..(i + 1) * d];
        let m = if left[i] { &mut ml } else { &mut mr };
        for a in 0..d {
            for b in 0..d {
                m[(a, b)] += zi[a] * zi[b];
            }
        }
    }
    let inv = |m: DMatrix<f64>| {
        (m / n as f64)
            .try_inverse()
            .map(|i| i * sigma2)
            .ok_or_else(|| Error::Singular("subgroup moment matrix".into()))
    };
    Ok((inv(ml)?, inv(mr)?))
}

pub fn sample_w<R: Rng>(sigma: &DMatrix<f64>, rng: &mut R) -> Result<Vec<f64>> {
    let l = sym_factor(sigma).ok_or_else(|| Error::Config("covariance is not positive semidefinite".into()))?;
    let e = DVector::from_iterator(sigma.nrows(), (0..sigma.nrows()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    Ok((l * e).iter().cloned().collect())
}

/// One side's jumps. Times are cumulative exponential sums; the stream can be
/// extended without disturbing earlier jumps.
#[derive(Debug, Clone)]
pub struct JumpSide {
    pub u: Vec<f64>,
    /// `X~ = obar' X`, row-major `(p-1)` per jump.
    pub xt: Vec<f64>,
    pub z: Vec<f64>,
    pub eps: Vec<f64>,
    /// Flip cost.
    pub e: Vec<f64>,
    plus: bool,
    rng: ChaCha8Rng,
}

impl JumpSide {
    fn new(plus: bool, rng: ChaCha8Rng) -> Self {
        JumpSide { u: vec![], xt: vec![], z: vec![], eps: vec![], e: vec![], plus, rng }
    }

    /// Generates jumps until one exceeds `t`.
    fn extend_to(&mut self, spec: &LimitSpec, t: f64) {
        let exp = Exp::new(spec.f0).expect("positive rate");
        let (p, d) = (spec.p(), spec.d());
        let mut zbuf = Vec::with_capacity(d);
        let mut xbuf = Vec::with_capacity(p);
        while self.u.last().is_none_or(|&last| last <= t) {
            let prev = self.u.last().copied().unwrap_or(0.0);
            self.u.push(prev + exp.sample(&mut self.rng));
            zbuf.clear();
            xbuf.clear();
            match &spec.marks {
                MarkSource::Scenario(s) => s.draw_boundary_zx(&mut self.rng, &mut zbuf, &mut xbuf),
                MarkSource::Empirical { z, x } => {
                    let i = self.rng.random_range(0..z.len() / d);
                    zbuf.extend_from_slice(&z[i * d..(i + 1) * d]);
                    xbuf.extend_from_slice(&x[i * p..(i + 1) * p]);
                }
            }
            for c in 0..p - 1 {
                self.xt.push((0..p).map(|r| spec.obar[(r, c)] * xbuf[r]).sum());
            }
            let eps = spec.noise.sample(&mut self.rng);
            let cz = dot(&spec.contrast, &zbuf);
            let cross = 2.0 * eps * cz;
            self.e.push(cz * cz + if self.plus { -cross } else { cross });
            self.z.extend_from_slice(&zbuf);
            self.eps.push(eps);
        }
    }

    /// Jumps up to and including the first one at or beyond `t`.
    pub fn count_through(&self, t: f64) -> usize {
        self.u.iter().position(|&u| u >= t).map_or(self.u.len(), |i| i + 1)
    }

    pub fn count_in(&self, lo: f64, hi: f64) -> usize {
        self.u.iter().filter(|&&u| u > lo && u <= hi).count()
    }
}

#[derive(Debug, Clone)]
pub struct JumpProcessDraw {
    pub minus: JumpSide,
    pub plus: JumpSide,
    pub k: f64,
    /// Jumps of each side in `(2k, 4k]`.
    pub gate_minus: usize,
    pub gate_plus: usize,
    q: usize,
}

impl JumpProcessDraw {
    pub fn gate(&self) -> bool {
        self.gate_minus >= 1 && self.gate_plus >= 1
    }

    fn set_window(&mut self, spec: &LimitSpec, k: f64) {
        self.minus.extend_to(spec, 4.0 * k);
        self.plus.extend_to(spec, 4.0 * k);
        self.k = k;
        self.gate_minus = self.minus.count_in(2.0 * k, 4.0 * k);
        self.gate_plus = self.plus.count_in(2.0 * k, 4.0 * k);
    }

    /// Flattened truncated jump list (minus side first).
    pub fn jumps(&self) -> Jumps {
        let q = self.q;
        let mut j = Jumps { q, xt: vec![], offset: vec![], cost: vec![], minus: vec![] };
        for (side, is_minus) in [(&self.minus, true), (&self.plus, false)] {
            let m = side.count_through(4.0 * self.k);
            for i in 0..m {
                j.xt.extend_from_slice(&side.xt[i * q..(i + 1) * q]);
                j.offset.push(if is_minus { -side.u[i] } else { side.u[i] });
                j.cost.push(side.e[i]);
                j.minus.push(is_minus);
            }
        }
        j
    }
}

pub fn sample_jump_process(spec: &LimitSpec, k: f64, seed: u64) -> Result<JumpProcessDraw> {
    spec.check()?;
    if !(k > 0.0) {
        return Err(Error::Config("window must be positive".into()));
    }
    let mut draw = new_draw(spec, seed);
    draw.set_window(spec, k);
    Ok(draw)
}

fn new_draw(spec: &LimitSpec, seed: u64) -> JumpProcessDraw {
    JumpProcessDraw {
        minus: JumpSide::new(false, rng_for(seed, &[TAG_LIMIT, 1])),
        plus: JumpSide::new(true, rng_for(seed, &[TAG_LIMIT, 2])),
        k: 0.0,
        gate_minus: 0,
        gate_plus: 0,
        q: spec.p() - 1,
    }
}

/// Truncated jumps in the `pi_j(g1) = g1'xt_j + offset_j` form.
#[derive(Debug, Clone, PartialEq)]
pub struct Jumps {
    pub q: usize,
    pub xt: Vec<f64>,
    pub offset: Vec<f64>,
    pub cost: Vec<f64>,
    pub minus: Vec<bool>,
}

impl Jumps {
    pub fn len(&self) -> usize {
        self.offset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offset.is_empty()
    }

    pub fn pi(&self, j: usize, g1: &[f64]) -> f64 {
        dot(&self.xt[j * self.q..(j + 1) * self.q], g1) + self.offset[j]
    }

    pub fn signs_at(&self, g1: &[f64], g2: f64) -> Vec<i8> {
        (0..self.len()).map(|j| if self.pi(j, g1) > g2 { 1 } else { -1 }).collect()
    }

    /// The default signs: minus jumps below (`-1`), plus jumps above (`+1`).
    pub fn default_signs(&self) -> Vec<i8> {
        self.minus.iter().map(|&m| if m { -1 } else { 1 }).collect()
    }

    pub fn objective(&self, signs: &[i8]) -> f64 {
        (0..self.len())
            .filter(|&j| (self.minus[j] && signs[j] > 0) || (!self.minus[j] && signs[j] < 0))
            .map(|j| self.cost[j])
            .sum()
    }

    pub fn q02(&self, g1: &[f64], g2: f64) -> f64 {
        let mut total = 0.0;
        for j in 0..self.len() {
            let plus = self.pi(j, g1) > g2;
            if plus == self.minus[j] {
                total += self.cost[j];
            }
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Q02Min {
    pub signs: Vec<i8>,
    pub g1: Vec<f64>,
    pub g2: f64,
    pub value: f64,
    pub exact: bool,
}

/// Largest number of candidate vertices (`(q+1)`-subsets of jumps) enumerated exactly.
pub const ENUM_MAX_VERTICES: u64 = 100_000;

fn binomial(n: usize, k: usize) -> u64 {
    (0..k).fold(1u64, |acc, i| acc.saturating_mul((n - i) as u64) / (i as u64 + 1))
}

/// Exact enumeration is used while `q <= 3` and the vertex count fits the budget.
pub fn uses_enumeration(q: usize, jumps: usize) -> bool {
    q <= 3 && (jumps < q + 1 || binomial(jumps, q + 1) <= ENUM_MAX_VERTICES)
}

pub fn minimize_q02(jumps: &Jumps, seed: u64) -> Q02Min {
    if jumps.q == 0 {
        scan_1d(jumps)
    } else if jumps.q == 1 {
        sweep_lines(jumps)
    } else if uses_enumeration(jumps.q, jumps.len()) {
        enumerate_cells(jumps)
    } else {
        random_search(jumps, seed)
    }
}

/// Exhaustive scan over `g2` for `p = 1`, on values `pi_j = offset_j`.
pub fn scan_1d(jumps: &Jumps) -> Q02Min {
    let vals: Vec<f64> = jumps.offset.clone();
    let (gap, value) = best_gap(&vals, jumps);
    Q02Min {
        signs: jumps.signs_at(&[], gap),
        g1: vec![],
        g2: gap,
        value,
        exact: true,
    }
}

/// Best threshold for values `vals`: `V_j = +1` iff `vals_j > t`. Returns a
/// representative threshold inside the best gap and the objective there.
fn best_gap(vals: &[f64], jumps: &Jumps) -> (f64, f64) {
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)));
    // threshold below everything: every jump has V = +1
    let mut q: f64 = (0..vals.len()).filter(|&j| jumps.minus[j]).map(|j| jumps.cost[j]).sum();
    let lo = vals[order[0]];
    let hi = vals[order[order.len() - 1]];
    let mut best = (lo - 1.0 - lo.abs(), q);
    let mut k = 0;
    while k < order.len() {
        let v = vals[order[k]];
        while k < order.len() && vals[order[k]] == v {
            let j = order[k];
            q += if jumps.minus[j] { -jumps.cost[j] } else { jumps.cost[j] };
            k += 1;
        }
        let t = if k < order.len() {
            0.5 * (v + vals[order[k]])
        } else {
            hi + 1.0 + hi.abs()
        };
        if q < best.1 {
            best = (t, q);
        }
    }
    best
}

fn solve_small(a: &mut [f64], b: &mut [f64], n: usize) -> bool {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i * n + c].abs().total_cmp(&a[j * n + c].abs())).unwrap();
        if a[piv * n + c].abs() <= 1e-12 * scale {
            return false;
        }
        if piv != c {
            for k in 0..n {
                a.swap(c * n + k, piv * n + k);
            }
            b.swap(c, piv);
        }
        for r in (c + 1)..n {
            let f = a[r * n + c] / a[c * n + c];
            for k in c..n {
                a[r * n + k] -= f * a[c * n + k];
            }
            b[r] -= f * b[c];
        }
    }
    for r in (0..n).rev() {
        let mut s = b[r];
        for k in (r + 1)..n {
            s -= a[r * n + k] * b[k];
        }
        b[r] = s / a[r * n + r];
    }
    true
}

/// Enumerates every cell of the hyperplane arrangement `{g : pi_j(g1) = g2}`
/// through its vertices: each `(q+1)`-subset of hyperplanes gives a vertex and
/// the cells around it are reached by small steps in all `2^(q+1)` directions.
pub fn enumerate_cells(jumps: &Jumps) -> Q02Min {
    let q = jumps.q;
    let dim = q + 1;
    let nj = jumps.len();
    // normal of hyperplane j acting on g = (g1, g2) is (xt_j, -1); n_j.g + offset_j = 0 on it
    let normal = |j: usize, out: &mut [f64]| {
        out[..q].copy_from_slice(&jumps.xt[j * q..(j + 1) * q]);
        out[q] = -1.0;
    };
    let eval = |g: &[f64]| -> f64 { jumps.q02(&g[..q], g[q]) };
    let mut best_g = vec![0.0; dim];
    let mut best_v = eval(&best_g);
    let mut idx: Vec<usize> = (0..dim).collect();
    let mut a = vec![0.0; dim * dim];
    let mut rhs = vec![0.0; dim];
    let mut nrow = vec![0.0; dim];
    if nj >= dim {
        loop {
            for (r, &j) in idx.iter().enumerate() {
                normal(j, &mut nrow);
                a[r * dim..(r + 1) * dim].copy_from_slice(&nrow);
                rhs[r] = -jumps.offset[j];
            }
            let mut amat = a.clone();
            if solve_small(&mut amat, &mut rhs, dim) {
                let vertex = rhs.clone();
                let vscale = 1.0 + vertex.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                for mask in 0..(1usize << dim) {
                    let mut dir: Vec<f64> = (0..dim).map(|r| if mask >> r & 1 == 1 { 1.0 } else { -1.0 }).collect();
                    let mut amat = a.clone();
                    if !solve_small(&mut amat, &mut dir, dim) {
                        continue;
                    }
                    let dscale = dir.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
                    let step = 1e-7 * vscale / dscale;
                    let g: Vec<f64> = vertex.iter().zip(&dir).map(|(v, d)| v + step * d).collect();
                    let val = eval(&g);
                    if val < best_v {
                        best_v = val;
                        best_g = g;
                    }
                }
            }
            // next combination
            let mut i = dim;
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                if idx[i] < nj - dim + i {
                    idx[i] += 1;
                    for k in (i + 1)..dim {
                        idx[k] = idx[k - 1] + 1;
                    }
                    break;
                }
                if i == 0 {
                    idx.clear();
                    break;
                }
            }
            if idx.is_empty() {
                break;
            }
        }
    }
    Q02Min {
        signs: jumps.signs_at(&best_g[..q], best_g[q]),
        g1: best_g[..q].to_vec(),
        g2: best_g[q],
        value: best_v,
        exact: true,
    }
}

/// Exact minimiser for `q = 1`. Every cell of the line arrangement
/// `g2 = x_j g1 + offset_j` borders some edge, so walking along each line past
/// its sorted crossings and scoring both sides of every edge visits all cells.
pub fn sweep_lines(jumps: &Jumps) -> Q02Min {
    let nj = jumps.len();
    let x = &jumps.xt;
    let off = &jumps.offset;
    let wrong = |j: usize, v_plus: bool| v_plus == jumps.minus[j];
    let mut best_v = jumps.q02(&[0.0], 0.0);
    let mut best_g = (0.0, 0.0);
    let mut found: Option<(usize, f64, bool)> = None;
    let mut cross: Vec<(f64, usize)> = Vec::with_capacity(nj);
    for i in 0..nj {
        let scale = 1.0 + off[i].abs();
        // lines identical to i switch together with it
        let same = |j: usize| x[j] == x[i] && (off[j] - off[i]).abs() <= 1e-14 * scale;
        cross.clear();
        let mut base = 0.0;
        let mut own_above = 0.0;
        let mut own_below = 0.0;
        for j in 0..nj {
            if same(j) {
                own_above += if wrong(j, false) { jumps.cost[j] } else { 0.0 };
                own_below += if wrong(j, true) { jumps.cost[j] } else { 0.0 };
                continue;
            }
            let dx = x[j] - x[i];
            // V_j on line i far to the left: pi_j - pi_i = dx g1 + (off_j - off_i)
            let v_plus = if dx != 0.0 { dx < 0.0 } else { off[j] > off[i] };
            if wrong(j, v_plus) {
                base += jumps.cost[j];
            }
            if dx != 0.0 {
                cross.push((-(off[j] - off[i]) / dx, j));
            }
        }
        cross.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut consider = |base: f64, seg: usize| {
            for (above, own) in [(true, own_above), (false, own_below)] {
                let v = base + own;
                if v < best_v {
                    best_v = v;
                    found = Some((i, seg as f64, above));
                }
            }
        };
        consider(base, 0);
        let mut k = 0;
        let mut seg = 0;
        while k < cross.len() {
            let t = cross[k].0;
            let tol = 1e-12 * (1.0 + t.abs());
            while k < cross.len() && cross[k].0 - t <= tol {
                let j = cross[k].1;
                // V_j flips on crossing
                let before = (x[j] - x[i]) < 0.0;
                base += if wrong(j, !before) { jumps.cost[j] } else { 0.0 } - if wrong(j, before) { jumps.cost[j] } else { 0.0 };
                k += 1;
            }
            seg += 1;
            consider(base, seg);
        }
        if let Some((fi, fseg, above)) = found {
            if fi == i {
                // representative point in the middle of the edge
                let seg = fseg as usize;
                let mut ends = vec![];
                let mut k = 0;
                while k < cross.len() {
                    let t = cross[k].0;
                    ends.push(t);
                    let tol = 1e-12 * (1.0 + t.abs());
                    while k < cross.len() && cross[k].0 - t <= tol {
                        k += 1;
                    }
                }
                let g1 = match (seg.checked_sub(1).map(|s| ends[s]), ends.get(seg)) {
                    (None, None) => 0.0,
                    (None, Some(&r)) => r - 1.0 - r.abs(),
                    (Some(l), None) => l + 1.0 + l.abs(),
                    (Some(l), Some(&r)) => 0.5 * (l + r),
                };
                let on = x[i] * g1 + off[i];
                let gap = (0..nj)
                    .filter(|&j| !same(j))
                    .map(|j| (x[j] * g1 + off[j] - on).abs())
                    .fold(f64::INFINITY, f64::min);
                let eps = if gap.is_finite() { 0.5 * gap } else { 1.0 };
                best_g = (g1, if above { on + eps } else { on - eps });
                found = None;
            }
        }
    }
    let g1 = vec![best_g.0];
    let signs = jumps.signs_at(&g1, best_g.1);
    Q02Min { value: jumps.objective(&signs), signs, g1, g2: best_g.1, exact: true }
}

/// Randomised search over homogeneous directions `u = (g1, 1)/|(g1, 1)|`,
/// profiling the threshold exactly for each direction.
pub fn random_search(jumps: &Jumps, seed: u64) -> Q02Min {
    let q = jumps.q;
    let dim = q + 1;
    let nj = jumps.len();
    let eval = |u: &[f64]| -> (f64, f64) {
        let vals: Vec<f64> = (0..nj)
            .map(|j| dot(&jumps.xt[j * q..(j + 1) * q], &u[..q]) + jumps.offset[j] * u[q])
            .collect();
        best_gap(&vals, jumps)
    };
    let fold = |mut u: Vec<f64>| {
        if u[q] < 0.0 {
            u.iter_mut().for_each(|v| *v = -*v);
        }
        u
    };
    let valid = |u: &[f64]| u[q] > 1e-9;
    let mut rng = rng_for(seed, &[TAG_LIMIT, 7]);
    let mut best_u = vec![0.0; dim];
    best_u[q] = 1.0;
    let (mut best_t, mut best_v) = eval(&best_u);
    let scale = 1.0 + jumps.cost.iter().map(|c| c.abs()).sum::<f64>();
    for u in sample_uniform_sphere_with(dim, 4096, &mut rng) {
        let u = fold(u);
        if !valid(&u) {
            continue;
        }
        let (t, v) = eval(&u);
        if v < best_v - 1e-12 * scale {
            best_u = u;
            best_t = t;
            best_v = v;
        }
    }
    let m0 = match dim {
        0..=2 => 64,
        3 => 32,
        _ => 16,
    };
    let mut span = 1.0;
    let mut stall = 0;
    for _ in 0..400 {
        span *= 0.8;
        let cands = sample_local_sphere_with(&best_u, span, m0, 256, &mut rng).unwrap_or_default();
        let mut improved = false;
        for u in cands {
            let u = fold(u);
            if !valid(&u) {
                continue;
            }
            let (t, v) = eval(&u);
            if v < best_v - 1e-12 * scale {
                best_u = u;
                best_t = t;
                best_v = v;
                improved = true;
            }
        }
        stall = if improved { 0 } else { stall + 1 };
        if stall >= 20 {
            break;
        }
    }
    let g1: Vec<f64> = best_u[..q].iter().map(|v| v / best_u[q]).collect();
    let g2 = best_t / best_u[q];
    let signs = jumps.signs_at(&g1, g2);
    Q02Min {
        value: jumps.objective(&signs),
        signs,
        g1,
        g2,
        exact: false,
    }
}

/// Corridor maps of the limit: `C_L = max_{V=-1} pi_j(g1)`, `C_U = min_{V=+1} pi_j(g1)`.
pub fn limit_corridor(jumps: &Jumps, signs: &[i8], g1: &[f64]) -> Corridor {
    let mut c_l = f64::NEG_INFINITY;
    let mut c_u = f64::INFINITY;
    for j in 0..jumps.len() {
        let v = jumps.pi(j, g1);
        if signs[j] < 0 {
            c_l = c_l.max(v);
        } else {
            c_u = c_u.min(v);
        }
    }
    Corridor::from_bounds(c_l, c_u)
}

/// Axis-aligned bounding box of the closed level set `{C_L(g1) <= g2 <= C_U(g1)}`
/// over `(g1, g2)`; `None` if unbounded.
pub fn level_set_box(jumps: &Jumps, signs: &[i8]) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
    let q = jumps.q;
    let dim = q + 1;
    if q == 0 {
        let c = limit_corridor(jumps, signs, &[]);
        if !(c.c_l.is_finite() && c.c_u.is_finite()) {
            return Ok(None);
        }
        return Ok(Some((vec![c.c_l], vec![c.c_u])));
    }
    let (a, b) = level_set_constraints(jumps, signs);
    let mut lo = vec![0.0; dim];
    let mut hi = vec![0.0; dim];
    for i in 0..dim {
        for (sgn, out) in [(1.0, &mut hi), (-1.0, &mut lo)] {
            let mut c = vec![0.0; dim];
            c[i] = sgn;
            match maximize(&c, &a, &b) {
                LpOutcome::Optimal { value, .. } => out[i] = sgn * value,
                LpOutcome::Unbounded => return Ok(None),
                LpOutcome::Infeasible => {
                    return Err(Error::Consistency("limit level set is empty".into()));
                }
            }
        }
    }
    Ok(Some((lo, hi)))
}

/// Rows `a x <= b` over `x = (g1, g2)` describing the closed level set.
fn level_set_constraints(jumps: &Jumps, signs: &[i8]) -> (Vec<f64>, Vec<f64>) {
    let q = jumps.q;
    let mut a = Vec::with_capacity(jumps.len() * (q + 1));
    let mut b = Vec::with_capacity(jumps.len());
    for j in 0..jumps.len() {
        let xt = &jumps.xt[j * q..(j + 1) * q];
        if signs[j] < 0 {
            // g1'xt + offset <= g2
            a.extend_from_slice(xt);
            a.push(-1.0);
            b.push(-jumps.offset[j]);
        } else {
            // g1'xt + offset >= g2
            a.extend(xt.iter().map(|v| -v));
            a.push(1.0);
            b.push(jumps.offset[j]);
        }
    }
    (a, b)
}

/// Corridor-weighted centroid of the region with a positive corridor.
/// One-dimensional regions use a midpoint rule on 2048 cells; higher
/// dimensions use 20000 uniform points in the bounding box.
pub fn limit_mean_midargmin(jumps: &Jumps, signs: &[i8], lo: &[f64], hi: &[f64], seed: u64) -> Result<(Vec<f64>, f64)> {
    let q = jumps.q;
    if q == 0 {
        let c = limit_corridor(jumps, signs, &[]);
        return Ok((vec![], c.mid()));
    }
    let mut num = vec![0.0; q];
    let mut den = 0.0;
    let mut add = |g: &[f64]| {
        let w = limit_corridor(jumps, signs, g).c_r;
        if w > 0.0 {
            for k in 0..q {
                num[k] += g[k] * w;
            }
            den += w;
        }
    };
    if q == 1 {
        let cells = 2048;
        let h = (hi[0] - lo[0]) / cells as f64;
        for i in 0..cells {
            add(&[lo[0] + (i as f64 + 0.5) * h]);
        }
    } else {
        let mut rng = rng_for(seed, &[TAG_LIMIT, 11]);
        let mut g = vec![0.0; q];
        for _ in 0..20_000 {
            for k in 0..q {
                g[k] = if hi[k] > lo[k] { rng.random_range(lo[k]..hi[k]) } else { lo[k] };
            }
            add(&g);
        }
    }
    if !(den > 0.0) {
        return Err(Error::Consistency("no positive-corridor point found in the level-set box".into()));
    }
    let g1: Vec<f64> = num.iter().map(|v| v / den).collect();
    let c = limit_corridor(jumps, signs, &g1);
    Ok((g1, c.mid()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeLimit {
    pub g1: Vec<f64>,
    pub g2: f64,
    /// The maximiser was not unique; the lexicographically smallest one is returned.
    pub non_unique: bool,
}

/// Maximises `C_R` by the linear program `max t_U - t_L` over `(g1, t_L, t_U)`.
pub fn limit_mode_midargmin(jumps: &Jumps, signs: &[i8]) -> Result<ModeLimit> {
    let q = jumps.q;
    if q == 0 {
        let c = limit_corridor(jumps, signs, &[]);
        return Ok(ModeLimit { g1: vec![], g2: c.mid(), non_unique: false });
    }
    let nv = q + 2;
    let mut a = Vec::new();
    let mut b = Vec::new();
    for j in 0..jumps.len() {
        let xt = &jumps.xt[j * q..(j + 1) * q];
        if signs[j] < 0 {
            a.extend_from_slice(xt);
            a.extend_from_slice(&[-1.0, 0.0]);
            b.push(-jumps.offset[j]);
        } else {
            a.extend(xt.iter().map(|v| -v));
            a.extend_from_slice(&[0.0, 1.0]);
            b.push(jumps.offset[j]);
        }
    }
    let mut c = vec![0.0; nv];
    c[q] = -1.0;
    c[q + 1] = 1.0;
    let (x, opt) = match maximize(&c, &a, &b) {
        LpOutcome::Optimal { x, value } => (x, value),
        LpOutcome::Unbounded => return Err(Error::Consistency("corridor width is unbounded".into())),
        LpOutcome::Infeasible => return Err(Error::Consistency("corridor program infeasible".into())),
    };
    // restrict to the optimal face and probe its extent along each g1 axis
    let tol = 1e-9 * (1.0 + opt.abs());
    let mut a_face = a.clone();
    let mut b_face = b.clone();
    let mut row = vec![0.0; nv];
    row[q] = 1.0;
    row[q + 1] = -1.0;
    a_face.extend_from_slice(&row);
    b_face.push(-(opt - tol));
    let xscale = 1.0 + x[..q].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut non_unique = false;
    for i in 0..q {
        let mut ci = vec![0.0; nv];
        ci[i] = 1.0;
        let hi = match maximize(&ci, &a_face, &b_face) {
            LpOutcome::Optimal { value, .. } => value,
            _ => f64::INFINITY,
        };
        ci[i] = -1.0;
        let lo = match maximize(&ci, &a_face, &b_face) {
            LpOutcome::Optimal { value, .. } => -value,
            _ => f64::NEG_INFINITY,
        };
        if hi - lo > 1e-6 * xscale {
            non_unique = true;
        }
    }
    let g1 = if non_unique {
        // tighter face for the lexicographic pass so the result stays optimal to rounding
        let mut a_lex = a_face.clone();
        let mut b_lex = b_face.clone();
        *b_lex.last_mut().expect("face row") = -(opt - 1e-12 * (1.0 + opt.abs()));
        let mut fixed = Vec::with_capacity(q);
        for i in 0..q {
            let mut ci = vec![0.0; nv];
            ci[i] = -1.0;
            let v = match maximize(&ci, &a_lex, &b_lex) {
                LpOutcome::Optimal { value, .. } => -value,
                _ => return Err(Error::Consistency("lexicographic corridor program failed".into())),
            };
            fixed.push(v);
            let mut r = vec![0.0; nv];
            r[i] = 1.0;
            a_lex.extend_from_slice(&r);
            b_lex.push(v + 1e-12 * xscale);
        }
        fixed
    } else {
        x[..q].to_vec()
    };
    let corr = limit_corridor(jumps, signs, &g1);
    Ok(ModeLimit { g2: corr.mid(), g1, non_unique })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Which {
    Mean,
    Mode,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitDraw {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    /// Signs of the minimising level set, minus side then plus side.
    pub signs: Vec<i8>,
    pub n_minus: usize,
    pub g_hat: Option<(Vec<f64>, f64)>,
    pub g_check: Option<(Vec<f64>, f64)>,
    /// `(obar g1_hat, g2_hat)`: limit of `(n(omega_hat - omega0), n(gamma_hat - gamma0))`.
    pub phi_hat: Option<(Vec<f64>, f64)>,
    pub phi_check: Option<(Vec<f64>, f64)>,
    pub window: f64,
    pub q02_min: f64,
    pub exact_min: bool,
    pub mode_non_unique: bool,
}

impl LimitDraw {
    /// `(W1, W2, obar g1, g2)` for the requested summary, flattened as `(beta, delta, omega, gamma)`.
    pub fn flat(&self, mode: bool) -> Option<Vec<f64>> {
        let (om, g) = if mode { self.phi_check.as_ref()? } else { self.phi_hat.as_ref()? };
        let mut v = self.w1.clone();
        v.extend_from_slice(&self.w2);
        v.extend_from_slice(om);
        v.push(*g);
        Some(v)
    }
}

fn map_phi(obar: &DMatrix<f64>, g1: &[f64], g2: f64) -> (Vec<f64>, f64) {
    let p = obar.nrows();
    // + 0.0 turns the empty sum (-0.0) into 0.0
    let om = (0..p).map(|r| (0..g1.len()).map(|c| obar[(r, c)] * g1[c]).sum::<f64>() + 0.0).collect();
    (om, g2)
}

fn in_box(lo: &[f64], hi: &[f64], k: f64, k1: f64) -> bool {
    let q = lo.len() - 1;
    let g1_radius = (0..q).map(|i| lo[i].abs().max(hi[i].abs()).powi(2)).sum::<f64>().sqrt();
    g1_radius <= 0.9 * k / k1 && lo[q].abs().max(hi[q].abs()) <= k
}

/// One full draw: Gaussian limits plus the jump pipeline with window doubling.
pub fn sample_limit_draw(spec: &LimitSpec, seed: u64, which: Which) -> Result<LimitDraw> {
    let mut wrng = rng_for(seed, &[TAG_LIMIT, 3]);
    let w1 = sample_w(&spec.sigma1, &mut wrng)?;
    let mut wrng = rng_for(seed, &[TAG_LIMIT, 4]);
    let w2 = sample_w(&spec.sigma2_cov, &mut wrng)?;
    let mut draw = new_draw(spec, seed);
    let mut k = 2.0 / spec.f0;
    for _ in 0..=spec.max_growth {
        draw.set_window(spec, k);
        if !draw.gate() {
            k *= 2.0;
            continue;
        }
        let jumps = draw.jumps();
        let min = minimize_q02(&jumps, derive_seed(seed, &[TAG_LIMIT, 5, k.to_bits()]));
        let Some((lo, hi)) = level_set_box(&jumps, &min.signs)? else {
            k *= 2.0;
            continue;
        };
        if !in_box(&lo, &hi, k, spec.k1) {
            k *= 2.0;
            continue;
        }
        let n_minus = jumps.minus.iter().filter(|&&m| m).count();
        let q = jumps.q;
        let mut out = LimitDraw {
            w1,
            w2,
            signs: min.signs.clone(),
            n_minus,
            g_hat: None,
            g_check: None,
            phi_hat: None,
            phi_check: None,
            window: k,
            q02_min: min.value,
            exact_min: min.exact,
            mode_non_unique: false,
        };
        let check = |g1: &[f64], g2: f64| -> Result<()> {
            if !limit_corridor(&jumps, &min.signs, g1).contains(g2) {
                return Err(Error::Consistency("limit midpoint outside its corridor".into()));
            }
            Ok(())
        };
        if which != Which::Mode {
            let (g1, g2) =
                limit_mean_midargmin(&jumps, &min.signs, &lo[..q], &hi[..q], derive_seed(seed, &[TAG_LIMIT, 6]))?;
            check(&g1, g2)?;
            out.phi_hat = Some(map_phi(&spec.obar, &g1, g2));
            out.g_hat = Some((g1, g2));
        }
        if which != Which::Mean {
            let m = limit_mode_midargmin(&jumps, &min.signs)?;
            check(&m.g1, m.g2)?;
            out.mode_non_unique = m.non_unique;
            out.phi_check = Some(map_phi(&spec.obar, &m.g1, m.g2));
            out.g_check = Some((m.g1, m.g2));
        }
        return Ok(out);
    }
    Err(Error::Convergence(format!(
        "limit window did not settle after {} doublings",
        spec.max_growth
    )))
}

/// `n_draws` independent draws with per-index seeds.
pub fn sample_limit_distribution(spec: &LimitSpec, n_draws: usize, seed: u64, which: Which) -> Result<Vec<LimitDraw>> {
    spec.check()?;
    (0..n_draws)
        .into_par_iter()
        .map(|i| sample_limit_draw(spec, derive_seed(seed, &[TAG_LIMIT, 100, i as u64]), which))
        .collect()
}
