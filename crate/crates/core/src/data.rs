//! Datasets, parameters, simulation designs and CSV input/output.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, min_eigenvalue, norm};
use crate::rng::{rng_for, TAG_SIMULATE};

/// Observations `(y_i, z_i, x_i)`. `z` and `x` are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    z: Vec<f64>,
    x: Vec<f64>,
    d: usize,
    p: usize,
}

impl Dataset {
    pub fn new(y: Vec<f64>, z: Vec<f64>, x: Vec<f64>, d: usize, p: usize) -> Result<Self> {
        if d == 0 || p == 0 {
            return Err(Error::Dimension(format!("need d >= 1 and p >= 1, got d={d}, p={p}")));
        }
        let n = y.len();
        if z.len() != n * d {
            return Err(Error::Dimension(format!("z has {} values, expected {}x{}", z.len(), n, d)));
        }
        if x.len() != n * p {
            return Err(Error::Dimension(format!("x has {} values, expected {}x{}", x.len(), n, p)));
        }
        Ok(Dataset { y, z, x, d, p })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn d(&self) -> usize {
        self.d
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn y(&self) -> &[f64] {
        &self.y
    }
    pub fn z_row(&self, i: usize) -> &[f64] {
        &self.z[i * self.d..(i + 1) * self.d]
    }
    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }
    pub fn z_flat(&self) -> &[f64] {
        &self.z
    }
    pub fn x_flat(&self) -> &[f64] {
        &self.x
    }

    /// `omega' x_i` for every row. All code paths that classify rows use this,
    /// so masks agree bit for bit.
    pub fn project(&self, omega: &[f64]) -> Vec<f64> {
        (0..self.n()).map(|i| dot(self.x_row(i), omega)).collect()
    }

    pub fn yty(&self) -> f64 {
        dot(&self.y, &self.y)
    }

    /// Returns a copy with rows reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Dataset {
        let mut y = Vec::with_capacity(self.n());
        let mut z = Vec::with_capacity(self.z.len());
        let mut x = Vec::with_capacity(self.x.len());
        for &i in perm {
            y.push(self.y[i]);
            z.extend_from_slice(self.z_row(i));
            x.extend_from_slice(self.x_row(i));
        }
        Dataset { y, z, x, d: self.d, p: self.p }
    }

    pub fn with_y(&self, y: Vec<f64>) -> Result<Dataset> {
        Dataset::new(y, self.z.clone(), self.x.clone(), self.d, self.p)
    }
}

/// `theta = (beta, delta, omega, gamma)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangePlaneParams {
    pub beta: Vec<f64>,
    pub delta: Vec<f64>,
    pub omega: Vec<f64>,
    pub gamma: f64,
}

impl ChangePlaneParams {
    pub fn new(beta: Vec<f64>, delta: Vec<f64>, omega: Vec<f64>, gamma: f64) -> Result<Self> {
        if beta.len() != delta.len() {
            return Err(Error::Dimension("beta and delta lengths differ".into()));
        }
        if !((norm(&omega) - 1.0).abs() <= 1e-12) {
            return Err(Error::InvalidData(format!("omega must have unit norm, got {}", norm(&omega))));
        }
        if !gamma.is_finite() {
            return Err(Error::InvalidData("gamma must be finite".into()));
        }
        Ok(ChangePlaneParams { beta, delta, omega, gamma })
    }

    /// Flattened `(beta, delta, omega, gamma)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.beta.clone();
        v.extend_from_slice(&self.delta);
        v.extend_from_slice(&self.omega);
        v.push(self.gamma);
        v
    }
}

/// Regression mean at one covariate row. Rows on the plane take the `beta` side.
pub fn mean_response(theta: &ChangePlaneParams, z_row: &[f64], x_row: &[f64]) -> Result<f64> {
    if z_row.len() != theta.beta.len() || theta.delta.len() != theta.beta.len() {
        return Err(Error::Dimension("z row length does not match beta/delta".into()));
    }
    if x_row.len() != theta.omega.len() {
        return Err(Error::Dimension("x row length does not match omega".into()));
    }
    if dot(&theta.omega, x_row) - theta.gamma <= 0.0 {
        Ok(dot(&theta.beta, z_row))
    } else {
        Ok(dot(&theta.delta, z_row))
    }
}

/// One of the three simulation designs with its true parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub model_id: u8,
    pub scenario_id: u8,
    pub sigma: f64,
    pub beta0: Vec<f64>,
    pub delta0: Vec<f64>,
    pub omega0: Vec<f64>,
    pub gamma0: f64,
}

impl ScenarioSpec {
    /// Model 1: `X ~ U(-2,2)`, `Z = (1, Bern(1/2))`, plane `x = 1`.
    /// Model 2: `X = (U(-3,3), Bern(1/2))`, `Z = (1, Bern(1/2))`, plane `(x1 - x2)/sqrt2 = 1/sqrt2`.
    /// Model 3: `X ~ U(-2,2)^3`, `Z = (1, U(-2,2)^2)`, plane `(x1 - x2 - x3)/sqrt3 = 1/sqrt3`.
    /// Scenario 1 uses `beta = 1, delta = -1`; scenario 2 uses `beta = 1.5, delta = 0.5`.
    pub fn table(model_id: u8, scenario_id: u8, sigma: f64) -> Result<Self> {
        let (d, omega0, gamma0) = match model_id {
            1 => (2, vec![1.0], 1.0),
            2 => {
                let s = 1.0 / 2f64.sqrt();
                (2, vec![s, -s], s)
            }
            3 => {
                let s = 1.0 / 3f64.sqrt();
                (3, vec![s, -s, -s], s)
            }
            _ => return Err(Error::Config(format!("model must be 1, 2 or 3, got {model_id}"))),
        };
        let (b, e) = match scenario_id {
            1 => (1.0, -1.0),
            2 => (1.5, 0.5),
            _ => return Err(Error::Config(format!("scenario must be 1 or 2, got {scenario_id}"))),
        };
        let spec = ScenarioSpec {
            model_id,
            scenario_id,
            sigma,
            beta0: vec![b; d],
            delta0: vec![e; d],
            omega0,
            gamma0,
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn d(&self) -> usize {
        if self.model_id == 3 {
            3
        } else {
            2
        }
    }

    pub fn p(&self) -> usize {
        match self.model_id {
            1 => 1,
            2 => 2,
            _ => 3,
        }
    }

    pub fn check(&self) -> Result<()> {
        let reference = match self.model_id {
            1 | 2 | 3 => ScenarioSpec::plane_of(self.model_id),
            m => return Err(Error::Config(format!("model must be 1, 2 or 3, got {m}"))),
        };
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config("sigma must be finite and nonnegative".into()));
        }
        if self.beta0.len() != self.d() || self.delta0.len() != self.d() {
            return Err(Error::Config(format!("model {} needs d = {}", self.model_id, self.d())));
        }
        if self.beta0 == self.delta0 {
            return Err(Error::Config("beta0 and delta0 must differ".into()));
        }
        let (om, ga) = reference;
        let same_plane = om.len() == self.omega0.len()
            && om.iter().zip(&self.omega0).all(|(a, b)| (a - b).abs() <= 1e-12)
            && (ga - self.gamma0).abs() <= 1e-12;
        if !same_plane {
            return Err(Error::Config(
                "omega0/gamma0 are fixed by the model; only beta0, delta0 and sigma may be changed".into(),
            ));
        }
        if ![&self.beta0, &self.delta0].iter().all(|v| v.iter().all(|a| a.is_finite())) {
            return Err(Error::Config("coefficients must be finite".into()));
        }
        Ok(())
    }

    fn plane_of(model_id: u8) -> (Vec<f64>, f64) {
        match model_id {
            1 => (vec![1.0], 1.0),
            2 => {
                let s = 1.0 / 2f64.sqrt();
                (vec![s, -s], s)
            }
            _ => {
                let s = 1.0 / 3f64.sqrt();
                (vec![s, -s, -s], s)
            }
        }
    }

    pub fn truth(&self) -> ChangePlaneParams {
        ChangePlaneParams {
            beta: self.beta0.clone(),
            delta: self.delta0.clone(),
            omega: self.omega0.clone(),
            gamma: self.gamma0,
        }
    }

    pub fn contrast(&self) -> Vec<f64> {
        self.beta0.iter().zip(&self.delta0).map(|(b, e)| b - e).collect()
    }

    fn draw_z<R: Rng + ?Sized>(&self, rng: &mut R, z: &mut Vec<f64>) {
        z.push(1.0);
        if self.model_id == 3 {
            z.push(rng.random_range(-2.0..2.0));
            z.push(rng.random_range(-2.0..2.0));
        } else {
            z.push(if rng.random_bool(0.5) { 1.0 } else { 0.0 });
        }
    }

    /// One covariate pair `(z, x)` from the design.
    pub fn draw_zx<R: Rng + ?Sized>(&self, rng: &mut R, z: &mut Vec<f64>, x: &mut Vec<f64>) {
        match self.model_id {
            1 => x.push(rng.random_range(-2.0..2.0)),
            2 => {
                x.push(rng.random_range(-3.0..3.0));
                x.push(if rng.random_bool(0.5) { 1.0 } else { 0.0 });
            }
            _ => {
                for _ in 0..3 {
                    x.push(rng.random_range(-2.0..2.0));
                }
            }
        }
        self.draw_z(rng, z);
    }

    /// One draw of `(z, x)` conditional on `x` lying on the true plane.
    pub fn draw_boundary_zx<R: Rng + ?Sized>(&self, rng: &mut R, z: &mut Vec<f64>, x: &mut Vec<f64>) {
        match self.model_id {
            1 => x.push(1.0),
            2 => {
                let x2 = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
                x.push(1.0 + x2);
                x.push(x2);
            }
            _ => loop {
                let x2: f64 = rng.random_range(-2.0..2.0);
                let x3: f64 = rng.random_range(-2.0..2.0);
                let x1 = 1.0 + x2 + x3;
                if (-2.0..=2.0).contains(&x1) {
                    x.extend_from_slice(&[x1, x2, x3]);
                    break;
                }
            },
        }
        self.draw_z(rng, z);
    }

    /// Density of `U = omega0'X - gamma0` at zero.
    pub fn boundary_density(&self) -> f64 {
        match self.model_id {
            1 => 0.25,
            2 => 2f64.sqrt() / 6.0,
            _ => 3f64.sqrt() * 11.0 / 64.0,
        }
    }

    /// `P(U <= 0)`.
    pub fn left_probability(&self) -> f64 {
        match self.model_id {
            1 | 2 => 0.75,
            // Irwin-Hall(3) CDF at 7/4
            _ => {
                let t: f64 = 1.75;
                (t.powi(3) - 3.0 * (t - 1.0).powi(3)) / 6.0
            }
        }
    }

    /// `E[Z Z']`; Z is independent of X in every design.
    pub fn z_second_moment(&self) -> DMatrix<f64> {
        if self.model_id == 3 {
            DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&[1.0, 4.0 / 3.0, 4.0 / 3.0]))
        } else {
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 0.5])
        }
    }

    /// Almost-sure bound on `|X|`.
    pub fn x_bound(&self) -> f64 {
        match self.model_id {
            1 => 2.0,
            2 => 10f64.sqrt(),
            _ => 2.0 * 3f64.sqrt(),
        }
    }
}

/// Simulates `n` rows and also returns the noise vector.
pub fn simulate_with_noise(spec: &ScenarioSpec, n: usize, seed: u64) -> Result<(Dataset, Vec<f64>)> {
    spec.check()?;
    if n < 2 {
        return Err(Error::Config("n must be at least 2".into()));
    }
    let (d, p) = (spec.d(), spec.p());
    let mut rng = rng_for(seed, &[TAG_SIMULATE]);
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let theta = spec.truth();
    let mut y = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n * d);
    let mut x = Vec::with_capacity(n * p);
    let mut noise = Vec::with_capacity(n);
    for i in 0..n {
        spec.draw_zx(&mut rng, &mut z, &mut x);
        let eps = spec.sigma * normal.sample(&mut rng);
        let mu = mean_response(&theta, &z[i * d..(i + 1) * d], &x[i * p..(i + 1) * p])?;
        y.push(mu + eps);
        noise.push(eps);
    }
    Ok((Dataset::new(y, z, x, d, p)?, noise))
}

pub fn simulate_scenario(spec: &ScenarioSpec, n: usize, seed: u64) -> Result<Dataset> {
    simulate_with_noise(spec, n, seed).map(|(ds, _)| ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Largest row norm of X.
    pub k1: f64,
    /// Largest row norm of Z.
    pub k2: f64,
    pub x_cov_full_rank: bool,
    pub z_full_rank: bool,
    /// Rank flags of Z restricted to the (left, right) subgroups, when a split was supplied.
    pub subgroup_z_full_rank: Option<(bool, bool)>,
    pub warnings: Vec<String>,
}

fn relative_full_rank(m: &DMatrix<f64>) -> bool {
    let eig = m.clone().symmetric_eigen().eigenvalues;
    let maxe = eig.iter().cloned().fold(0.0, f64::max);
    maxe > 0.0 && min_eigenvalue(m) > 1e-10 * maxe
}

fn gram(rows: impl Iterator<Item = Vec<f64>>, k: usize) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(k, k);
    for r in rows {
        for a in 0..k {
            for b in 0..k {
                g[(a, b)] += r[a] * r[b];
            }
        }
    }
    g
}

pub fn validate_dataset(ds: &Dataset) -> Result<ValidationReport> {
    validate_dataset_split(ds, None)
}

/// As [`validate_dataset`], additionally checking subgroup designs at `(omega, gamma)`.
pub fn validate_dataset_split(ds: &Dataset, split: Option<(&[f64], f64)>) -> Result<ValidationReport> {
    let n = ds.n();
    if n < 2 {
        return Err(Error::InvalidData(format!("need at least 2 rows, got {n}")));
    }
    for i in 0..n {
        let finite = ds.y[i].is_finite()
            && ds.z_row(i).iter().all(|v| v.is_finite())
            && ds.x_row(i).iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidData(format!("non-finite value in row {}", i + 1)));
        }
    }
    let k1 = (0..n).map(|i| norm(ds.x_row(i))).fold(0.0, f64::max);
    let k2 = (0..n).map(|i| norm(ds.z_row(i))).fold(0.0, f64::max);
    let p = ds.p();
    let mean: Vec<f64> = (0..p)
        .map(|j| (0..n).map(|i| ds.x_row(i)[j]).sum::<f64>() / n as f64)
        .collect();
    let cov = gram(
        (0..n).map(|i| ds.x_row(i).iter().zip(&mean).map(|(a, m)| a - m).collect()),
        p,
    ) / n as f64;
    let x_cov_full_rank = relative_full_rank(&cov);
    let z_full_rank = relative_full_rank(&gram((0..n).map(|i| ds.z_row(i).to_vec()), ds.d()));
    let mut warnings = Vec::new();
    if !x_cov_full_rank {
        warnings.push("covariance of X is rank deficient".to_string());
    }
    if !z_full_rank {
        warnings.push("Z'Z is rank deficient".to_string());
    }
    let subgroup_z_full_rank = split.map(|(omega, gamma)| {
        let proj = ds.project(omega);
        let left = gram(
            (0..n).filter(|&i| proj[i] - gamma <= 0.0).map(|i| ds.z_row(i).to_vec()),
            ds.d(),
        );
        let right = gram(
            (0..n).filter(|&i| proj[i] - gamma > 0.0).map(|i| ds.z_row(i).to_vec()),
            ds.d(),
        );
        (relative_full_rank(&left), relative_full_rank(&right))
    });
    if let Some((l, r)) = subgroup_z_full_rank {
        if !l || !r {
            warnings.push("a subgroup design is rank deficient".to_string());
        }
    }
    Ok(ValidationReport {
        k1,
        k2,
        x_cov_full_rank,
        z_full_rank,
        subgroup_z_full_rank,
        warnings,
    })
}

pub fn csv_header(d: usize, p: usize) -> Vec<String> {
    let mut h = vec!["y".to_string()];
    h.extend((1..=d).map(|j| format!("z{j}")));
    h.extend((1..=p).map(|j| format!("x{j}")));
    h
}

/// Reads `y,z1..zd,x1..xp`. The header fixes `d` and `p`.
pub fn read_dataset_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let d = header.iter().filter(|h| h.starts_with('z')).count();
    let p = header.iter().filter(|h| h.starts_with('x')).count();
    if header != csv_header(d, p) || d == 0 || p == 0 {
        return Err(Error::InvalidData(format!(
            "header must be y,z1..zd,x1..xp with d,p >= 1; got {}",
            header.join(",")
        )));
    }
    let (mut y, mut z, mut x) = (Vec::new(), Vec::new(), Vec::new());
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = r + 2;
        if rec.len() != header.len() {
            return Err(Error::InvalidData(format!(
                "line {line}: expected {} fields, found {}",
                header.len(),
                rec.len()
            )));
        }
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::InvalidData(format!("line {line}, column {}: cannot parse {:?}", header[c], field))
            })?;
            if !v.is_finite() {
                return Err(Error::InvalidData(format!("line {line}, column {}: non-finite value", header[c])));
            }
            match c {
                0 => y.push(v),
                c if c <= d => z.push(v),
                _ => x.push(v),
            }
        }
    }
    let ds = Dataset::new(y, z, x, d, p)?;
    if ds.n() < 2 {
        return Err(Error::InvalidData(format!("need at least 2 data rows, found {}", ds.n())));
    }
    Ok(ds)
}

pub fn read_dataset_path(path: &Path) -> Result<Dataset> {
    read_dataset_csv(std::fs::File::open(path)?)
}

pub fn write_dataset_csv<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(csv_header(ds.d(), ds.p()))?;
    for i in 0..ds.n() {
        let mut rec = vec![ds.y[i].to_string()];
        rec.extend(ds.z_row(i).iter().map(|v| v.to_string()));
        rec.extend(ds.x_row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        Dataset::new(vec![1.0, 2.0], vec![1.0, 1.0], vec![-0.5, 1.5], 1, 1).unwrap()
    }

    #[test]
    fn validation_reports_bounds() {
        let r = validate_dataset(&tiny()).unwrap();
        assert_eq!(r.k1, 1.5);
        assert_eq!(r.k2, 1.0);
        assert!(r.z_full_rank);
        assert!(r.x_cov_full_rank);
    }

    #[test]
    fn identical_x_rows_flag_rank_deficiency() {
        let ds = Dataset::new(vec![1.0, 2.0, 3.0], vec![1.0; 3], vec![0.3, 0.3, 0.3], 1, 1).unwrap();
        assert!(!validate_dataset(&ds).unwrap().x_cov_full_rank);
    }

    #[test]
    fn non_finite_is_rejected() {
        let ds = Dataset::new(vec![1.0, f64::NAN], vec![1.0, 1.0], vec![0.0, 1.0], 1, 1).unwrap();
        assert!(matches!(validate_dataset(&ds), Err(Error::InvalidData(_))));
    }

    #[test]
    fn model1_x_bound() {
        let spec = ScenarioSpec::table(1, 1, 1.0).unwrap();
        let ds = simulate_scenario(&spec, 500, 7).unwrap();
        assert!(validate_dataset(&ds).unwrap().k1 <= 2.0);
    }

    #[test]
    fn mean_response_examples() {
        let th = ChangePlaneParams::new(vec![1.0, 1.0], vec![-1.0, -1.0], vec![1.0], 1.0).unwrap();
        assert_eq!(mean_response(&th, &[1.0, 1.0], &[0.5]).unwrap(), 2.0);
        assert_eq!(mean_response(&th, &[1.0, 1.0], &[1.0]).unwrap(), 2.0);
        assert_eq!(mean_response(&th, &[1.0, 1.0], &[1.5]).unwrap(), -2.0);
        assert!(mean_response(&th, &[1.0], &[0.5]).is_err());
        let same = ChangePlaneParams::new(vec![0.3, 2.0], vec![0.3, 2.0], vec![1.0], -4.0).unwrap();
        assert_eq!(mean_response(&same, &[1.0, 2.0], &[9.0]).unwrap(), 4.3);
    }

    #[test]
    fn actg_shaped_row() {
        // coefficients of a published subgroup fit; omega normalised to unit length
        let raw = [0.077, -0.997];
        let r = norm(&raw);
        let theta = ChangePlaneParams::new(
            vec![0.0; 4],
            vec![369.44, 63.44, -0.27, 0.0],
            vec![raw[0] / r, raw[1] / r],
            1.889 / r,
        )
        .unwrap();
        let v = mean_response(&theta, &[1.0, 1.0, 30.0, 0.0], &[30.0, 0.0]).unwrap();
        assert!((v - 424.78).abs() < 1e-9);
    }

    #[test]
    fn noiseless_simulation_has_zero_residuals() {
        let spec = ScenarioSpec::table(2, 1, 0.0).unwrap();
        let (ds, noise) = simulate_with_noise(&spec, 10, 3).unwrap();
        let th = spec.truth();
        for i in 0..10 {
            assert_eq!(noise[i], 0.0);
            assert_eq!(ds.y()[i] - mean_response(&th, ds.z_row(i), ds.x_row(i)).unwrap(), 0.0);
        }
    }

    #[test]
    fn csv_round_trip() {
        let spec = ScenarioSpec::table(3, 2, 1.0).unwrap();
        let ds = simulate_scenario(&spec, 7, 1).unwrap();
        let mut buf = Vec::new();
        write_dataset_csv(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("y,z1,z2,z3,x1,x2,x3\n"));
        assert_eq!(read_dataset_csv(&buf[..]).unwrap(), ds);
    }

    #[test]
    fn csv_schema_errors() {
        assert!(read_dataset_csv("y,z1,x1\n1,1,0\n".as_bytes()).is_err());
        assert!(read_dataset_csv("y,x1,z1\n1,1,0\n2,1,1\n".as_bytes()).is_err());
        let e = read_dataset_csv("y,z1,x1\n1,1,0\n2,abc,1\n".as_bytes()).unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
    }

    #[test]
    fn spec_rejects_moved_plane() {
        let mut s = ScenarioSpec::table(1, 1, 1.0).unwrap();
        s.gamma0 = 0.5;
        assert!(s.check().is_err());
        let mut s = ScenarioSpec::table(1, 1, 1.0).unwrap();
        s.delta0 = s.beta0.clone();
        assert!(s.check().is_err());
    }
}
