//! Study drivers behind the command-line tool. Every command is a pure
//! function of its resolved configuration; outputs never carry timings.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bootstrap::{confidence_intervals, coordinate_names, parametric_bootstrap, random_contrasts, BootstrapConfig, CISet};
use crate::data::{read_dataset_path, simulate_scenario, validate_dataset, write_dataset_csv, ChangePlaneParams, ScenarioSpec, ValidationReport};
use crate::error::{Error, Result};
use crate::limit::{sample_limit_distribution, LimitDraw, LimitSpec, Which};
use crate::rng::{derive_seed, rng_for, TAG_CONTRAST, TAG_STUDY};
use crate::search::{fit, FitConfig, FitResult};
use crate::stats::{ecdf, ks_critical_01, ks_p_value, ks_statistic, ols_slope, pooled_grid, sd};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Fit,
    Simulate,
    RateStudy,
    WeakconvStudy,
    CoverageStudy,
    LimitSample,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Simulate => "simulate",
            Command::RateStudy => "rate-study",
            Command::WeakconvStudy => "weakconv-study",
            Command::CoverageStudy => "coverage-study",
            Command::LimitSample => "limit-sample",
        }
    }
}

/// Fully resolved settings for one command. Unused fields are still recorded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: u8,
    pub scenario: u8,
    pub sigma: f64,
    pub n: Vec<usize>,
    pub reps: usize,
    /// Bootstrap draws per fit (0 disables intervals in `fit`).
    pub bootstrap: usize,
    pub level: f64,
    pub seed: u64,
    /// Centre residuals at the widest-corridor fit and report its intervals.
    pub mode_fit: bool,
    pub limit_draws: usize,
    /// Explicit Cramér-Wold contrasts over `(beta, delta, omega, gamma)`.
    pub contrasts: Vec<Vec<f64>>,
    /// Number of random contrasts drawn when none are given.
    pub n_contrasts: usize,
    pub r_exponent: f64,
    pub bandwidth_mult: f64,
    pub bandwidth_exp: f64,
    /// Largest tolerated fraction of failed replicates.
    pub failure_budget: f64,
    pub cdf_points: usize,
    pub fit: FitConfig,
}

impl RunConfig {
    pub fn defaults_for(cmd: Command) -> RunConfig {
        let base = RunConfig {
            model: 1,
            scenario: 1,
            sigma: 1.0,
            n: vec![500],
            reps: 100,
            bootstrap: 1000,
            level: 0.95,
            seed: 0,
            mode_fit: false,
            limit_draws: 500,
            contrasts: vec![],
            n_contrasts: 2,
            r_exponent: 2.0 / 3.0,
            bandwidth_mult: 2.0,
            bandwidth_exp: -0.2,
            failure_budget: 0.01,
            cdf_points: 101,
            fit: FitConfig::default(),
        };
        match cmd {
            Command::RateStudy => RunConfig { n: vec![125, 250, 500, 1000], reps: 200, bootstrap: 0, ..base },
            Command::WeakconvStudy => RunConfig { n: vec![2000], reps: 500, bootstrap: 0, ..base },
            Command::CoverageStudy => RunConfig { n: vec![500], reps: 100, bootstrap: 200, ..base },
            Command::LimitSample => RunConfig { limit_draws: 1000, bootstrap: 0, ..base },
            Command::Simulate => RunConfig { n: vec![500], bootstrap: 0, ..base },
            Command::Fit => base,
        }
    }

    /// Defaults for `cmd`, overlaid with a (possibly partial) JSON object.
    pub fn resolve(cmd: Command, overlay: Option<&Value>) -> Result<RunConfig> {
        let mut v = serde_json::to_value(RunConfig::defaults_for(cmd))?;
        if let Some(o) = overlay {
            if !o.is_object() {
                return Err(Error::Config("configuration must be a JSON object".into()));
            }
            merge(&mut v, o);
        }
        Ok(serde_json::from_value(v)?)
    }

    pub fn scenario_spec(&self) -> Result<ScenarioSpec> {
        ScenarioSpec::table(self.model, self.scenario, self.sigma)
    }

    pub fn bootstrap_config(&self, seed: u64) -> BootstrapConfig {
        BootstrapConfig {
            b: self.bootstrap,
            level: self.level,
            r_exponent: self.r_exponent,
            bandwidth_mult: self.bandwidth_mult,
            bandwidth_exp: self.bandwidth_exp,
            contrasts: self.contrasts.clone(),
            seed,
        }
    }

    fn fit_config(&self, seed: u64) -> FitConfig {
        let mut f = self.fit.clone();
        f.search.seed = derive_seed(seed, &[1]);
        f.midpoint.seed = derive_seed(seed, &[2]);
        f
    }

    fn check_common(&self, cmd: Command) -> Result<()> {
        self.scenario_spec()?;
        self.fit.search.check()?;
        if self.n.is_empty() || self.n.iter().any(|&n| n < 10) {
            return Err(Error::Config("sample sizes must be given and at least 10".into()));
        }
        let min_reps = match cmd {
            Command::RateStudy => 20,
            Command::CoverageStudy => 50,
            _ => 1,
        };
        if self.reps < min_reps {
            return Err(Error::Config(format!("{} needs reps >= {min_reps}, got {}", cmd.name(), self.reps)));
        }
        if !(self.failure_budget >= 0.0 && self.failure_budget < 1.0) {
            return Err(Error::Config("failure_budget must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

fn merge(base: &mut Value, overlay: &Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, text)?;
    Ok(path)
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn fmt_row(vals: impl IntoIterator<Item = String>) -> String {
    let mut s = vals.into_iter().collect::<Vec<_>>().join(",");
    s.push('\n');
    s
}

fn f(v: f64) -> String {
    format!("{v}")
}

/// Named scalar, kept in a list so that output order is fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Named {
    pub name: String,
    pub value: Option<f64>,
}

fn named(names: &[String], vals: &[Option<f64>]) -> Vec<Named> {
    names.iter().zip(vals).map(|(n, v)| Named { name: n.clone(), value: *v }).collect()
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub spec: ScenarioSpec,
    pub theta: ChangePlaneParams,
    pub n: usize,
    pub seed: u64,
}

pub fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let spec = cfg.scenario_spec()?;
    let n = *cfg.n.first().ok_or_else(|| Error::Config("n is required".into()))?;
    if n == 0 {
        return Err(Error::Config("n must be positive".into()));
    }
    let ds = simulate_scenario(&spec, n, cfg.seed)?;
    fs::create_dir_all(out)?;
    write_dataset_csv(&ds, fs::File::create(out.join("data.csv"))?)?;
    let truth = TruthFile { theta: spec.truth(), spec, n, seed: cfg.seed };
    write_text(out, "truth.json", &to_json(&truth)?)?;
    Ok(())
}

// ---------------------------------------------------------------- fit

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutput {
    pub config: RunConfig,
    pub validation: ValidationReport,
    pub fit: FitResult,
    /// `theta_hat - truth` and `theta_check - truth`, when a truth file was given.
    pub error_hat: Option<Vec<Named>>,
    pub error_check: Option<Vec<Named>>,
    pub intervals: Option<CISet>,
    pub bootstrap_warnings: Vec<String>,
}

pub fn errors_against(theta: &ChangePlaneParams, truth: &ChangePlaneParams) -> Result<Vec<f64>> {
    let (a, b) = (theta.to_vec(), truth.to_vec());
    if a.len() != b.len() || theta.beta.len() != truth.beta.len() {
        return Err(Error::Dimension("truth does not match the fitted dimensions".into()));
    }
    Ok(a.iter().zip(&b).map(|(x, y)| x - y).collect())
}

pub fn run_fit(data: &Path, truth: Option<&Path>, cfg: &RunConfig) -> Result<FitOutput> {
    let ds = read_dataset_path(data)?;
    let validation = validate_dataset(&ds)?;
    let fitted = fit(&ds, &cfg.fit_config(cfg.seed))?.canonical();
    let names = coordinate_names(ds.d(), ds.p());
    let (error_hat, error_check) = match truth {
        Some(path) => {
            let t: TruthFile = serde_json::from_str(&fs::read_to_string(path)?)?;
            let eh = errors_against(&fitted.theta_hat, &t.theta)?;
            let ec = errors_against(&fitted.theta_check, &t.theta)?;
            let wrap = |v: Vec<f64>| named(&names, &v.into_iter().map(Some).collect::<Vec<_>>());
            (Some(wrap(eh)), Some(wrap(ec)))
        }
        None => (None, None),
    };
    let mut bootstrap_warnings = vec![];
    let intervals = if cfg.bootstrap > 0 {
        let (center, which) = if cfg.mode_fit { (&fitted.theta_check, Which::Mode) } else { (&fitted.theta_hat, Which::Mean) };
        let bc = cfg.bootstrap_config(derive_seed(cfg.seed, &[3]));
        let out = parametric_bootstrap(&ds, center, &bc, which)?;
        if cfg.mode_fit && out.draws.iter().any(|d| d.mode_non_unique) {
            bootstrap_warnings.push("C3' violated: some bootstrap draws had a non-unique widest corridor".into());
        }
        Some(confidence_intervals(center, &out.draws, ds.n(), cfg.level, &cfg.contrasts, cfg.mode_fit)?)
    } else {
        None
    };
    Ok(FitOutput { config: cfg.clone(), validation, fit: fitted, error_hat, error_check, intervals, bootstrap_warnings })
}

pub fn cmd_fit(data: &Path, truth: Option<&Path>, cfg: &RunConfig, out: Option<&Path>) -> Result<String> {
    let res = run_fit(data, truth, cfg)?;
    let json = to_json(&res)?;
    if let Some(dir) = out {
        write_text(dir, "fit.json", &json)?;
        write_text(dir, "trace.csv", &res.fit.trace.to_csv())?;
        if let Some(ci) = &res.intervals {
            write_text(dir, "intervals.csv", &ci.to_csv())?;
        }
    }
    Ok(json)
}

// ---------------------------------------------------------------- replicates

#[derive(Debug, Clone, PartialEq)]
pub struct Replicate {
    pub n: usize,
    pub rep: usize,
    /// `None` when the fit failed.
    pub fit: Option<FitResult>,
    pub error: Option<String>,
}

fn replicate_seed(master: u64, n: usize, rep: usize) -> u64 {
    derive_seed(master, &[TAG_STUDY, n as u64, rep as u64])
}

fn run_replicate<T: Send>(
    spec: &ScenarioSpec,
    cfg: &RunConfig,
    n: usize,
    rep: usize,
    extra: impl Fn(&crate::data::Dataset, &FitResult, u64) -> Result<T>,
) -> (Replicate, Option<T>) {
    let seed = replicate_seed(cfg.seed, n, rep);
    let run = || -> Result<(FitResult, T)> {
        let ds = simulate_scenario(spec, n, derive_seed(seed, &[0]))?;
        let fr = fit(&ds, &cfg.fit_config(seed))?.canonical();
        let t = extra(&ds, &fr, derive_seed(seed, &[3]))?;
        Ok((fr, t))
    };
    match run() {
        Ok((fr, t)) => (Replicate { n, rep, fit: Some(fr), error: None }, Some(t)),
        Err(e) => (Replicate { n, rep, fit: None, error: Some(e.to_string()) }, None),
    }
}

fn check_budget(failed: usize, total: usize, budget: f64) -> Result<()> {
    if failed as f64 > budget * total as f64 {
        return Err(Error::Convergence(format!(
            "{failed} of {total} replicate fits failed, above the {budget} failure budget"
        )));
    }
    Ok(())
}

fn closure_violations(reps: &[Replicate]) -> usize {
    reps.iter().filter_map(|r| r.fit.as_ref()).filter(|f| !f.closure_ok).count()
}

/// Columns `n,rep,ok,closure_ok,hat_<coord>...,check_<coord>...` holding raw estimation errors.
fn replicate_csv(reps: &[Replicate], truth: &ChangePlaneParams, names: &[String]) -> Result<String> {
    let mut s = fmt_row(
        ["n", "rep", "ok", "closure_ok"]
            .iter()
            .map(|v| v.to_string())
            .chain(names.iter().map(|c| format!("hat_{c}")))
            .chain(names.iter().map(|c| format!("check_{c}"))),
    );
    for r in reps {
        let mut row = vec![r.n.to_string(), r.rep.to_string()];
        match &r.fit {
            Some(fr) => {
                row.push("1".into());
                row.push(if fr.closure_ok { "1" } else { "0" }.into());
                row.extend(errors_against(&fr.theta_hat, truth)?.into_iter().map(f));
                row.extend(errors_against(&fr.theta_check, truth)?.into_iter().map(f));
            }
            None => {
                row.push("0".into());
                row.push("0".into());
                row.extend(std::iter::repeat_n(String::new(), 2 * names.len()));
            }
        }
        s.push_str(&fmt_row(row));
    }
    Ok(s)
}

/// Parsed replicate CSV: `(n, ok, closure_ok, values)` rows.
type CsvRows = Vec<(usize, bool, bool, Vec<f64>)>;

fn parse_replicate_csv(text: &str) -> Result<CsvRows> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = vec![];
    for rec in rdr.records() {
        let rec = rec?;
        let n: usize = rec[0].parse().map_err(|_| Error::Consistency("bad n column".into()))?;
        let ok = &rec[2] == "1";
        let closure = &rec[3] == "1";
        let vals = if ok {
            rec.iter()
                .skip(4)
                .map(|v| v.parse::<f64>().map_err(|_| Error::Consistency(format!("bad value {v:?}"))))
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![]
        };
        out.push((n, ok, closure, vals));
    }
    Ok(out)
}

fn same(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-12 * (1.0 + x.abs().max(y.abs())),
        (None, None) => true,
        _ => false,
    }
}

// ---------------------------------------------------------------- rate study

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCell {
    pub n: usize,
    pub ok: usize,
    pub failed: usize,
    /// Monte Carlo standard deviation of each coordinate (null when constant).
    pub sd_hat: Vec<Named>,
    pub sd_check: Vec<Named>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateStudy {
    pub study: String,
    pub config: RunConfig,
    pub cells: Vec<RateCell>,
    /// Slope of log SD on log n per coordinate.
    pub slope_hat: Vec<Named>,
    pub slope_check: Vec<Named>,
    pub closure_violations: usize,
    pub failures: Vec<String>,
}

fn sd_or_none(v: &[f64]) -> Option<f64> {
    let s = sd(v);
    (s.is_finite() && s > 1e-300).then_some(s)
}

fn rate_summary(rows: &CsvRows, ns: &[usize], k: usize) -> (Vec<(usize, usize, Vec<Option<f64>>)>, Vec<Option<f64>>) {
    let mut cells = vec![];
    for &n in ns {
        let ok: Vec<&Vec<f64>> = rows.iter().filter(|r| r.0 == n && r.1).map(|r| &r.3).collect();
        let failed = rows.iter().filter(|r| r.0 == n && !r.1).count();
        let sds: Vec<Option<f64>> = (0..k).map(|c| sd_or_none(&ok.iter().map(|v| v[c]).collect::<Vec<_>>())).collect();
        cells.push((ok.len(), failed, sds));
    }
    let logn: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let slopes = (0..k)
        .map(|c| {
            let y: Option<Vec<f64>> = cells.iter().map(|cell| cell.2[c].map(f64::ln)).collect();
            y.and_then(|y| ols_slope(&logn, &y))
        })
        .collect();
    (cells, slopes)
}

pub fn run_rate_study(cfg: &RunConfig) -> Result<(RateStudy, String)> {
    cfg.check_common(Command::RateStudy)?;
    if cfg.n.len() < 2 {
        return Err(Error::Config("rate-study needs at least two sample sizes".into()));
    }
    let spec = cfg.scenario_spec()?;
    let truth = spec.truth();
    let names = coordinate_names(spec.d(), spec.p());
    let k = names.len();
    let jobs: Vec<(usize, usize)> = cfg.n.iter().flat_map(|&n| (0..cfg.reps).map(move |r| (n, r))).collect();
    let reps: Vec<Replicate> = jobs
        .par_iter()
        .map(|&(n, r)| run_replicate(&spec, cfg, n, r, |_, _, _| Ok(())).0)
        .collect();
    check_budget(reps.iter().filter(|r| r.fit.is_none()).count(), reps.len(), cfg.failure_budget)?;
    let csv_text = replicate_csv(&reps, &truth, &names)?;
    let rows = parse_replicate_csv(&csv_text)?;
    let hat_rows: CsvRows = rows.iter().map(|r| (r.0, r.1, r.2, if r.1 { r.3[..k].to_vec() } else { vec![] })).collect();
    let check_rows: CsvRows = rows.iter().map(|r| (r.0, r.1, r.2, if r.1 { r.3[k..].to_vec() } else { vec![] })).collect();
    let (cells_h, slopes_h) = rate_summary(&hat_rows, &cfg.n, k);
    let (cells_c, slopes_c) = rate_summary(&check_rows, &cfg.n, k);
    // direct recomputation from the in-memory fits
    for (i, &n) in cfg.n.iter().enumerate() {
        let errs: Vec<Vec<f64>> = reps
            .iter()
            .filter(|r| r.n == n)
            .filter_map(|r| r.fit.as_ref())
            .map(|fr| errors_against(&fr.theta_hat, &truth))
            .collect::<Result<_>>()?;
        for c in 0..k {
            let direct = sd_or_none(&errs.iter().map(|v| v[c]).collect::<Vec<_>>());
            if !same(direct, cells_h[i].2[c]) {
                return Err(Error::Consistency("rate summary does not match the replicate file".into()));
            }
        }
    }
    let cells = cfg
        .n
        .iter()
        .enumerate()
        .map(|(i, &n)| RateCell {
            n,
            ok: cells_h[i].0,
            failed: cells_h[i].1,
            sd_hat: named(&names, &cells_h[i].2),
            sd_check: named(&names, &cells_c[i].2),
        })
        .collect();
    let failures = reps.iter().filter_map(|r| r.error.as_ref().map(|e| format!("n={} rep={}: {e}", r.n, r.rep))).collect();
    let study = RateStudy {
        study: "rate-study".into(),
        config: cfg.clone(),
        cells,
        slope_hat: named(&names, &slopes_h),
        slope_check: named(&names, &slopes_c),
        closure_violations: closure_violations(&reps),
        failures,
    };
    Ok((study, csv_text))
}

pub fn cmd_rate_study(cfg: &RunConfig, out: &Path) -> Result<RateStudy> {
    let (study, csv_text) = run_rate_study(cfg)?;
    write_text(out, "replicates.csv", &csv_text)?;
    write_text(out, "summary.json", &to_json(&study)?)?;
    Ok(study)
}

// ---------------------------------------------------------------- weak convergence

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsEntry {
    pub summary: String,
    pub quantity: String,
    pub ks: f64,
    pub p_value: f64,
    pub critical_01: f64,
    pub reject_01: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakconvStudy {
    pub study: String,
    pub config: RunConfig,
    pub n: usize,
    pub ok: usize,
    pub failed: usize,
    pub contrasts: Vec<Vec<f64>>,
    pub tests: Vec<KsEntry>,
    pub closure_violations: usize,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct WeakconvFiles {
    pub replicates: String,
    pub limit_draws: String,
    pub cdf: String,
}

/// `sqrt(n)` for regression coordinates and `n` for the plane.
pub fn scaled_errors(err: &[f64], d: usize, n: usize) -> Vec<f64> {
    err.iter()
        .enumerate()
        .map(|(c, e)| if c < 2 * d { e * (n as f64).sqrt() } else { e * n as f64 })
        .collect()
}

fn limit_csv(draws: &[LimitDraw], names: &[String]) -> String {
    let mut s = fmt_row(
        std::iter::once("draw".to_string())
            .chain(names.iter().map(|c| format!("hat_{c}")))
            .chain(names.iter().map(|c| format!("check_{c}")))
            .chain(["window".to_string(), "mode_non_unique".to_string()]),
    );
    for (i, d) in draws.iter().enumerate() {
        let mut row = vec![i.to_string()];
        for mode in [false, true] {
            match d.flat(mode) {
                Some(v) => row.extend(v.into_iter().map(f)),
                None => row.extend(std::iter::repeat_n(String::new(), names.len())),
            }
        }
        row.push(f(d.window));
        row.push(if d.mode_non_unique { "1" } else { "0" }.into());
        s.push_str(&fmt_row(row));
    }
    s
}

fn parse_limit_csv(text: &str, k: usize) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = vec![];
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |range: std::ops::Range<usize>| -> Vec<f64> {
            range.map(|i| rec[i].parse::<f64>().unwrap_or(f64::NAN)).collect()
        };
        out.push((parse(1..1 + k), parse(1 + k..1 + 2 * k)));
    }
    Ok(out)
}

fn ks_tests(
    est: &[Vec<f64>],
    lim: &[Vec<f64>],
    names: &[String],
    contrasts: &[Vec<f64>],
    summary: &str,
    note: Option<&str>,
    k_plane: usize,
    cdf_points: usize,
    cdf: &mut String,
) -> Vec<KsEntry> {
    let mut out = vec![];
    let mut push = |q: String, a: Vec<f64>, b: Vec<f64>, plane: bool| {
        let ks = ks_statistic(&a, &b);
        let crit = ks_critical_01(a.len(), b.len());
        for (x, (fa, fb)) in {
            let g = pooled_grid(&a, &b, cdf_points);
            let (ea, eb) = (ecdf(&a, &g), ecdf(&b, &g));
            g.into_iter().zip(ea.into_iter().zip(eb))
        } {
            cdf.push_str(&fmt_row([summary.to_string(), q.clone(), f(x), f(fa), f(fb)]));
        }
        out.push(KsEntry {
            summary: summary.into(),
            quantity: q,
            ks,
            p_value: ks_p_value(ks, a.len(), b.len()),
            critical_01: crit,
            reject_01: ks > crit,
            note: if plane { note.map(str::to_string) } else { None },
        });
    };
    for (c, name) in names.iter().enumerate() {
        push(
            name.clone(),
            est.iter().map(|v| v[c]).collect(),
            lim.iter().map(|v| v[c]).collect(),
            c >= k_plane,
        );
    }
    for (i, a) in contrasts.iter().enumerate() {
        let dotv = |v: &Vec<f64>| v.iter().zip(a).map(|(x, y)| x * y).sum::<f64>();
        push(format!("contrast{}", i + 1), est.iter().map(dotv).collect(), lim.iter().map(dotv).collect(), true);
    }
    out
}

pub fn run_weakconv_study(cfg: &RunConfig) -> Result<(WeakconvStudy, WeakconvFiles)> {
    cfg.check_common(Command::WeakconvStudy)?;
    if cfg.limit_draws < 1 {
        return Err(Error::Config("limit_draws must be positive".into()));
    }
    let spec = cfg.scenario_spec()?;
    let truth = spec.truth();
    let names = coordinate_names(spec.d(), spec.p());
    let k = names.len();
    let d = spec.d();
    let contrasts = if cfg.contrasts.is_empty() {
        random_contrasts(k, cfg.n_contrasts, &mut rng_for(cfg.seed, &[TAG_CONTRAST]))
    } else {
        cfg.contrasts.clone()
    };
    for a in &contrasts {
        if a.len() != k {
            return Err(Error::Config(format!("contrasts must have length {k}")));
        }
        if a.iter().all(|&v| v == 0.0) || a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("contrast vectors must be finite and nonzero".into()));
        }
    }
    let n = cfg.n[0];
    let reps: Vec<Replicate> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| run_replicate(&spec, cfg, n, r, |_, _, _| Ok(())).0)
        .collect();
    check_budget(reps.iter().filter(|r| r.fit.is_none()).count(), reps.len(), cfg.failure_budget)?;
    let draws = sample_limit_distribution(
        &LimitSpec::from_scenario(&spec)?,
        cfg.limit_draws,
        derive_seed(cfg.seed, &[TAG_STUDY, 0x4c494d]),
        Which::Both,
    )?;
    let rep_text = replicate_csv(&reps, &truth, &names)?;
    let lim_text = limit_csv(&draws, &names);
    // everything below is recomputed from the two files
    let rows = parse_replicate_csv(&rep_text)?;
    let lims = parse_limit_csv(&lim_text, k)?;
    let est_hat: Vec<Vec<f64>> = rows.iter().filter(|r| r.1).map(|r| scaled_errors(&r.3[..k], d, n)).collect();
    let est_check: Vec<Vec<f64>> = rows.iter().filter(|r| r.1).map(|r| scaled_errors(&r.3[k..], d, n)).collect();
    let lim_hat: Vec<Vec<f64>> = lims.iter().map(|l| l.0.clone()).collect();
    let lim_check: Vec<Vec<f64>> = lims.iter().map(|l| l.1.clone()).collect();
    let direct: Vec<Vec<f64>> = draws.iter().map(|dr| dr.flat(false).expect("mean summary")).collect();
    if direct != lim_hat {
        return Err(Error::Consistency("limit draw file does not round-trip".into()));
    }
    let mut cdf = fmt_row(["summary", "quantity", "x", "ecdf_estimator", "ecdf_limit"].map(String::from));
    let mut tests = ks_tests(&est_hat, &lim_hat, &names, &contrasts, "mean", None, 2 * d, cfg.cdf_points, &mut cdf);
    let mode_note = (spec.model_id == 2).then_some("C3' violated: comparison not expected to pass");
    tests.extend(ks_tests(&est_check, &lim_check, &names, &contrasts, "mode", mode_note, 2 * d, cfg.cdf_points, &mut cdf));
    let failures = reps.iter().filter_map(|r| r.error.as_ref().map(|e| format!("rep={}: {e}", r.rep))).collect();
    let study = WeakconvStudy {
        study: "weakconv-study".into(),
        config: cfg.clone(),
        n,
        ok: est_hat.len(),
        failed: reps.len() - est_hat.len(),
        contrasts,
        tests,
        closure_violations: closure_violations(&reps),
        failures,
    };
    Ok((study, WeakconvFiles { replicates: rep_text, limit_draws: lim_text, cdf }))
}

pub fn cmd_weakconv_study(cfg: &RunConfig, out: &Path) -> Result<WeakconvStudy> {
    let (study, files) = run_weakconv_study(cfg)?;
    write_text(out, "replicates.csv", &files.replicates)?;
    write_text(out, "limit_draws.csv", &files.limit_draws)?;
    write_text(out, "cdf.csv", &files.cdf)?;
    write_text(out, "summary.json", &to_json(&study)?)?;
    Ok(study)
}

// ---------------------------------------------------------------- coverage

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCell {
    pub n: usize,
    pub ok: usize,
    pub failed: usize,
    pub coverage: Vec<Named>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageStudy {
    pub study: String,
    pub config: RunConfig,
    pub summary: String,
    pub cells: Vec<CoverageCell>,
    pub closure_violations: usize,
    pub failures: Vec<String>,
    pub notes: Vec<String>,
}

pub fn run_coverage_study(cfg: &RunConfig) -> Result<(CoverageStudy, String)> {
    cfg.check_common(Command::CoverageStudy)?;
    if cfg.bootstrap < 50 {
        return Err(Error::Config("coverage-study needs bootstrap >= 50".into()));
    }
    let spec = cfg.scenario_spec()?;
    let truth = spec.truth();
    let names = coordinate_names(spec.d(), spec.p());
    let k = names.len();
    for a in &cfg.contrasts {
        if a.len() != k {
            return Err(Error::Config(format!("contrasts must have length {k}")));
        }
    }
    cfg.bootstrap_config(0).check()?;
    let mode = cfg.mode_fit;
    let jobs: Vec<(usize, usize)> = cfg.n.iter().flat_map(|&n| (0..cfg.reps).map(move |r| (n, r))).collect();
    let results: Vec<(Replicate, Option<CISet>)> = jobs
        .par_iter()
        .map(|&(n, r)| {
            run_replicate(&spec, cfg, n, r, |ds, fr, seed| {
                let (center, which) = if mode { (&fr.theta_check, Which::Mode) } else { (&fr.theta_hat, Which::Mean) };
                let out = parametric_bootstrap(ds, center, &cfg.bootstrap_config(seed), which)?;
                confidence_intervals(center, &out.draws, ds.n(), cfg.level, &cfg.contrasts, mode)
            })
        })
        .collect();
    let reps: Vec<Replicate> = results.iter().map(|r| r.0.clone()).collect();
    check_budget(reps.iter().filter(|r| r.fit.is_none()).count(), reps.len(), cfg.failure_budget)?;
    let tv = truth.to_vec();
    let mut targets: Vec<(String, f64)> = names.iter().cloned().zip(tv.iter().copied()).collect();
    for (i, a) in cfg.contrasts.iter().enumerate() {
        targets.push((format!("contrast{}", i + 1), a.iter().zip(&tv).map(|(x, y)| x * y).sum()));
    }
    let mut text = fmt_row(["n", "rep", "coordinate", "estimate", "lo", "hi", "truth", "covered"].map(String::from));
    for (rep, ci) in &results {
        let Some(ci) = ci else { continue };
        for (name, t) in &targets {
            let iv = ci.get(name).ok_or_else(|| Error::Consistency(format!("missing interval {name}")))?;
            text.push_str(&fmt_row([
                rep.n.to_string(),
                rep.rep.to_string(),
                name.clone(),
                f(iv.estimate),
                f(iv.lo),
                f(iv.hi),
                f(*t),
                if iv.covers(*t) { "1" } else { "0" }.to_string(),
            ]));
        }
    }
    // coverage from the file, checked against the in-memory intervals
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut counts = vec![vec![0usize; targets.len()]; cfg.n.len()];
    for rec in rdr.records() {
        let rec = rec?;
        let n: usize = rec[0].parse().map_err(|_| Error::Consistency("bad n".into()))?;
        let ni = cfg.n.iter().position(|&m| m == n).ok_or_else(|| Error::Consistency("unknown n".into()))?;
        let ci = targets.iter().position(|t| t.0 == rec[2]).ok_or_else(|| Error::Consistency("unknown coordinate".into()))?;
        let parse = |i: usize| rec[i].parse::<f64>().map_err(|_| Error::Consistency("bad number".into()));
        let covered = parse(4)? <= parse(6)? && parse(6)? <= parse(5)?;
        if covered != (&rec[7] == "1") {
            return Err(Error::Consistency("coverage flag does not match the interval".into()));
        }
        counts[ni][ci] += covered as usize;
    }
    let cells = cfg
        .n
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let ok = results.iter().filter(|r| r.0.n == n && r.1.is_some()).count();
            CoverageCell {
                n,
                ok,
                failed: results.iter().filter(|r| r.0.n == n && r.1.is_none()).count(),
                coverage: targets
                    .iter()
                    .enumerate()
                    .map(|(c, t)| Named { name: t.0.clone(), value: (ok > 0).then(|| counts[i][c] as f64 / ok as f64) })
                    .collect(),
            }
        })
        .collect();
    let mut notes = vec![];
    if mode && spec.model_id == 2 {
        notes.push("C3' violated: mode intervals are not expected to be calibrated".into());
    }
    let failures = reps.iter().filter_map(|r| r.error.as_ref().map(|e| format!("n={} rep={}: {e}", r.n, r.rep))).collect();
    let study = CoverageStudy {
        study: "coverage-study".into(),
        config: cfg.clone(),
        summary: if mode { "mode" } else { "mean" }.into(),
        cells,
        closure_violations: closure_violations(&reps),
        failures,
        notes,
    };
    Ok((study, text))
}

pub fn cmd_coverage_study(cfg: &RunConfig, out: &Path) -> Result<CoverageStudy> {
    let (study, text) = run_coverage_study(cfg)?;
    write_text(out, "replicates.csv", &text)?;
    write_text(out, "summary.json", &to_json(&study)?)?;
    Ok(study)
}

// ---------------------------------------------------------------- limit sample

pub fn run_limit_sample(cfg: &RunConfig) -> Result<String> {
    if cfg.limit_draws < 1 {
        return Err(Error::Config("limit_draws must be positive".into()));
    }
    let spec = cfg.scenario_spec()?;
    let draws = sample_limit_distribution(&LimitSpec::from_scenario(&spec)?, cfg.limit_draws, cfg.seed, Which::Both)?;
    Ok(limit_csv(&draws, &coordinate_names(spec.d(), spec.p())))
}

pub fn cmd_limit_sample(cfg: &RunConfig, out: &Path) -> Result<()> {
    let text = run_limit_sample(cfg)?;
    write_text(out, "draws.csv", &text)?;
    write_text(out, "config.json", &to_json(cfg)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_is_deep() {
        let o: Value = serde_json::json!({"reps": 30, "fit": {"search": {"m": 64}}});
        let c = RunConfig::resolve(Command::RateStudy, Some(&o)).unwrap();
        assert_eq!(c.reps, 30);
        assert_eq!(c.fit.search.m, 64);
        assert_eq!(c.fit.search.n0, 20);
        assert_eq!(c.n, vec![125, 250, 500, 1000]);
    }

    #[test]
    fn unknown_keys_rejected() {
        let o: Value = serde_json::json!({"repz": 30});
        assert!(RunConfig::resolve(Command::Fit, Some(&o)).is_err());
    }

    #[test]
    fn zero_reps_rejected() {
        let mut c = RunConfig::defaults_for(Command::RateStudy);
        c.reps = 0;
        assert_eq!(run_rate_study(&c).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn zero_contrast_rejected() {
        let mut c = RunConfig::defaults_for(Command::WeakconvStudy);
        c.contrasts = vec![vec![0.0; 6]];
        c.reps = 2;
        assert_eq!(run_weakconv_study(&c).unwrap_err().exit_code(), 2);
    }
}
