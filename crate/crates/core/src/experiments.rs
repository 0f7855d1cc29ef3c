//! Monte Carlo drivers over the ensemble: smallest-singular-value
//! scaling, tail probabilities, condition numbers, centered operator
//! norms, singularity rates, and image norms on the almost-constant set.
//!
//! Every study is a pure function of its configuration: trials
//! parallelize over the trial index, results are collected in index
//! order and reduced sequentially, so output bytes do not depend on the
//! worker count. Points run in exact-enumeration mode report the full
//! matrix count in `trials` and set the `exact` flag; their stderr
//! columns still apply the same plug-in formula.

use crate::error::Error;
use crate::extreal::ExtReal;
use crate::geometry::{sample_almost_constant, AlmostConstParams};
use crate::linalg::{largest_singular_power, SUSPECT_SINGULAR_REL};
use crate::sampler::{
    binomial, enumerate_matrices, sample_matrix, CombMatrix, SeedSpec, MATRIX_ENUM_BUDGET,
};
use crate::spectral::{is_singular_exact, sorted_singular_values, witness_certificate};
use crate::Result;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Largest square size evaluated by a full SVD; above it the iterative
/// path takes over, spot-checked against the SVD.
pub const SVD_DIRECT_MAX: usize = 512;
/// Relative agreement required between the iterative path and its SVD
/// spot check.
pub const CROSSCHECK_REL_TOL: f64 = 1e-6;
/// Slack, relative to s1, allowed when the certificate upper bound is
/// compared against the computed smallest singular value.
pub const CERT_SLACK_REL: f64 = 1e-8;

fn default_version() -> u32 {
    1
}

fn default_trials() -> usize {
    200
}

fn default_epsilons() -> Vec<f64> {
    vec![0.25, 0.5, 1.0]
}

fn default_opnorm_thresholds() -> Vec<f64> {
    vec![2.0, 3.0]
}

fn default_direction_scale() -> f64 {
    0.5
}

fn default_aspect() -> f64 {
    1.0
}

/// How d is derived from n at a grid point.
#[derive(Debug, Clone, PartialEq)]
pub enum DRule {
    Fixed { k: usize },
    Pn { p: f64 },
    Npow { a: f64 },
    Clogn { c: f64 },
}

/// One grid point: a size n and the rule that derives d from it.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub n: usize,
    pub d: DRule,
}

/// Floor that forgives floating-point dust just under an integer, so
/// rules like n^(1/3) at n = 512 derive 8 rather than 7.
fn snap_floor(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r
    } else {
        x.floor()
    }
}

impl GridPoint {
    /// The derived d, checked against 1 <= d <= n.
    pub fn derive_d(&self) -> Result<usize> {
        let n = self.n;
        let raw = match &self.d {
            DRule::Fixed { k } => *k as f64,
            DRule::Pn { p } => snap_floor(p * n as f64),
            DRule::Npow { a } => snap_floor((n as f64).powf(*a)),
            DRule::Clogn { c } => snap_floor(c * (n as f64).ln().floor()),
        };
        let d = if raw >= 1.0 { raw as usize } else { 0 };
        if d < 1 || d > n {
            return Err(Error::Config(format!(
                "grid point {} derives d = {d}, need 1 <= d <= n",
                self.describe()
            )));
        }
        Ok(d)
    }

    fn describe(&self) -> String {
        match &self.d {
            DRule::Fixed { k } => format!("(n = {}, d_rule = fixed, k = {k})", self.n),
            DRule::Pn { p } => format!("(n = {}, d_rule = pn, p = {p})", self.n),
            DRule::Npow { a } => format!("(n = {}, d_rule = npow, a = {a})", self.n),
            DRule::Clogn { c } => format!("(n = {}, d_rule = clogn, c = {c})", self.n),
        }
    }
}

impl Serialize for GridPoint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = s.serialize_map(Some(3))?;
        map.serialize_entry("n", &self.n)?;
        match &self.d {
            DRule::Fixed { k } => {
                map.serialize_entry("d_rule", "fixed")?;
                map.serialize_entry("k", k)?;
            }
            DRule::Pn { p } => {
                map.serialize_entry("d_rule", "pn")?;
                map.serialize_entry("p", p)?;
            }
            DRule::Npow { a } => {
                map.serialize_entry("d_rule", "npow")?;
                map.serialize_entry("a", a)?;
            }
            DRule::Clogn { c } => {
                map.serialize_entry("d_rule", "clogn")?;
                map.serialize_entry("c", c)?;
            }
        }
        map.end()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridPointRaw {
    n: usize,
    d_rule: String,
    #[serde(default)]
    k: Option<usize>,
    #[serde(default)]
    p: Option<f64>,
    #[serde(default)]
    a: Option<f64>,
    #[serde(default)]
    c: Option<f64>,
}

impl<'de> Deserialize<'de> for GridPoint {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as DeError;
        let raw = GridPointRaw::deserialize(de)?;
        let reject = |field: &str, rule: &str| {
            DeError::custom(format!("field `{field}` does not belong to d_rule `{rule}`"))
        };
        let need = |field: &str, rule: &str| {
            DeError::custom(format!("d_rule `{rule}` needs field `{field}`"))
        };
        let rule = match raw.d_rule.as_str() {
            "fixed" => {
                if raw.p.is_some() {
                    return Err(reject("p", "fixed"));
                }
                if raw.a.is_some() {
                    return Err(reject("a", "fixed"));
                }
                if raw.c.is_some() {
                    return Err(reject("c", "fixed"));
                }
                DRule::Fixed { k: raw.k.ok_or_else(|| need("k", "fixed"))? }
            }
            "pn" => {
                if raw.k.is_some() {
                    return Err(reject("k", "pn"));
                }
                if raw.a.is_some() {
                    return Err(reject("a", "pn"));
                }
                if raw.c.is_some() {
                    return Err(reject("c", "pn"));
                }
                DRule::Pn { p: raw.p.ok_or_else(|| need("p", "pn"))? }
            }
            "npow" => {
                if raw.k.is_some() {
                    return Err(reject("k", "npow"));
                }
                if raw.p.is_some() {
                    return Err(reject("p", "npow"));
                }
                if raw.c.is_some() {
                    return Err(reject("c", "npow"));
                }
                DRule::Npow { a: raw.a.ok_or_else(|| need("a", "npow"))? }
            }
            "clogn" => {
                if raw.k.is_some() {
                    return Err(reject("k", "clogn"));
                }
                if raw.p.is_some() {
                    return Err(reject("p", "clogn"));
                }
                if raw.a.is_some() {
                    return Err(reject("a", "clogn"));
                }
                DRule::Clogn { c: raw.c.ok_or_else(|| need("c", "clogn"))? }
            }
            other => {
                return Err(DeError::custom(format!(
                    "unknown d_rule `{other}`, expected one of fixed, pn, npow, clogn"
                )))
            }
        };
        Ok(GridPoint { n: raw.n, d: rule })
    }
}

/// Parameters for the almost-constant image study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsSettings {
    pub delta: f64,
    pub rho: f64,
    pub vectors_per_trial: usize,
}

impl Default for ConsSettings {
    fn default() -> Self {
        ConsSettings { delta: 0.05, rho: 0.05, vectors_per_trial: 4 }
    }
}

/// Full study configuration. Parsed from JSON with unknown keys
/// rejected; optional fields fall back to the library defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub grid: Vec<GridPoint>,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_opnorm_thresholds")]
    pub opnorm_thresholds: Vec<f64>,
    #[serde(default = "default_direction_scale")]
    pub direction_scale: f64,
    #[serde(default = "default_aspect")]
    pub aspect: f64,
    #[serde(default)]
    pub exact: bool,
    #[serde(default)]
    pub cons: ConsSettings,
    #[serde(default)]
    pub out_dir: Option<String>,
}

/// The built-in configuration: both figure-style d-rules over
/// n in {128, 256, 512, 1024} at 200 trials per point.
pub fn default_config() -> ExperimentConfig {
    let mut grid = Vec::new();
    for &n in &[128usize, 256, 512, 1024] {
        grid.push(GridPoint { n, d: DRule::Npow { a: 1.0 / 3.0 } });
    }
    for &n in &[128usize, 256, 512, 1024] {
        grid.push(GridPoint { n, d: DRule::Clogn { c: 5.0 } });
    }
    ExperimentConfig {
        version: 1,
        seed: 1,
        trials: default_trials(),
        grid,
        epsilons: default_epsilons(),
        opnorm_thresholds: default_opnorm_thresholds(),
        direction_scale: default_direction_scale(),
        aspect: default_aspect(),
        exact: false,
        cons: ConsSettings::default(),
        out_dir: None,
    }
}

/// A grid point with its derived d.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResolvedPoint {
    pub n: usize,
    pub d: usize,
}

impl ExperimentConfig {
    /// Semantic validation beyond what deserialization enforces.
    pub fn validate(&self) -> Result<()> {
        if self.version != 1 {
            return Err(Error::Config(format!(
                "unsupported config version {}, this build reads version 1",
                self.version
            )));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::Config("grid must be nonempty".into()));
        }
        for (name, list) in [("epsilons", &self.epsilons), ("opnorm_thresholds", &self.opnorm_thresholds)]
        {
            if list.iter().any(|x| !x.is_finite() || *x <= 0.0) {
                return Err(Error::Config(format!("{name} entries must be positive and finite")));
            }
        }
        if !self.direction_scale.is_finite() || self.direction_scale < 0.0 {
            return Err(Error::Config("direction_scale must be nonnegative and finite".into()));
        }
        if !self.aspect.is_finite() || self.aspect <= 0.0 || self.aspect > 1.0 {
            return Err(Error::Config(
                "aspect must lie in (0, 1]: rows can never outnumber columns".into(),
            ));
        }
        for pt in &self.grid {
            let bad = match &pt.d {
                DRule::Fixed { .. } => false,
                DRule::Pn { p } => !p.is_finite(),
                DRule::Npow { a } => !a.is_finite(),
                DRule::Clogn { c } => !c.is_finite(),
            };
            if bad {
                return Err(Error::Config(format!(
                    "grid point {} has a non-finite rule parameter",
                    pt.describe()
                )));
            }
        }
        if self.cons.vectors_per_trial == 0 {
            return Err(Error::Config("cons.vectors_per_trial must be at least 1".into()));
        }
        AlmostConstParams::new(self.cons.delta, self.cons.rho)
            .map_err(|e| Error::Config(format!("cons settings invalid: {e}")))?;
        self.resolve_grid()?;
        Ok(())
    }

    /// Derives d at every grid point.
    pub fn resolve_grid(&self) -> Result<Vec<ResolvedPoint>> {
        self.grid
            .iter()
            .map(|pt| Ok(ResolvedPoint { n: pt.n, d: pt.derive_d()? }))
            .collect()
    }

    /// SHA-256 of the canonical JSON serialization, hex encoded.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        let mut out = String::with_capacity(64);
        for byte in digest {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }
}

/// Summary of one tracked statistic at one grid point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatSummary {
    pub stat: String,
    pub mean: ExtReal,
    pub median: ExtReal,
    pub stderr: ExtReal,
}

/// All statistics at one grid point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointResult {
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub trials: usize,
    pub exact: bool,
    pub stats: Vec<StatSummary>,
}

/// Least-squares fit of log y against log x.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FitResult {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// One study's full output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyResult {
    pub study: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub notes: Vec<String>,
    pub warnings: Vec<String>,
    pub points: Vec<PointResult>,
    pub fit: Option<FitResult>,
}

/// Ordinary least squares on (log x, log y). Exact on collinear data.
pub fn fit_loglog(points: &[(f64, f64)]) -> Result<FitResult> {
    if points
        .iter()
        .any(|&(x, y)| !x.is_finite() || !y.is_finite() || x <= 0.0 || y <= 0.0)
    {
        return Err(Error::InvalidParameter(
            "log-log fit needs strictly positive finite coordinates".into(),
        ));
    }
    let mut xs: Vec<f64> = points.iter().map(|&(x, _)| x).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup();
    if xs.len() < 2 {
        return Err(Error::InvalidParameter(
            "log-log fit needs at least 2 distinct abscissae".into(),
        ));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let k = logs.len() as f64;
    let mx = logs.iter().map(|&(x, _)| x).sum::<f64>() / k;
    let my = logs.iter().map(|&(_, y)| y).sum::<f64>() / k;
    let sxx: f64 = logs.iter().map(|&(x, _)| (x - mx) * (x - mx)).sum();
    let sxy: f64 = logs.iter().map(|&(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = logs.iter().map(|&(_, y)| (y - my) * (y - my)).sum();
    let ss_res: f64 = logs
        .iter()
        .map(|&(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let r_squared = if ss_tot <= f64::EPSILON * my.abs().max(1.0) {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    Ok(FitResult { slope, intercept, r_squared })
}

/// Per-draw spectral measurements a study consumes.
#[derive(Debug, Clone, Copy)]
pub struct TrialSpectrum {
    pub s1: f64,
    /// 0 for draws adjudicated exactly singular.
    pub sn: f64,
    pub singular: bool,
    pub zero_column: bool,
    /// Top singular value of M minus its mean, when requested.
    pub centered_opnorm: Option<f64>,
}

/// What a single evaluation must produce and which self-checks to run.
#[derive(Debug, Clone, Copy)]
pub struct EvalRequest {
    pub want_centered: bool,
    /// Run the certificate piggyback check on this draw.
    pub certify: bool,
    /// Cross-validate the iterative path against a full SVD.
    pub crosscheck: bool,
}

/// Produces per-draw spectra. The default implementation samples a
/// matrix and defers to `eval_matrix`; synthetic evaluators override
/// `eval_sampled` to bypass sampling entirely.
pub trait SpectralEvaluator: Sync {
    fn eval_matrix(&self, mat: &CombMatrix, req: EvalRequest) -> Result<TrialSpectrum>;

    fn eval_sampled(
        &self,
        m: usize,
        n: usize,
        d: usize,
        seeds: &SeedSpec,
        trial: u64,
        req: EvalRequest,
    ) -> Result<TrialSpectrum> {
        let mat = sample_matrix(m, n, d, seeds, trial)?;
        self.eval_matrix(&mat, req)
    }
}

/// The real evaluator: dense SVD up to `SVD_DIRECT_MAX`, iterative
/// extremes above it with SVD spot checks, exact adjudication of draws
/// whose smallest singular value sits in the suspect band, and the
/// certificate piggyback check on a slice of draws.
pub struct SampledSpectral;

impl SpectralEvaluator for SampledSpectral {
    fn eval_matrix(&self, mat: &CombMatrix, req: EvalRequest) -> Result<TrialSpectrum> {
        let (m, n, d) = (mat.m(), mat.n(), mat.d());
        let dense = mat.to_dense();
        let square = m == n;
        let iterative = square && n > SVD_DIRECT_MAX;

        let (mut s1, mut sn_opt) = if iterative {
            let (top, bottom) = fast_pair(&dense)?;
            if req.crosscheck {
                let vals = sorted_singular_values(&dense);
                let (sv1, svn) = (vals[0], *vals.last().unwrap());
                if (top - sv1).abs() > CROSSCHECK_REL_TOL * sv1 {
                    return Err(Error::NumericalFailure(format!(
                        "iterative s1 = {top} disagrees with svd s1 = {sv1}"
                    )));
                }
                let floor = SUSPECT_SINGULAR_REL * sv1.max(1.0);
                let iter_clear = matches!(bottom, Some(b) if b > floor);
                let svd_clear = svn > floor;
                if iter_clear != svd_clear {
                    return Err(Error::NumericalFailure(format!(
                        "iterative sn = {bottom:?} and svd sn = {svn} disagree on the suspect band"
                    )));
                }
                if iter_clear && (bottom.unwrap() - svn).abs() > CROSSCHECK_REL_TOL * svn {
                    return Err(Error::NumericalFailure(format!(
                        "iterative sn = {} disagrees with svd sn = {svn}",
                        bottom.unwrap()
                    )));
                }
                (sv1, Some(svn))
            } else {
                (top, bottom)
            }
        } else {
            let vals = sorted_singular_values(&dense);
            (vals[0], Some(*vals.last().unwrap()))
        };

        let mut sn = sn_opt.unwrap_or(0.0);
        let mut singular = false;
        if square {
            let floor = SUSPECT_SINGULAR_REL * s1.max(1.0);
            if sn_opt.is_none() || sn <= floor {
                singular = is_singular_exact(mat)?;
                if singular {
                    sn = 0.0;
                } else if sn_opt.is_none() {
                    // invertible draw the iteration could not resolve
                    let vals = sorted_singular_values(&dense);
                    s1 = vals[0];
                    sn = *vals.last().unwrap();
                    sn_opt = Some(sn);
                }
            }
        }
        let _ = sn_opt;

        let s1_floor = d as f64 * (m as f64 / n as f64).sqrt() * (1.0 - 1e-8);
        if s1 < s1_floor {
            return Err(Error::NumericalFailure(format!(
                "s1 = {s1} fell below the row-sum floor {s1_floor}"
            )));
        }

        let centered_opnorm = if req.want_centered {
            Some(if d == n {
                0.0
            } else {
                let p = d as f64 / n as f64;
                let mut centered = dense.clone();
                for x in centered.iter_mut() {
                    *x -= p;
                }
                if iterative {
                    largest_singular_power(&centered)?
                } else {
                    sorted_singular_values(&centered)[0]
                }
            })
        } else {
            None
        };

        if req.certify && square && !singular {
            let cert = witness_certificate(mat)?;
            if cert.bound < sn - CERT_SLACK_REL * s1 {
                return Err(Error::NumericalFailure(format!(
                    "certificate bound {} fell below sn = {sn} at n = {n}",
                    cert.bound
                )));
            }
        }

        Ok(TrialSpectrum {
            s1,
            sn,
            singular,
            zero_column: mat.has_zero_column(),
            centered_opnorm,
        })
    }
}

fn fast_pair(dense: &nalgebra::DMatrix<f64>) -> Result<(f64, Option<f64>)> {
    crate::spectral::fast_extremes(dense)
}

/// Evaluator returning a fixed formula of (m, n, d). A test hook: it
/// bypasses sampling so aggregation and fitting can be driven with
/// synthetic spectra.
pub struct FormulaEvaluator<F: Fn(usize, usize, usize) -> TrialSpectrum + Sync> {
    pub formula: F,
}

impl<F: Fn(usize, usize, usize) -> TrialSpectrum + Sync> SpectralEvaluator for FormulaEvaluator<F> {
    fn eval_matrix(&self, mat: &CombMatrix, _req: EvalRequest) -> Result<TrialSpectrum> {
        Ok((self.formula)(mat.m(), mat.n(), mat.d()))
    }

    fn eval_sampled(
        &self,
        m: usize,
        n: usize,
        d: usize,
        _seeds: &SeedSpec,
        _trial: u64,
        _req: EvalRequest,
    ) -> Result<TrialSpectrum> {
        Ok((self.formula)(m, n, d))
    }
}

fn median_sorted(xs: &[f64]) -> f64 {
    let k = xs.len();
    if k % 2 == 1 {
        xs[k / 2]
    } else {
        0.5 * (xs[k / 2 - 1] + xs[k / 2])
    }
}

/// Mean, median and plug-in standard error of one sample set. Samples
/// may contain +inf (the condition-number sentinel); dispersion around
/// an infinite mean is reported as inf.
fn summarize(stat: &str, samples: &[f64]) -> StatSummary {
    assert!(!samples.is_empty(), "summarize needs samples");
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = median_sorted(&sorted);
    let k = samples.len() as f64;
    let (mean, stderr) = if samples.iter().any(|x| x.is_infinite()) {
        (f64::INFINITY, f64::INFINITY)
    } else {
        let mean = samples.iter().sum::<f64>() / k;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / k;
        (mean, (var / k).sqrt())
    };
    StatSummary {
        stat: stat.into(),
        mean: ExtReal(mean),
        median: ExtReal(median),
        stderr: ExtReal(stderr),
    }
}

fn value_stat(stat: &str, value: f64) -> StatSummary {
    StatSummary {
        stat: stat.into(),
        mean: ExtReal(value),
        median: ExtReal(value),
        stderr: ExtReal(0.0),
    }
}

fn indicator(flag: bool) -> f64 {
    if flag {
        1.0
    } else {
        0.0
    }
}

fn quantile_sorted(xs: &[f64], q: f64) -> f64 {
    let idx = ((q * xs.len() as f64).ceil() as usize).clamp(1, xs.len()) - 1;
    xs[idx]
}

/// The number of matrices in the ensemble when it fits the enumeration
/// budget.
fn matrix_space(m: usize, n: usize, d: usize) -> Option<u128> {
    let per = binomial(n, d);
    let mut total: u128 = 1;
    for _ in 0..m {
        total = total.checked_mul(per)?;
        if total > MATRIX_ENUM_BUDGET {
            return None;
        }
    }
    Some(total)
}

fn spectral_records(
    eval: &dyn SpectralEvaluator,
    m: usize,
    n: usize,
    d: usize,
    trials: usize,
    exact_requested: bool,
    auto_exact: bool,
    want_centered: bool,
    seeds: &SeedSpec,
) -> Result<(Vec<TrialSpectrum>, usize, bool)> {
    let space = matrix_space(m, n, d);
    let exact_now = if exact_requested {
        if space.is_none() {
            return Err(Error::CapacityExceeded(format!(
                "exact mode needs C({n},{d})^{m} within the budget {MATRIX_ENUM_BUDGET}"
            )));
        }
        true
    } else {
        auto_exact && space.is_some()
    };
    if exact_now {
        let count = space.unwrap() as usize;
        let mut recs = Vec::with_capacity(count);
        for (idx, mat) in enumerate_matrices(m, n, d)?.enumerate() {
            let req = EvalRequest {
                want_centered,
                certify: idx % 100 == 0,
                crosscheck: false,
            };
            recs.push(eval.eval_matrix(&mat, req)?);
        }
        Ok((recs, count, true))
    } else {
        let recs: Vec<TrialSpectrum> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let req = EvalRequest {
                    want_centered,
                    certify: t % 100 == 0,
                    crosscheck: t % 50 == 0,
                };
                eval.eval_sampled(m, n, d, seeds, t as u64, req)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((recs, trials, false))
    }
}

fn base_result(study: &str, cfg: &ExperimentConfig) -> StudyResult {
    let defaults = default_config();
    let mut notes = Vec::new();
    if cfg.grid == defaults.grid && cfg.trials == defaults.trials {
        notes.push(
            "default grid: the point set and trial count are this library's own choices".into(),
        );
    }
    StudyResult {
        study: study.into(),
        config_hash: cfg.hash(),
        master_seed: cfg.seed,
        notes,
        warnings: Vec::new(),
        points: Vec::new(),
        fit: None,
    }
}

/// Mean smallest singular value per point, fitted against sqrt(d)/n.
pub fn run_scaling_study(cfg: &ExperimentConfig) -> Result<StudyResult> {
    run_scaling_study_with(cfg, &SampledSpectral)
}

pub fn run_scaling_study_with(
    cfg: &ExperimentConfig,
    eval: &dyn SpectralEvaluator,
) -> Result<StudyResult> {
    cfg.validate()?;
    let grid = cfg.resolve_grid()?;
    let seeds = SeedSpec::for_experiment(cfg.seed, "scaling");
    let mut out = base_result("scaling", cfg);
    let mut fit_pts = Vec::new();
    for (i, pt) in grid.iter().enumerate() {
        let pseeds = seeds.with_labels(&[i as u64]);
        let (recs, count, exact) = spectral_records(
            eval, pt.n, pt.n, pt.d, cfg.trials, cfg.exact, false, false, &pseeds,
        )?;
        let sn: Vec<f64> = recs.iter().map(|r| r.sn).collect();
        let scale = pt.n as f64 / (pt.d as f64).sqrt();
        let sn_scaled: Vec<f64> = sn.iter().map(|x| x * scale).collect();
        let singular: Vec<f64> = recs.iter().map(|r| indicator(r.singular)).collect();
        let zero: Vec<f64> = recs.iter().map(|r| indicator(r.zero_column)).collect();
        let stats = vec![
            summarize("sn", &sn),
            summarize("sn_scaled", &sn_scaled),
            summarize("singular_rate", &singular),
            summarize("zero_col_rate", &zero),
        ];
        let mean_sn = stats[0].mean.0;
        if mean_sn > 0.0 {
            fit_pts.push(((pt.d as f64).sqrt() / pt.n as f64, mean_sn));
        } else {
            out.warnings.push(format!(
                "point (n = {}, d = {}) excluded from fit: mean sn is 0",
                pt.n, pt.d
            ));
        }
        out.points.push(PointResult { n: pt.n, d: pt.d, m: pt.n, trials: count, exact, stats });
    }
    match fit_loglog(&fit_pts) {
        Ok(f) => out.fit = Some(f),
        Err(e) => out.warnings.push(format!("fit skipped: {e}")),
    }
    Ok(out)
}

/// Empirical tail probabilities of sn at the sqrt(d)/(eps^2 n) and
/// eps/sqrt(n) threshold families.
pub fn run_tail_study(cfg: &ExperimentConfig) -> Result<StudyResult> {
    run_tail_study_with(cfg, &SampledSpectral)
}

pub fn run_tail_study_with(
    cfg: &ExperimentConfig,
    eval: &dyn SpectralEvaluator,
) -> Result<StudyResult> {
    cfg.validate()?;
    let grid = cfg.resolve_grid()?;
    let seeds = SeedSpec::for_experiment(cfg.seed, "tail");
    let mut out = base_result("tail", cfg);
    for (i, pt) in grid.iter().enumerate() {
        let pseeds = seeds.with_labels(&[i as u64]);
        let (recs, count, exact) = spectral_records(
            eval, pt.n, pt.n, pt.d, cfg.trials, cfg.exact, false, false, &pseeds,
        )?;
        let sn: Vec<f64> = recs.iter().map(|r| r.sn).collect();
        let mut stats = Vec::new();
        for &eps in &cfg.epsilons {
            let tau = (pt.d as f64).sqrt() / (eps * eps * pt.n as f64);
            let ind: Vec<f64> = sn.iter().map(|&x| indicator(x <= tau)).collect();
            stats.push(summarize(&format!("tail_sqrtd_eps={eps}"), &ind));
            let tau = eps / (pt.n as f64).sqrt();
            let ind: Vec<f64> = sn.iter().map(|&x| indicator(x <= tau)).collect();
            stats.push(summarize(&format!("tail_sqrtn_eps={eps}"), &ind));
        }
        let singular: Vec<f64> = recs.iter().map(|r| indicator(r.singular)).collect();
        let zero: Vec<f64> = recs.iter().map(|r| indicator(r.zero_column)).collect();
        stats.push(summarize("singular_rate", &singular));
        stats.push(summarize("zero_col_rate", &zero));
        out.points.push(PointResult { n: pt.n, d: pt.d, m: pt.n, trials: count, exact, stats });
    }
    Ok(out)
}

/// Condition numbers: kappa over all draws (inf on singular ones),
/// kappa over invertible draws, and the log-log fit of the invertible
/// median against n.
pub fn run_condition_study(cfg: &ExperimentConfig) -> Result<StudyResult> {
    run_condition_study_with(cfg, &SampledSpectral)
}

pub fn run_condition_study_with(
    cfg: &ExperimentConfig,
    eval: &dyn SpectralEvaluator,
) -> Result<StudyResult> {
    cfg.validate()?;
    let grid = cfg.resolve_grid()?;
    let seeds = SeedSpec::for_experiment(cfg.seed, "condition");
    let mut out = base_result("condition", cfg);
    let mut fit_pts = Vec::new();
    for (i, pt) in grid.iter().enumerate() {
        let pseeds = seeds.with_labels(&[i as u64]);
        let (recs, count, exact) = spectral_records(
            eval, pt.n, pt.n, pt.d, cfg.trials, cfg.exact, false, false, &pseeds,
        )?;
        let kappa: Vec<f64> = recs
            .iter()
            .map(|r| if r.sn > 0.0 { r.s1 / r.sn } else { f64::INFINITY })
            .collect();
        let kappa_inv: Vec<f64> = recs
            .iter()
            .filter(|r| r.sn > 0.0)
            .map(|r| r.s1 / r.sn)
            .collect();
        let invertible: Vec<f64> = recs.iter().map(|r| indicator(r.sn > 0.0)).collect();
        let s1: Vec<f64> = recs.iter().map(|r| r.s1).collect();
        let mut stats = vec![summarize("kappa", &kappa)];
        if kappa_inv.is_empty() {
            out.warnings.push(format!(
                "point (n = {}, d = {}) has no invertible draws, excluded from fit",
                pt.n, pt.d
            ));
        } else {
            let summary = summarize("kappa_invertible", &kappa_inv);
            let med = summary.median.0;
            if med.is_finite() && med > 0.0 {
                fit_pts.push((pt.n as f64, med));
            }
            stats.push(summary);
        }
        stats.push(summarize("invertible_rate", &invertible));
        stats.push(summarize("s1", &s1));
        out.points.push(PointResult { n: pt.n, d: pt.d, m: pt.n, trials: count, exact, stats });
    }
    match fit_loglog(&fit_pts) {
        Ok(f) => out.fit = Some(f),
        Err(e) => out.warnings.push(format!("fit skipped: {e}")),
    }
    Ok(out)
}

/// Centered operator norm ratios |M - EM| / sqrt(pn) with distribution
/// summaries and exceedance rates at the configured thresholds.
pub fn run_opnorm_study(cfg: &ExperimentConfig) -> Result<StudyResult> {
    run_opnorm_study_with(cfg, &SampledSpectral)
}

pub fn run_opnorm_study_with(
    cfg: &ExperimentConfig,
    eval: &dyn SpectralEvaluator,
) -> Result<StudyResult> {
    cfg.validate()?;
    let grid = cfg.resolve_grid()?;
    let seeds = SeedSpec::for_experiment(cfg.seed, "opnorm");
    let mut out = base_result("opnorm", cfg);
    for (i, pt) in grid.iter().enumerate() {
        let m = ((cfg.aspect * pt.n as f64).round() as usize).max(1);
        let pseeds = seeds.with_labels(&[i as u64]);
        let (recs, count, exact) = spectral_records(
            eval, m, pt.n, pt.d, cfg.trials, cfg.exact, false, true, &pseeds,
        )?;
        let scale = (pt.d as f64).sqrt();
        let ratios: Vec<f64> = recs
            .iter()
            .map(|r| {
                r.centered_opnorm
                    .map(|x| x / scale)
                    .ok_or_else(|| {
                        Error::NumericalFailure(
                            "evaluator did not provide the centered operator norm".into(),
                        )
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut sorted = ratios.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut stats = vec![
            summarize("opnorm_ratio", &ratios),
            value_stat("opnorm_ratio_max", *sorted.last().unwrap()),
            value_stat("opnorm_ratio_q90", quantile_sorted(&sorted, 0.90)),
            value_stat("opnorm_ratio_q99", quantile_sorted(&sorted, 0.99)),
        ];
        for &t in &cfg.opnorm_thresholds {
            let ind: Vec<f64> = ratios.iter().map(|&x| indicator(x >= t)).collect();
            stats.push(summarize(&format!("opnorm_exceed_t={t}"), &ind));
        }
        out.points.push(PointResult { n: pt.n, d: pt.d, m, trials: count, exact, stats });
    }
    Ok(out)
}

/// Exact-singularity and zero-column rates; points whose ensemble fits
/// the enumeration budget are computed exactly even outside exact mode.
pub fn run_singularity_study(cfg: &ExperimentConfig) -> Result<StudyResult> {
    run_singularity_study_with(cfg, &SampledSpectral)
}

pub fn run_singularity_study_with(
    cfg: &ExperimentConfig,
    eval: &dyn SpectralEvaluator,
) -> Result<StudyResult> {
    cfg.validate()?;
    let grid = cfg.resolve_grid()?;
    let seeds = SeedSpec::for_experiment(cfg.seed, "singularity");
    let mut out = base_result("singularity", cfg);
    for (i, pt) in grid.iter().enumerate() {
        let pseeds = seeds.with_labels(&[i as u64]);
        let (recs, count, exact) = spectral_records(
            eval, pt.n, pt.n, pt.d, cfg.trials, cfg.exact, true, false, &pseeds,
        )?;
        let singular: Vec<f64> = recs.iter().map(|r| indicator(r.singular)).collect();
        let zero: Vec<f64> = recs.iter().map(|r| indicator(r.zero_column)).collect();
        let stats = vec![
            summarize("singular_rate", &singular),
            summarize("zero_col_rate", &zero),
        ];
        out.points.push(PointResult { n: pt.n, d: pt.d, m: pt.n, trials: count, exact, stats });
    }
    Ok(out)
}

/// Image norms |Mv| / sqrt(pn) over sampled almost-constant unit
/// vectors: per-trial minima and the observed lower envelope.
pub fn run_cons_study(cfg: &ExperimentConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let grid = cfg.resolve_grid()?;
    let params = AlmostConstParams::new(cfg.cons.delta, cfg.cons.rho)?;
    let k = cfg.cons.vectors_per_trial;
    let seeds = SeedSpec::for_experiment(cfg.seed, "cons");
    let mut out = base_result("cons", cfg);
    for (i, pt) in grid.iter().enumerate() {
        let n = pt.n;
        let m = snap_floor(cfg.aspect * n as f64) as usize;
        if m * 2 < n || m > n {
            return Err(Error::InvalidParameter(format!(
                "the almost-constant study needs m in [n/2, n]; aspect {} gives m = {m} at n = {n}",
                cfg.aspect
            )));
        }
        let pseeds = seeds.with_labels(&[i as u64]);
        let scale = (pt.d as f64).sqrt();
        let eval_one = |mat: &CombMatrix, rng_label: u64| -> Result<(f64, Vec<f64>)> {
            let mut vrng = pseeds.aux_rng(rng_label);
            let mut ratios = Vec::with_capacity(k);
            for _ in 0..k {
                let v = sample_almost_constant(n, &params, &mut vrng)?;
                let image = mat.mul_vec(&v);
                let norm = image.iter().map(|x| x * x).sum::<f64>().sqrt();
                ratios.push(norm / scale);
            }
            let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
            Ok((min, ratios))
        };
        let space = matrix_space(m, n, pt.d);
        let (records, count, exact) = if cfg.exact {
            let Some(total) = space else {
                return Err(Error::CapacityExceeded(format!(
                    "exact mode needs C({n},{})^{m} within the budget {MATRIX_ENUM_BUDGET}",
                    pt.d
                )));
            };
            let mut records = Vec::with_capacity(total as usize);
            for (idx, mat) in enumerate_matrices(m, n, pt.d)?.enumerate() {
                records.push(eval_one(&mat, idx as u64)?);
            }
            (records, total as usize, true)
        } else {
            let records: Vec<(f64, Vec<f64>)> = (0..cfg.trials)
                .into_par_iter()
                .map(|t| {
                    let mat = sample_matrix(m, n, pt.d, &pseeds, t as u64)?;
                    eval_one(&mat, t as u64)
                })
                .collect::<Result<Vec<_>>>()?;
            (records, cfg.trials, false)
        };
        let minima: Vec<f64> = records.iter().map(|r| r.0).collect();
        let all: Vec<f64> = records.iter().flat_map(|r| r.1.iter().cloned()).collect();
        let envelope = minima.iter().cloned().fold(f64::INFINITY, f64::min);
        let stats = vec![
            summarize("ratio", &all),
            summarize("min_ratio", &minima),
            value_stat("ratio_envelope", envelope),
        ];
        out.points.push(PointResult { n, d: pt.d, m, trials: count, exact, stats });
    }
    Ok(out)
}
