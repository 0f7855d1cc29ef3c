//! Unit-vector geometry: pairwise-difference lift, the almost-constant
//! vector class, and a certified estimate of the combinatorial least
//! common denominator (the lattice anticoncentration parameter of the
//! difference vector).

use crate::error::Error;
use crate::extreal::ExtReal;
use crate::Result;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Budget for the pairwise-difference dimension k = C(n, 2).
pub const DIFFERENCE_BUDGET: usize = 10_000_000;

/// Parameters of the almost-constant class: a unit vector belongs to it
/// when at least (1 - delta) n coordinates lie within rho / sqrt(n) of a
/// common level.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AlmostConstParams {
    pub delta: f64,
    pub rho: f64,
}

impl AlmostConstParams {
    pub fn new(delta: f64, rho: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "delta must lie in (0, 1), got {delta}"
            )));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "rho must lie in (0, 1), got {rho}"
            )));
        }
        Ok(AlmostConstParams { delta, rho })
    }
}

/// Parameters of the lattice-distance scan.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ClcdParams {
    pub gamma: f64,
    pub alpha: f64,
    pub theta_max: f64,
    pub grid_step: f64,
}

impl ClcdParams {
    pub fn new(gamma: f64, alpha: f64, theta_max: f64, grid_step: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma must lie in (0, 1), got {gamma}"
            )));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if !(theta_max > 0.0 && theta_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "theta_max must be positive, got {theta_max}"
            )));
        }
        if !(grid_step > 0.0 && grid_step <= theta_max) {
            return Err(Error::InvalidParameter(format!(
                "grid_step must lie in (0, theta_max], got {grid_step}"
            )));
        }
        Ok(ClcdParams { gamma, alpha, theta_max, grid_step })
    }
}

/// Outcome of the lattice-distance scan: the true denominator lies in
/// [lower, upper]. `upper` is infinite when no witness exists below
/// theta_max; `witness_theta` is the grid point that realized `upper`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClcdEstimate {
    pub lower: ExtReal,
    pub upper: ExtReal,
    pub witness_theta: Option<f64>,
    /// Grid step the scan was run at.
    pub resolution: f64,
}

/// Classification result with the witnessing level when the vector is
/// almost constant.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConsClassification {
    pub is_almost_constant: bool,
    pub lambda: Option<f64>,
}

/// The pairwise-difference lift D(v) = (v_i - v_j) for i < j, ordered
/// lexicographically by (i, j).
pub fn difference_vector(v: &[f64]) -> Result<Vec<f64>> {
    let n = v.len();
    if n < 2 {
        return Err(Error::InvalidParameter(
            "the difference lift needs at least two coordinates".into(),
        ));
    }
    let k = n * (n - 1) / 2;
    if k > DIFFERENCE_BUDGET {
        return Err(Error::CapacityExceeded(format!(
            "C({n}, 2) = {k} difference coordinates exceed the budget {DIFFERENCE_BUDGET}"
        )));
    }
    let mut out = Vec::with_capacity(k);
    for i in 0..n {
        for j in i + 1..n {
            out.push(v[i] - v[j]);
        }
    }
    Ok(out)
}

fn check_unit(v: &[f64]) -> Result<()> {
    let norm2: f64 = v.iter().map(|x| x * x).sum();
    if (norm2.sqrt() - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidParameter(format!(
            "expected a unit vector, got norm {}",
            norm2.sqrt()
        )));
    }
    Ok(())
}

/// Decides whether a unit vector is almost constant and reports the level.
///
/// Scans a sorted copy with a sliding window of width 2 rho / sqrt(n); the
/// vector qualifies when some window holds at least ceil((1 - delta) n)
/// coordinates, and the reported level is that window's midpoint.
pub fn is_almost_constant(v: &[f64], params: &AlmostConstParams) -> Result<ConsClassification> {
    let n = v.len();
    if n == 0 {
        return Err(Error::InvalidParameter("empty vector".into()));
    }
    check_unit(v)?;
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let width = 2.0 * params.rho / (n as f64).sqrt();
    let needed = ((1.0 - params.delta) * n as f64).ceil() as usize;
    let mut best_count = 0;
    let mut best_lambda = 0.0;
    let mut j = 0;
    for i in 0..n {
        if j < i {
            j = i;
        }
        while j + 1 < n && sorted[j + 1] - sorted[i] <= width {
            j += 1;
        }
        let count = j - i + 1;
        if count > best_count {
            best_count = count;
            best_lambda = 0.5 * (sorted[i] + sorted[j]);
        }
    }
    if best_count >= needed {
        Ok(ConsClassification { is_almost_constant: true, lambda: Some(best_lambda) })
    } else {
        Ok(ConsClassification { is_almost_constant: false, lambda: None })
    }
}

/// Draws a unit vector from the almost-constant class: a common level on
/// at least (1 - delta) n coordinates, within half the allowed spread
/// before normalization, and free coordinates elsewhere.
///
/// In the delta = rho = 0 limit the output is exactly +-(1, ..., 1)/sqrt(n).
pub fn sample_almost_constant<R: Rng>(
    n: usize,
    params: &AlmostConstParams,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    let needed = ((1.0 - params.delta) * n as f64).ceil() as usize;
    let free = n - needed;
    let root_n = (n as f64).sqrt();
    for _attempt in 0..32 {
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let level = sign * rng.gen_range(0.8..1.2) / root_n;
        let spread = params.rho / (2.0 * root_n);
        let mut v = vec![0.0; n];
        for x in v.iter_mut().take(needed) {
            *x = level + if spread > 0.0 { rng.gen_range(-spread..spread) } else { 0.0 };
        }
        for x in v.iter_mut().skip(needed) {
            *x = rng.gen_range(-3.0..3.0) / root_n;
        }
        // deterministic position scramble so the level does not always sit
        // on a prefix
        for i in (1..n).rev() {
            let j = rng.gen_range(0..(i + 1) as u64) as usize;
            v.swap(i, j);
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        if free == 0 && spread == 0.0 {
            // exactly constant by construction; normalization makes it exact
            let exact = sign / root_n;
            v.iter_mut().for_each(|x| *x = exact);
        }
        if is_almost_constant(&v, params)?.is_almost_constant {
            return Ok(v);
        }
    }
    Err(Error::NumericalFailure(
        "failed to draw an almost-constant vector after 32 attempts".into(),
    ))
}

/// Squared distance from x to the nearest integer lattice point,
/// accumulated coordinatewise.
fn lattice_dist(scaled: &[f64]) -> f64 {
    scaled
        .iter()
        .map(|&x| {
            let r = x - x.round();
            r * r
        })
        .sum::<f64>()
        .sqrt()
}

/// Certified bracket of the combinatorial least common denominator of a
/// unit vector: the smallest theta > 0 with
/// dist(theta D(v), Z^k) < min(gamma |theta D(v)|, alpha).
///
/// The scan walks theta over (0, theta_max] at `grid_step` spacing. The
/// upper end of the bracket is the first grid point satisfying the
/// condition; the lower end is certified by the Lipschitz bound
/// |dist((theta + h) D) - dist(theta D)| <= h |D|, seeded by the analytic
/// region theta < 1 / (2 max |D_i|) where the lattice distance equals
/// theta |D| and the condition cannot hold.
pub fn clcd_estimate(v: &[f64], params: &ClcdParams) -> Result<ClcdEstimate> {
    check_unit(v)?;
    let diff = difference_vector(v)?;
    let norm_d: f64 = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm_d == 0.0 {
        // constant vector: the difference lift vanishes and the strict
        // inequality can never hold
        return Ok(ClcdEstimate {
            lower: ExtReal::INF,
            upper: ExtReal::INF,
            witness_theta: None,
            resolution: params.grid_step,
        });
    }
    let max_abs = diff.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    // below this theta every coordinate rounds to zero, so
    // dist = theta |D| >= gamma theta |D|, and alpha > 0 is irrelevant
    let analytic = 0.5 / max_abs;
    let h = params.grid_step;
    let mut certified = analytic.min(params.theta_max);
    let mut scaled = vec![0.0; diff.len()];
    let steps = (params.theta_max / h).floor() as usize;
    for step_idx in 1..=steps {
        let theta = step_idx as f64 * h;
        if theta > params.theta_max {
            break;
        }
        for (s, &dcoord) in scaled.iter_mut().zip(diff.iter()) {
            *s = theta * dcoord;
        }
        let dist = lattice_dist(&scaled);
        let threshold = (params.gamma * theta * norm_d).min(params.alpha);
        if dist < threshold {
            return Ok(ClcdEstimate {
                lower: ExtReal::finite(certified.min(theta)),
                upper: ExtReal::finite(theta),
                witness_theta: Some(theta),
                resolution: h,
            });
        }
        // certify the surrounding half-step interval, provided it connects
        // to the region already certified
        let interval_threshold = (params.gamma * (theta + 0.5 * h) * norm_d).min(params.alpha);
        let margin_ok = dist - 0.5 * h * norm_d >= interval_threshold;
        let connects = certified >= theta - 0.5 * h - 1e-9 * h;
        if margin_ok && connects {
            certified = certified.max((theta + 0.5 * h).min(params.theta_max));
        }
    }
    Ok(ClcdEstimate {
        lower: ExtReal::finite(certified.min(params.theta_max)),
        upper: ExtReal::INF,
        witness_theta: None,
        resolution: h,
    })
}
