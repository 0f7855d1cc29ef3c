//! Concentration and anticoncentration checks for row inner products:
//! exact moments, a plug-in Lévy concentration estimator, the lattice
//! small-ball bound, sub-Gaussian tail checks on the d-sparse slice, and
//! a Markov averaging inequality for nonnegative variables.

use crate::error::Error;
use crate::sampler::{sample_matrix, sample_row, SeedSpec};
use crate::Result;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Empirical tail or rate versus an analytic bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TailReport {
    /// The threshold the event compares against.
    pub threshold: f64,
    pub empirical_prob: f64,
    /// The analytic bound when one is asserted; may exceed 1.
    pub bound: Option<f64>,
    pub trials: usize,
    /// Binomial standard error of the empirical probability.
    pub standard_error: f64,
}

impl TailReport {
    /// Whether the empirical probability exceeds the bound by more than
    /// `slack_se` standard errors. Always false without a bound.
    pub fn violates(&self, slack_se: f64) -> bool {
        match self.bound {
            Some(b) => self.empirical_prob > b + slack_se * self.standard_error,
            None => false,
        }
    }
}

/// Lévy concentration estimate: the largest probability mass any interval
/// of width 2 eps captures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevyEstimate {
    pub eps: f64,
    pub value: f64,
    pub samples: usize,
}

/// The lattice small-ball bound evaluated at one parameter point, both as
/// the raw expression and clamped to the probability range.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SmallBallBound {
    pub raw: f64,
    pub clamped: f64,
}

/// A finite discrete distribution given by its atoms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscreteDist {
    pub atoms: Vec<(f64, f64)>,
}

impl DiscreteDist {
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidParameter("distribution needs atoms".into()));
        }
        let mut total = 0.0;
        for &(x, p) in &atoms {
            if !x.is_finite() || !(p >= 0.0) {
                return Err(Error::InvalidParameter(
                    "atoms must be finite with nonnegative probabilities".into(),
                ));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "atom probabilities must sum to 1, got {total}"
            )));
        }
        Ok(DiscreteDist { atoms })
    }

    fn cdf(&self, x: f64) -> f64 {
        self.atoms.iter().filter(|&&(v, _)| v <= x).map(|&(_, p)| p).sum()
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for &(v, p) in &self.atoms {
            acc += p;
            if u < acc {
                return v;
            }
        }
        self.atoms.last().unwrap().0
    }
}

/// Verdict of the Markov averaging comparison
/// P(mean Z <= eps) <= (2/n) sum_k P(Z_k <= 2 eps).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MarkovReport {
    pub lhs: f64,
    pub rhs: f64,
    pub exact: bool,
    /// Standard error of the left side when it was sampled.
    pub lhs_standard_error: Option<f64>,
}

/// Exact mean and variance of the inner product of one d-sparse row with
/// a fixed vector v.
///
/// With p = d/n: mean = p sum(v), and the exchangeable covariance
/// structure gives variance
/// p (1 - p) (sum v^2 - ((sum v)^2 - sum v^2) / (n - 1)).
pub fn row_inner_moments(v: &[f64], d: usize) -> Result<(f64, f64)> {
    let n = v.len();
    if n == 0 || d == 0 || d > n {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= d <= n with nonempty v, got n = {n}, d = {d}"
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("v must be finite".into()));
    }
    let p = d as f64 / n as f64;
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    let (mut sum_sq, mut comp_sq) = (0.0f64, 0.0f64);
    for &x in v {
        // Neumaier compensation; the moments feed zero-tolerance checks
        let t = sum + x;
        comp += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
        let x2 = x * x;
        let t2 = sum_sq + x2;
        comp_sq += if sum_sq >= x2 { (sum_sq - t2) + x2 } else { (x2 - t2) + sum_sq };
        sum_sq = t2;
    }
    let sum = sum + comp;
    let sum_sq = sum_sq + comp_sq;
    let mean = p * sum;
    let variance = if d == n {
        0.0
    } else {
        p * (1.0 - p) * (sum_sq - (sum * sum - sum_sq) / (n as f64 - 1.0))
    };
    Ok((mean, variance.max(0.0)))
}

/// Plug-in Lévy concentration: the maximum over anchors x_i of the
/// fraction of samples in [x_i, x_i + 2 eps).
pub fn levy_estimate(samples: &[f64], eps: f64) -> Result<LevyEstimate> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    if samples.iter().any(|x| !x.is_finite()) || !(eps >= 0.0) {
        return Err(Error::InvalidParameter(
            "samples and eps must be finite, eps nonnegative".into(),
        ));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let width = 2.0 * eps;
    let mut best = 0usize;
    let mut j = 0usize;
    for i in 0..n {
        if j < i {
            j = i;
        }
        while j < n && sorted[j] - sorted[i] < width {
            j += 1;
        }
        best = best.max(j - i);
    }
    Ok(LevyEstimate { eps, value: best as f64 / n as f64, samples: n })
}

/// The lattice small-ball bound for the inner product of a d-sparse row
/// with a unit vector outside the almost-constant class:
/// 4 sqrt2 eps / (gamma delta rho) + 28 sqrt2 / (gamma delta^{3/2} rho sqrt d)
/// + 2 exp(-4 mu^2 d).
///
/// Requires gamma < delta rho / 12, the range in which the denominator
/// floor of the difference vector is available.
pub fn small_ball_rhs(
    eps: f64,
    gamma: f64,
    delta: f64,
    rho: f64,
    d: usize,
    mu: f64,
) -> Result<SmallBallBound> {
    if !(delta > 0.0 && delta < 1.0 && rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "delta and rho must lie in (0, 1), got delta = {delta}, rho = {rho}"
        )));
    }
    if !(gamma > 0.0 && gamma < delta * rho / 12.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma must lie in (0, delta rho / 12) = (0, {}), got {gamma}",
            delta * rho / 12.0
        )));
    }
    if d == 0 {
        return Err(Error::InvalidParameter("d must be positive".into()));
    }
    if !(eps >= 0.0 && mu > 0.0) {
        return Err(Error::InvalidParameter(
            "eps must be nonnegative and mu positive".into(),
        ));
    }
    let sqrt2 = std::f64::consts::SQRT_2;
    let df = d as f64;
    let raw = 4.0 * sqrt2 * eps / (gamma * delta * rho)
        + 28.0 * sqrt2 / (gamma * delta.powf(1.5) * rho * df.sqrt())
        + 2.0 * (-4.0 * mu * mu * df).exp();
    Ok(SmallBallBound { raw, clamped: raw.min(1.0) })
}

/// Samples the centered-tail probability P(|<q, v> - mean| >= t) for a
/// d-sparse row q and compares with the sub-Gaussian slice bound
/// 2 exp(-t^2 / (8 |v|^2)).
pub fn slice_tail_check(
    v: &[f64],
    d: usize,
    t: f64,
    trials: usize,
    seeds: &SeedSpec,
) -> Result<TailReport> {
    let n = v.len();
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be positive".into()));
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter("t must be nonnegative".into()));
    }
    let (mean, _) = row_inner_moments(v, d)?;
    let norm_sq: f64 = v.iter().map(|x| x * x).sum();
    let bound = 2.0 * (-t * t / (8.0 * norm_sq)).exp();
    let mut hits = 0usize;
    for trial in 0..trials {
        let mut rng = seeds.row_rng(trial as u64, 0);
        let row = sample_row(n, d, &mut rng)?;
        if (row.dot(v) - mean).abs() >= t {
            hits += 1;
        }
    }
    let p_hat = hits as f64 / trials as f64;
    Ok(TailReport {
        threshold: t,
        empirical_prob: p_hat,
        bound: Some(bound),
        trials,
        standard_error: (p_hat * (1.0 - p_hat) / trials as f64).sqrt(),
    })
}

/// Samples P(|M v| <= c sqrt(p n)) over fresh m x n matrices for a fixed
/// direction v. No analytic bound is asserted; the report carries the
/// empirical rate for comparison across directions.
pub fn direction_rate(
    v: &[f64],
    m: usize,
    d: usize,
    c: f64,
    trials: usize,
    seeds: &SeedSpec,
) -> Result<TailReport> {
    let n = v.len();
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be positive".into()));
    }
    if !(c >= 0.0) {
        return Err(Error::InvalidParameter("c must be nonnegative".into()));
    }
    let p = d as f64 / n as f64;
    let threshold = c * (p * n as f64).sqrt();
    let mut hits = 0usize;
    for trial in 0..trials {
        let mat = sample_matrix(m, n, d, seeds, trial as u64)?;
        let image = mat.mul_vec(v);
        let norm: f64 = image.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= threshold {
            hits += 1;
        }
    }
    let p_hat = hits as f64 / trials as f64;
    Ok(TailReport {
        threshold,
        empirical_prob: p_hat,
        bound: None,
        trials,
        standard_error: (p_hat * (1.0 - p_hat) / trials as f64).sqrt(),
    })
}

/// Budget for the exact product-space walk in `markov_avg_check`.
pub const MARKOV_EXACT_BUDGET: u128 = 1_000_000;

/// Compares P((1/n) sum Z_k <= eps) with (2/n) sum_k P(Z_k <= 2 eps) for
/// independent nonnegative variables.
///
/// The left side is exact (a product-space walk) when the joint support
/// size stays within `MARKOV_EXACT_BUDGET`; otherwise it is sampled with
/// `mc_trials` draws. The right side is always exact.
pub fn markov_avg_check(
    dists: &[DiscreteDist],
    eps: f64,
    mc_trials: usize,
    seeds: &SeedSpec,
) -> Result<MarkovReport> {
    if dists.is_empty() {
        return Err(Error::InvalidParameter("need at least one distribution".into()));
    }
    if !(eps >= 0.0) {
        return Err(Error::InvalidParameter("eps must be nonnegative".into()));
    }
    if dists.iter().any(|d| d.atoms.iter().any(|&(v, _)| v < 0.0)) {
        return Err(Error::InvalidParameter(
            "the averaging comparison requires nonnegative supports".into(),
        ));
    }
    let n = dists.len() as f64;
    let rhs = (2.0 / n) * dists.iter().map(|d| d.cdf(2.0 * eps)).sum::<f64>();
    let cutoff = n * eps;

    let mut joint: u128 = 1;
    let mut exact = true;
    for d in dists {
        joint = joint.saturating_mul(d.atoms.len() as u128);
        if joint > MARKOV_EXACT_BUDGET {
            exact = false;
            break;
        }
    }

    if exact {
        // depth-first product walk accumulating P(sum <= n eps)
        fn walk(dists: &[DiscreteDist], level: usize, sum: f64, prob: f64, cutoff: f64, acc: &mut f64) {
            if level == dists.len() {
                if sum <= cutoff {
                    *acc += prob;
                }
                return;
            }
            for &(v, p) in &dists[level].atoms {
                if p > 0.0 {
                    walk(dists, level + 1, sum + v, prob * p, cutoff, acc);
                }
            }
        }
        let mut lhs = 0.0;
        walk(dists, 0, 0.0, 1.0, cutoff, &mut lhs);
        return Ok(MarkovReport { lhs, rhs, exact: true, lhs_standard_error: None });
    }

    if mc_trials == 0 {
        return Err(Error::InvalidParameter(
            "joint support exceeds the exact budget and mc_trials is 0".into(),
        ));
    }
    let mut hits = 0usize;
    for trial in 0..mc_trials {
        let mut rng = seeds.row_rng(trial as u64, 0);
        let sum: f64 = dists.iter().map(|d| d.sample(&mut rng)).sum();
        if sum <= cutoff {
            hits += 1;
        }
    }
    let lhs = hits as f64 / mc_trials as f64;
    Ok(MarkovReport {
        lhs,
        rhs,
        exact: false,
        lhs_standard_error: Some((lhs * (1.0 - lhs) / mc_trials as f64).sqrt()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_basis_moments() {
        let mut v = vec![0.0; 4];
        v[0] = 1.0;
        let (mean, var) = row_inner_moments(&v, 2).unwrap();
        assert!((mean - 0.5).abs() < 1e-15);
        assert!((var - 0.25).abs() < 1e-15);
    }

    #[test]
    fn constant_direction_has_zero_variance() {
        let n = 9;
        let v = vec![1.0 / 3.0; n];
        let (mean, var) = row_inner_moments(&v, 4).unwrap();
        assert!((mean - 4.0 / 3.0).abs() < 1e-14);
        assert!(var.abs() < 1e-14);
    }

    #[test]
    fn levy_windows() {
        let e = levy_estimate(&[0.0, 1.0], 0.4).unwrap();
        assert_eq!(e.value, 0.5);
        let e = levy_estimate(&[0.0, 1.0], 0.6).unwrap();
        assert_eq!(e.value, 1.0);
        let e = levy_estimate(&[0.0, 0.0, 0.0], 0.1).unwrap();
        assert_eq!(e.value, 1.0);
    }
}
