//! Closed-form moments of the residual x = X_1 - P_1 X_1 and their
//! brute-force enumeration oracles.
//!
//! The closed form is derived under the event that the last n - 1 rows
//! span a hyperplane. The oracle averages over everything, so it also
//! reports the degenerate probability mass and the mean conditioned on
//! the generic event; the gap between formula and oracle is surfaced,
//! not hidden.

use crate::concentration::TailReport;
use crate::error::Error;
use crate::linalg::SpanProjector;
use crate::sampler::{binomial, enumerate_rows, sample_matrix, SeedSpec, MATRIX_ENUM_BUDGET};
use crate::Result;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Relative tolerance for the formula vs oracle comparison.
pub const MOMENT_MATCH_TOL: f64 = 1e-10;

/// How the oracle mean was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMode {
    /// Exact enumeration when the budget allows, Monte Carlo otherwise.
    Auto { mc_trials: usize },
    /// Exact enumeration or a capacity error.
    Exact,
    MonteCarlo { trials: usize },
}

/// Oracle estimate of E |x|^2 with its degenerate-span accounting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleOutcome {
    /// Mean of dist(X_1, span of the other rows)^2 over all matrices.
    pub mean: f64,
    /// Probability that the other rows span less than a hyperplane.
    pub degenerate_mass: f64,
    /// Mean conditioned on the full-rank event; absent when the event
    /// never occurred.
    pub conditional_mean: Option<f64>,
    pub exact: bool,
    pub trials: Option<usize>,
    /// Standard error of `mean` when sampled.
    pub standard_error: Option<f64>,
}

/// Side-by-side record of the closed form and the oracle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentReport {
    pub n: usize,
    pub d: usize,
    pub formula_value: f64,
    /// The coarser cap 3 d / n that the closed form never exceeds.
    pub cap: f64,
    pub oracle_value: Option<f64>,
    pub abs_diff: Option<f64>,
    pub degenerate_mass: Option<f64>,
    pub conditional_value: Option<f64>,
    pub conditional_abs_diff: Option<f64>,
    pub exact_oracle: Option<bool>,
    pub oracle_trials: Option<usize>,
    pub oracle_standard_error: Option<f64>,
}

impl MomentReport {
    /// Whether formula and oracle agree to `MOMENT_MATCH_TOL` relative to
    /// max(1, formula). False when no oracle value is present.
    pub fn passes(&self) -> bool {
        match self.abs_diff {
            Some(diff) => diff < MOMENT_MATCH_TOL * self.formula_value.abs().max(1.0),
            None => false,
        }
    }
}

/// The closed-form second moment
/// (n - d)/(n - 1) * (d/n + (d - 1)/(n - 1)) together with its cap 3d/n.
pub fn x_second_moment(n: usize, d: usize) -> Result<(f64, f64)> {
    if n < 2 || d == 0 || d > n {
        return Err(Error::InvalidParameter(format!(
            "need n >= 2 and 1 <= d <= n, got n = {n}, d = {d}"
        )));
    }
    let nf = n as f64;
    let df = d as f64;
    let value = (nf - df) / (nf - 1.0) * (df / nf + (df - 1.0) / (nf - 1.0));
    let cap = 3.0 * df / nf;
    debug_assert!(value <= cap + 1e-15);
    Ok((value, cap))
}

/// Variance of one column sum over the last n - 1 rows; the sum is
/// Binomial(n - 1, d/n).
pub fn column_sum_variance(n: usize, d: usize) -> Result<f64> {
    if n < 2 || d == 0 || d > n {
        return Err(Error::InvalidParameter(format!(
            "need n >= 2 and 1 <= d <= n, got n = {n}, d = {d}"
        )));
    }
    let p = d as f64 / n as f64;
    Ok((n as f64 - 1.0) * p * (1.0 - p))
}

fn span_columns(rows: &[Vec<f64>], picks: &[usize], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, picks.len(), |i, j| rows[picks[j]][i])
}

/// Mean of dist(X_1, span of X_2 ... X_n)^2 for the square n x n ensemble.
///
/// Exact mode enumerates all C(n,d)^n matrices, grouped so each span is
/// factored once; first-row blocks run in parallel and are reduced in
/// index order. Monte Carlo mode reports the standard error.
pub fn x_second_moment_oracle(
    n: usize,
    d: usize,
    mode: OracleMode,
    seeds: &SeedSpec,
) -> Result<OracleOutcome> {
    if n < 2 || d == 0 || d > n {
        return Err(Error::InvalidParameter(format!(
            "need n >= 2 and 1 <= d <= n, got n = {n}, d = {d}"
        )));
    }
    let rows_per = binomial(n, d);
    let mut total: u128 = 1;
    let mut feasible = true;
    for _ in 0..n {
        total = total.saturating_mul(rows_per);
        if total > MATRIX_ENUM_BUDGET {
            feasible = false;
            break;
        }
    }
    match mode {
        OracleMode::Exact => {
            if !feasible {
                return Err(Error::CapacityExceeded(format!(
                    "C({n},{d})^{n} exceeds the enumeration budget {MATRIX_ENUM_BUDGET}"
                )));
            }
            oracle_exact(n, d)
        }
        OracleMode::MonteCarlo { trials } => oracle_mc(n, d, trials, seeds),
        OracleMode::Auto { mc_trials } => {
            if feasible {
                oracle_exact(n, d)
            } else {
                oracle_mc(n, d, mc_trials, seeds)
            }
        }
    }
}

fn oracle_exact(n: usize, d: usize) -> Result<OracleOutcome> {
    let rows = enumerate_rows(n, d)?;
    let dense: Vec<Vec<f64>> = rows.iter().map(|r| r.to_dense()).collect();
    let r = dense.len();
    let x1: Vec<DVector<f64>> =
        dense.iter().map(|v| DVector::from_column_slice(v)).collect();

    // one block per value of the leading span row; each block walks the
    // remaining n - 2 span rows with an odometer
    let blocks: Vec<(f64, f64, u128)> = (0..r)
        .into_par_iter()
        .map(|first| {
            let mut sum_all = 0.0f64;
            let mut sum_generic = 0.0f64;
            let mut degenerate: u128 = 0;
            let tail = n - 2;
            let mut digits = vec![0usize; tail];
            let mut picks = vec![0usize; n - 1];
            picks[0] = first;
            loop {
                picks[1..].copy_from_slice(&digits);
                let proj = SpanProjector::new(&span_columns(&dense, &picks, n));
                let generic = proj.rank() == n - 1;
                let mut block_sum = 0.0;
                for v in &x1 {
                    let dist = proj.distance(v);
                    block_sum += dist * dist;
                }
                sum_all += block_sum;
                if generic {
                    sum_generic += block_sum;
                } else {
                    degenerate += r as u128;
                }
                // advance the odometer
                let mut pos = tail;
                loop {
                    if pos == 0 {
                        return (sum_all, sum_generic, degenerate);
                    }
                    pos -= 1;
                    digits[pos] += 1;
                    if digits[pos] < r {
                        break;
                    }
                    digits[pos] = 0;
                }
            }
        })
        .collect();

    let span_count = (r as u128).pow((n - 1) as u32);
    let total = span_count * r as u128;
    let mut sum_all = 0.0;
    let mut sum_generic = 0.0;
    let mut degenerate: u128 = 0;
    for (a, g, deg) in blocks {
        sum_all += a;
        sum_generic += g;
        degenerate += deg;
    }
    let generic_count = total - degenerate;
    Ok(OracleOutcome {
        mean: sum_all / total as f64,
        degenerate_mass: degenerate as f64 / total as f64,
        conditional_mean: if generic_count > 0 {
            Some(sum_generic / generic_count as f64)
        } else {
            None
        },
        exact: true,
        trials: None,
        standard_error: None,
    })
}

fn oracle_mc(n: usize, d: usize, trials: usize, seeds: &SeedSpec) -> Result<OracleOutcome> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be positive".into()));
    }
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    let mut sum_generic = 0.0f64;
    let mut degenerate = 0usize;
    for trial in 0..trials {
        let mat = sample_matrix(n, n, d, seeds, trial as u64)?;
        let dense: Vec<Vec<f64>> = mat.rows().iter().map(|r| r.to_dense()).collect();
        let picks: Vec<usize> = (1..n).collect();
        let proj = SpanProjector::new(&span_columns(&dense, &picks, n));
        let dist = proj.distance(&DVector::from_column_slice(&dense[0]));
        let sq = dist * dist;
        sum += sq;
        sum_sq += sq * sq;
        if proj.rank() == n - 1 {
            sum_generic += sq;
        } else {
            degenerate += 1;
        }
    }
    let tf = trials as f64;
    let mean = sum / tf;
    let variance = (sum_sq / tf - mean * mean).max(0.0);
    let generic = trials - degenerate;
    Ok(OracleOutcome {
        mean,
        degenerate_mass: degenerate as f64 / tf,
        conditional_mean: if generic > 0 { Some(sum_generic / generic as f64) } else { None },
        exact: false,
        trials: Some(trials),
        standard_error: Some((variance / tf).sqrt()),
    })
}

/// Runs the oracle and pairs it with the closed form in one report.
pub fn moment_report(
    n: usize,
    d: usize,
    mode: OracleMode,
    seeds: &SeedSpec,
) -> Result<MomentReport> {
    let (formula, cap) = x_second_moment(n, d)?;
    let oracle = x_second_moment_oracle(n, d, mode, seeds)?;
    Ok(MomentReport {
        n,
        d,
        formula_value: formula,
        cap,
        oracle_value: Some(oracle.mean),
        abs_diff: Some((formula - oracle.mean).abs()),
        degenerate_mass: Some(oracle.degenerate_mass),
        conditional_value: oracle.conditional_mean,
        conditional_abs_diff: oracle.conditional_mean.map(|c| (formula - c).abs()),
        exact_oracle: Some(oracle.exact),
        oracle_trials: oracle.trials,
        oracle_standard_error: oracle.standard_error,
    })
}

/// Samples P(|x| >= u) for the square ensemble and compares it with the
/// Chebyshev consequence 3 d / (u^2 n) of the second-moment cap.
pub fn x_tail_check(
    n: usize,
    d: usize,
    u: f64,
    trials: usize,
    seeds: &SeedSpec,
) -> Result<TailReport> {
    if n < 2 || d == 0 || d > n {
        return Err(Error::InvalidParameter(format!(
            "need n >= 2 and 1 <= d <= n, got n = {n}, d = {d}"
        )));
    }
    if !(u > 0.0) {
        return Err(Error::InvalidParameter("u must be positive".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be positive".into()));
    }
    let mut hits = 0usize;
    for trial in 0..trials {
        let mat = sample_matrix(n, n, d, seeds, trial as u64)?;
        let dense: Vec<Vec<f64>> = mat.rows().iter().map(|r| r.to_dense()).collect();
        let picks: Vec<usize> = (1..n).collect();
        let proj = SpanProjector::new(&span_columns(&dense, &picks, n));
        if proj.distance(&DVector::from_column_slice(&dense[0])) >= u {
            hits += 1;
        }
    }
    let p_hat = hits as f64 / trials as f64;
    Ok(TailReport {
        threshold: u,
        empirical_prob: p_hat,
        bound: Some(3.0 * d as f64 / (u * u * n as f64)),
        trials,
        standard_error: (p_hat * (1.0 - p_hat) / trials as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        let (v, cap) = x_second_moment(2, 1).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        assert!((cap - 1.5).abs() < 1e-15);
        let (v, _) = x_second_moment(3, 2).unwrap();
        assert!((v - 7.0 / 12.0).abs() < 1e-15);
        let (v, _) = x_second_moment(7, 7).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn column_variance_values() {
        assert!((column_sum_variance(3, 1).unwrap() - 4.0 / 9.0).abs() < 1e-15);
        assert_eq!(column_sum_variance(5, 5).unwrap(), 0.0);
    }

    #[test]
    fn cap_holds_on_scan() {
        for n in 2..=1000 {
            for d in [1, n / 2, n - 1, n] {
                if d == 0 {
                    continue;
                }
                let (v, cap) = x_second_moment(n, d).unwrap();
                assert!(v >= 0.0 && v <= cap + 1e-15, "n = {n}, d = {d}");
            }
        }
    }
}
