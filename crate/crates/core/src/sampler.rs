//! Sampling and exact enumeration of random combinatorial matrices.
//!
//! A row is a 0/1 vector of length n with exactly d ones, drawn uniformly
//! from the C(n, d) possibilities; a matrix stacks m such rows
//! independently. Sampling is a pure function of a seed specification so
//! that experiments are reproducible regardless of scheduling.

use crate::error::Error;
use crate::Result;
use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Enumeration budget for `enumerate_rows`: C(n, d) may not exceed this.
pub const ROW_ENUM_BUDGET: u128 = 1_000_000;

/// Enumeration budget for `enumerate_matrices`: C(n, d)^m may not exceed this.
pub const MATRIX_ENUM_BUDGET: u128 = 10_000_000;

/// A 0/1 row of length `n` stored as its sorted support.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RowVector {
    n: usize,
    support: Vec<u32>,
}

impl RowVector {
    /// Builds a row from a support set. The indices must be strictly
    /// increasing and below `n`.
    pub fn new(n: usize, support: Vec<u32>) -> Result<Self> {
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "row support must be strictly increasing".into(),
            ));
        }
        if let Some(&last) = support.last() {
            if last as usize >= n {
                return Err(Error::InvalidParameter(format!(
                    "row support index {last} out of range for n = {n}"
                )));
            }
        }
        Ok(RowVector { n, support })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.support.len()
    }

    pub fn support(&self) -> &[u32] {
        &self.support
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n];
        for &j in &self.support {
            v[j as usize] = 1.0;
        }
        v
    }

    /// Inner product with a dense vector of length `n`.
    pub fn dot(&self, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.n);
        self.support.iter().map(|&j| v[j as usize]).sum()
    }
}

/// An m x n matrix of independent uniform d-sparse 0/1 rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CombMatrix {
    m: usize,
    n: usize,
    d: usize,
    rows: Vec<RowVector>,
}

impl CombMatrix {
    pub fn from_rows(rows: Vec<RowVector>) -> Result<Self> {
        let m = rows.len();
        if m == 0 {
            return Err(Error::InvalidParameter("matrix needs at least one row".into()));
        }
        let n = rows[0].n();
        let d = rows[0].d();
        if m > n {
            return Err(Error::InvalidParameter(format!(
                "row count {m} exceeds dimension {n}"
            )));
        }
        for r in &rows {
            if r.n() != n || r.d() != d {
                return Err(Error::InvalidParameter(
                    "all rows must share the same n and d".into(),
                ));
            }
        }
        Ok(CombMatrix { m, n, d, rows })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn is_square(&self) -> bool {
        self.m == self.n
    }

    pub fn rows(&self) -> &[RowVector] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &RowVector {
        &self.rows[i]
    }

    pub fn entry(&self, i: usize, j: usize) -> u8 {
        u8::from(self.rows[i].support().binary_search(&(j as u32)).is_ok())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.m, self.n);
        for (i, row) in self.rows.iter().enumerate() {
            for &j in row.support() {
                a[(i, j as usize)] = 1.0;
            }
        }
        a
    }

    pub fn column_sums(&self) -> Vec<usize> {
        let mut sums = vec![0usize; self.n];
        for row in &self.rows {
            for &j in row.support() {
                sums[j as usize] += 1;
            }
        }
        sums
    }

    pub fn has_zero_column(&self) -> bool {
        self.column_sums().iter().any(|&s| s == 0)
    }

    /// Matrix-vector product M v for a dense v of length n.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| r.dot(v)).collect()
    }
}

const GAMMA_EXPERIMENT: u64 = 0x9e37_79b9_7f4a_7c15;
const GAMMA_TRIAL: u64 = 0xbf58_476d_1ce4_e5b9;
const GAMMA_ROW: u64 = 0x94d0_49bb_1331_11eb;

/// SplitMix64 finalizer; a full-avalanche 64-bit mixer.
fn mix64(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic seed derivation for parallel Monte Carlo.
///
/// Every (trial, row) pair gets its own generator seed, derived by chaining
/// an avalanche mixer over the master seed, an experiment label and the two
/// indices. Distinct labels collide with probability comparable to a random
/// function (about 2^-64 per pair), and the derivation is a pure function,
/// so results do not depend on thread count or scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedSpec {
    master: u64,
    experiment: u64,
}

impl SeedSpec {
    pub fn new(master: u64, experiment: u64) -> Self {
        SeedSpec { master, experiment }
    }

    /// Labels an experiment by name; the label feeds the seed chain.
    pub fn for_experiment(master: u64, name: &str) -> Self {
        let mut h = 0x5bf0_3635_d1a2_b9c4u64;
        for &b in name.as_bytes() {
            h = mix64(h ^ u64::from(b));
        }
        SeedSpec { master, experiment: h }
    }

    /// Extends the experiment label with extra context (e.g. a grid point).
    pub fn with_labels(self, labels: &[u64]) -> Self {
        let mut h = self.experiment;
        for &l in labels {
            h = mix64(h ^ l.wrapping_mul(GAMMA_EXPERIMENT));
        }
        SeedSpec { master: self.master, experiment: h }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// The derived 64-bit seed for one (trial, row) stream.
    pub fn row_seed(&self, trial: u64, row: u64) -> u64 {
        let mut h = mix64(self.master ^ GAMMA_EXPERIMENT);
        h = mix64(h ^ self.experiment.wrapping_mul(GAMMA_EXPERIMENT));
        h = mix64(h ^ trial.wrapping_mul(GAMMA_TRIAL));
        h = mix64(h ^ row.wrapping_mul(GAMMA_ROW));
        h
    }

    /// Generator for one (trial, row) stream.
    pub fn row_rng(&self, trial: u64, row: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.row_seed(trial, row))
    }

    /// Generator for per-trial draws that are not tied to a matrix row
    /// (auxiliary vectors, shuffles). Uses a reserved row label.
    pub fn aux_rng(&self, trial: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.row_seed(trial, u64::MAX))
    }
}

fn check_shape(n: usize, d: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    if d == 0 || d > n {
        return Err(Error::InvalidParameter(format!(
            "d must satisfy 1 <= d <= n, got d = {d}, n = {n}"
        )));
    }
    Ok(())
}

/// Draws one uniform d-sparse row of length n.
///
/// Uses a partial Fisher-Yates shuffle: the first d entries of a shuffled
/// index array form a uniform d-subset.
pub fn sample_row<R: Rng>(n: usize, d: usize, rng: &mut R) -> Result<RowVector> {
    check_shape(n, d)?;
    let mut idx: Vec<u32> = (0..n as u32).collect();
    partial_shuffle(&mut idx, d, rng);
    let mut support: Vec<u32> = idx[..d].to_vec();
    support.sort_unstable();
    Ok(RowVector { n, support })
}

fn partial_shuffle<R: Rng>(idx: &mut [u32], d: usize, rng: &mut R) {
    let n = idx.len();
    for i in 0..d.min(n - 1) {
        // u64 draw keeps the stream layout platform-independent
        let j = i + rng.gen_range(0..(n - i) as u64) as usize;
        idx.swap(i, j);
    }
}

/// Draws an m x n matrix; row i of trial t is seeded independently from
/// (seeds, t, i).
pub fn sample_matrix(m: usize, n: usize, d: usize, seeds: &SeedSpec, trial: u64) -> Result<CombMatrix> {
    check_shape(n, d)?;
    if m == 0 || m > n {
        return Err(Error::InvalidParameter(format!(
            "m must lie in [1, n], got m = {m} with n = {n}"
        )));
    }
    let mut rows = Vec::with_capacity(m);
    for i in 0..m {
        let mut rng = seeds.row_rng(trial, i as u64);
        rows.push(sample_row(n, d, &mut rng)?);
    }
    Ok(CombMatrix { m, n, d, rows })
}

/// Exact binomial coefficient in u128, saturating at the type maximum.
pub fn binomial(n: usize, d: usize) -> u128 {
    if d > n {
        return 0;
    }
    let d = d.min(n - d);
    let mut acc: u128 = 1;
    for i in 0..d {
        let num = (n - i) as u128;
        acc = match acc.checked_mul(num) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// All d-sparse rows of length n in lexicographic support order.
///
/// Errors with a capacity violation when C(n, d) exceeds `ROW_ENUM_BUDGET`.
pub fn enumerate_rows(n: usize, d: usize) -> Result<Vec<RowVector>> {
    check_shape(n, d)?;
    let count = binomial(n, d);
    if count > ROW_ENUM_BUDGET {
        return Err(Error::CapacityExceeded(format!(
            "C({n}, {d}) = {count} rows exceeds the enumeration budget {ROW_ENUM_BUDGET}"
        )));
    }
    let mut rows = Vec::with_capacity(count as usize);
    let mut support: Vec<u32> = (0..d as u32).collect();
    loop {
        rows.push(RowVector { n, support: support.clone() });
        // next lexicographic combination
        let mut i = d;
        loop {
            if i == 0 {
                return Ok(rows);
            }
            i -= 1;
            if support[i] < (n - d + i) as u32 {
                support[i] += 1;
                for k in i + 1..d {
                    support[k] = support[k - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Iterator over all m x n matrices with d-sparse rows, lexicographic in
/// the row-index odometer. `len` reports the exact total count.
pub struct MatrixEnumerator {
    rows: Vec<RowVector>,
    digits: Vec<usize>,
    done: bool,
    len: u128,
}

impl MatrixEnumerator {
    pub fn len(&self) -> u128 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl Iterator for MatrixEnumerator {
    type Item = CombMatrix;

    fn next(&mut self) -> Option<CombMatrix> {
        if self.done {
            return None;
        }
        let m = self.digits.len();
        let n = self.rows[0].n();
        let d = self.rows[0].d();
        let current = CombMatrix {
            m,
            n,
            d,
            rows: self.digits.iter().map(|&i| self.rows[i].clone()).collect(),
        };
        // advance odometer, most significant digit first
        let base = self.rows.len();
        let mut i = m;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            self.digits[i] += 1;
            if self.digits[i] < base {
                break;
            }
            self.digits[i] = 0;
        }
        Some(current)
    }
}

/// Enumerates every matrix in the ensemble exactly once.
///
/// Errors with a capacity violation when C(n, d)^m exceeds
/// `MATRIX_ENUM_BUDGET`.
pub fn enumerate_matrices(m: usize, n: usize, d: usize) -> Result<MatrixEnumerator> {
    check_shape(n, d)?;
    if m == 0 || m > n {
        return Err(Error::InvalidParameter(format!(
            "m must lie in [1, n], got m = {m} with n = {n}"
        )));
    }
    let per_row = binomial(n, d);
    let mut total: u128 = 1;
    for _ in 0..m {
        total = match total.checked_mul(per_row) {
            Some(v) if v <= MATRIX_ENUM_BUDGET => v,
            _ => {
                return Err(Error::CapacityExceeded(format!(
                    "C({n}, {d})^{m} exceeds the enumeration budget {MATRIX_ENUM_BUDGET}"
                )))
            }
        };
    }
    let rows = enumerate_rows(n, d)?;
    Ok(MatrixEnumerator {
        rows,
        digits: vec![0; m],
        done: false,
        len: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_seed_changes_with_every_label() {
        let s = SeedSpec::new(7, 1);
        assert_ne!(s.row_seed(0, 0), s.row_seed(0, 1));
        assert_ne!(s.row_seed(0, 0), s.row_seed(1, 0));
        assert_ne!(s.row_seed(0, 0), SeedSpec::new(8, 1).row_seed(0, 0));
        assert_ne!(s.row_seed(0, 0), SeedSpec::new(7, 2).row_seed(0, 0));
    }

    #[test]
    fn binomial_small_table() {
        assert_eq!(binomial(4, 2), 6);
        assert_eq!(binomial(10, 5), 252);
        assert_eq!(binomial(5, 0), 1);
        assert_eq!(binomial(3, 5), 0);
    }

    #[test]
    fn enumerate_rows_is_lexicographic_and_complete() {
        let rows = enumerate_rows(4, 2).unwrap();
        let supports: Vec<&[u32]> = rows.iter().map(|r| r.support()).collect();
        assert_eq!(
            supports,
            vec![
                &[0, 1][..],
                &[0, 2][..],
                &[0, 3][..],
                &[1, 2][..],
                &[1, 3][..],
                &[2, 3][..]
            ]
        );
    }

    #[test]
    fn enumerate_matrices_counts() {
        let e = enumerate_matrices(2, 2, 1).unwrap();
        assert_eq!(e.len(), 4);
        assert_eq!(e.count(), 4);
        let e = enumerate_matrices(3, 3, 2).unwrap();
        assert_eq!(e.len(), 27);
        assert_eq!(e.count(), 27);
    }
}
