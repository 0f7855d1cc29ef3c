//! Dense spectral analysis: singular values, condition numbers, exact
//! singularity, and a projection-witness certificate that upper-bounds the
//! smallest singular value.

use crate::error::Error;
use crate::extreal::ExtReal;
use crate::linalg::{
    rank_deficient_exact, LuOutcome, PivotedLu, SpanProjector, SUSPECT_SINGULAR_REL,
};
use crate::sampler::CombMatrix;
use crate::Result;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Spectral facts about one matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub m: usize,
    pub n: usize,
    pub d: usize,
    /// Largest singular value.
    pub s1: f64,
    /// Smallest singular value; exact zero when `exactly_singular`.
    pub sn: f64,
    /// s1 / sn, with the infinite sentinel for singular matrices.
    pub kappa: ExtReal,
    /// Operator norm of M minus its entrywise mean (d/n) J.
    pub centered_opnorm: f64,
    /// Exact singularity classification; only square matrices are
    /// classified.
    pub exactly_singular: Option<bool>,
}

/// Witness-based upper bound on the smallest singular value.
///
/// The witness is x = X1 - P1 X1, the residual of the first row against
/// the span of the others; sn <= |x| / |(M^T)^{-1} x| always holds for
/// invertible M.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpperBoundCertificate {
    /// The witness residual itself.
    pub x: Vec<f64>,
    pub x_norm: f64,
    pub image_norm: f64,
    pub bound: f64,
}

/// Residuals of the dual-system decomposition behind the certificate.
///
/// For invertible M with rows X1..Xn and Y_k = P1 M^{-1} e_k (k >= 2):
/// the pairs {X_k, Y_k} are biorthogonal, |Y_k| * dist(X_k, H_1k) = 1,
/// and |(M^T)^{-1} x|^2 = 1 + sum_k <X1, Y_k>^2.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub max_biorth_residual: f64,
    pub max_norm_product_residual: f64,
    pub identity_lhs: f64,
    pub identity_rhs: f64,
    pub identity_residual: f64,
}

impl DecompositionReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_biorth_residual <= tol
            && self.max_norm_product_residual <= tol
            && self.identity_residual <= tol
    }
}

pub(crate) fn sorted_singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let svd = a.clone().svd(false, false);
    let mut sv: Vec<f64> = svd.singular_values.iter().cloned().collect();
    sv.sort_by(|x, y| y.partial_cmp(x).unwrap());
    sv
}

/// Full spectral summary of a matrix.
///
/// Singular values come from a dense SVD. For square matrices the
/// singularity classification is exact: values comfortably above roundoff
/// certify invertibility, and the suspicious band is resolved by exact
/// rank computation over two random word-size prime fields.
pub fn spectrum(mat: &CombMatrix) -> Result<SpectralSummary> {
    let dense = mat.to_dense();
    let sv = sorted_singular_values(&dense);
    let s1 = sv[0];
    let mut sn = *sv.last().unwrap();
    let p = mat.d() as f64 / mat.n() as f64;
    let centered = {
        let mut c = dense;
        c.iter_mut().for_each(|x| *x -= p);
        c
    };
    let centered_opnorm = sorted_singular_values(&centered)[0];

    let exactly_singular = if mat.is_square() {
        if sn > SUSPECT_SINGULAR_REL * s1.max(1.0) {
            Some(false)
        } else {
            Some(rank_deficient_exact(mat))
        }
    } else {
        None
    };
    if exactly_singular == Some(true) {
        sn = 0.0;
    }
    let kappa = if sn > 0.0 {
        ExtReal::finite(s1 / sn)
    } else {
        ExtReal::INF
    };
    Ok(SpectralSummary {
        m: mat.m(),
        n: mat.n(),
        d: mat.d(),
        s1,
        sn,
        kappa,
        centered_opnorm,
        exactly_singular,
    })
}

/// Euclidean distance from `v` to the span of `span`.
///
/// The span may be rank-deficient; a rank-revealing column-pivoted QR
/// decides which directions count. Vectors lying in the span up to
/// roundoff report distance exactly zero.
pub fn dist_to_span(v: &[f64], span: &[Vec<f64>]) -> Result<f64> {
    if span.is_empty() {
        return Ok(DVector::from_column_slice(v).norm());
    }
    let dim = v.len();
    if span.iter().any(|w| w.len() != dim) {
        return Err(Error::InvalidParameter(
            "span vectors must share the dimension of v".into(),
        ));
    }
    let cols = DMatrix::from_fn(dim, span.len(), |i, j| span[j][i]);
    let proj = SpanProjector::new(&cols);
    Ok(proj.distance(&DVector::from_column_slice(v)))
}

/// Exact singularity of a square matrix.
pub fn is_singular_exact(mat: &CombMatrix) -> Result<bool> {
    if !mat.is_square() {
        return Err(Error::InvalidParameter(
            "exact singularity is defined for square matrices".into(),
        ));
    }
    Ok(rank_deficient_exact(mat))
}

/// A basis together with its dual system.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BiorthPair {
    pub e: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
}

/// The dual system of a basis: vectors F with <E_i, F_j> = delta_ij.
///
/// F consists of the columns of the inverse transpose, so |F_k| is the
/// reciprocal distance from E_k to the span of the others.
pub fn biorthogonal_duals(vectors: &[Vec<f64>]) -> Result<BiorthPair> {
    let k = vectors.len();
    if k == 0 {
        return Err(Error::InvalidParameter("empty system".into()));
    }
    if vectors.iter().any(|v| v.len() != k) {
        return Err(Error::InvalidParameter(
            "the dual system needs exactly n vectors of dimension n".into(),
        ));
    }
    let e = DMatrix::from_fn(k, k, |i, j| vectors[j][i]);
    let sv = sorted_singular_values(&e);
    if sv[sv.len() - 1] <= 1e-10 * sv[0].max(1.0) {
        return Err(Error::SingularInput(
            "the system is numerically dependent; no dual exists".into(),
        ));
    }
    let lu = match PivotedLu::factor(&e) {
        LuOutcome::Factored(lu) => lu,
        LuOutcome::ExactZeroPivot => {
            return Err(Error::SingularInput("exactly dependent system".into()))
        }
    };
    let mut duals = Vec::with_capacity(k);
    for j in 0..k {
        let mut ej = DVector::zeros(k);
        ej[j] = 1.0;
        // E^T f = e_j gives the column of the inverse transpose
        let f = lu.solve_transpose(&ej);
        duals.push(f.iter().cloned().collect());
    }
    Ok(BiorthPair {
        e: vectors.to_vec(),
        f: duals,
    })
}

fn require_invertible(mat: &CombMatrix, what: &str) -> Result<()> {
    if !mat.is_square() {
        return Err(Error::InvalidParameter(format!(
            "{what} is defined for square matrices"
        )));
    }
    if rank_deficient_exact(mat) {
        return Err(Error::SingularInput(format!(
            "{what} requires an invertible matrix"
        )));
    }
    Ok(())
}

/// Columns of M^T with column `skip` (and optionally `skip2`) removed,
/// i.e. the rows of M other than the skipped ones, viewed as vectors.
fn row_span_columns(dense: &DMatrix<f64>, skip: usize, skip2: Option<usize>) -> DMatrix<f64> {
    let n = dense.nrows();
    let keep: Vec<usize> = (0..n)
        .filter(|&i| i != skip && Some(i) != skip2)
        .collect();
    DMatrix::from_fn(n, keep.len(), |i, j| dense[(keep[j], i)])
}

/// Builds the projection witness and the resulting upper bound on the
/// smallest singular value of an invertible matrix.
pub fn witness_certificate(mat: &CombMatrix) -> Result<UpperBoundCertificate> {
    require_invertible(mat, "the witness certificate")?;
    let dense = mat.to_dense();
    let n = mat.n();
    let others = row_span_columns(&dense, 0, None);
    let proj = SpanProjector::new(&others);
    let x1 = DVector::from_fn(n, |j, _| dense[(0, j)]);
    let x = &x1 - proj.project(&x1);
    let x_norm = x.norm();
    if x_norm == 0.0 {
        return Err(Error::NumericalFailure(
            "residual witness collapsed for an invertible matrix".into(),
        ));
    }
    let lu = match PivotedLu::factor(&dense) {
        LuOutcome::Factored(lu) => lu,
        LuOutcome::ExactZeroPivot => {
            return Err(Error::NumericalFailure(
                "LU hit a zero pivot on an exactly invertible matrix".into(),
            ))
        }
    };
    let image = lu.solve_transpose(&x);
    let image_norm = image.norm();
    if !(image_norm.is_finite() && image_norm > 0.0) {
        return Err(Error::NumericalFailure(
            "preimage norm under the inverse transpose was not finite".into(),
        ));
    }
    Ok(UpperBoundCertificate {
        x: x.iter().cloned().collect(),
        x_norm,
        image_norm,
        bound: x_norm / image_norm,
    })
}

/// Verifies the dual-system decomposition behind the certificate and
/// reports its residuals.
pub fn decomposition_check(mat: &CombMatrix) -> Result<DecompositionReport> {
    require_invertible(mat, "the decomposition check")?;
    let dense = mat.to_dense();
    let n = mat.n();
    let lu = match PivotedLu::factor(&dense) {
        LuOutcome::Factored(lu) => lu,
        LuOutcome::ExactZeroPivot => {
            return Err(Error::NumericalFailure(
                "LU hit a zero pivot on an exactly invertible matrix".into(),
            ))
        }
    };
    let others = row_span_columns(&dense, 0, None);
    let proj1 = SpanProjector::new(&others);
    let rows: Vec<DVector<f64>> = (0..n)
        .map(|i| DVector::from_fn(n, |j, _| dense[(i, j)]))
        .collect();
    let x = &rows[0] - proj1.project(&rows[0]);
    let image = lu.solve_transpose(&x);
    let identity_lhs = image.norm_squared();

    // Y_k = P1 (M^{-1} e_k) for k = 2..n
    let mut duals = Vec::with_capacity(n - 1);
    for k in 1..n {
        let mut ek = DVector::zeros(n);
        ek[k] = 1.0;
        let col = lu.solve(&ek);
        duals.push(proj1.project(&col));
    }

    let mut max_biorth: f64 = 0.0;
    for i in 1..n {
        for (kj, y) in duals.iter().enumerate() {
            let expected = f64::from(i == kj + 1);
            max_biorth = max_biorth.max((rows[i].dot(y) - expected).abs());
        }
    }

    let mut max_norm_product: f64 = 0.0;
    for (kj, y) in duals.iter().enumerate() {
        let k = kj + 1;
        let span_k = row_span_columns(&dense, 0, Some(k));
        let proj_k = SpanProjector::new(&span_k);
        let b_k = proj_k.distance(&rows[k]);
        max_norm_product = max_norm_product.max((y.norm() * b_k - 1.0).abs());
    }

    let identity_rhs = 1.0
        + duals
            .iter()
            .map(|y| {
                let c = rows[0].dot(y);
                c * c
            })
            .sum::<f64>();

    Ok(DecompositionReport {
        max_biorth_residual: max_biorth,
        max_norm_product_residual: max_norm_product,
        identity_lhs,
        identity_rhs,
        identity_residual: (identity_lhs - identity_rhs).abs(),
    })
}

/// Fast-path extreme singular values for large study matrices: LU-based
/// block inverse iteration for the smallest, power iteration for the
/// largest. `None` for the smallest means numerically singular.
pub(crate) fn fast_extremes(dense: &DMatrix<f64>) -> Result<(f64, Option<f64>)> {
    let s1 = crate::linalg::largest_singular_power(dense)?;
    let sn = crate::linalg::smallest_singular_inverse_iteration(dense)?;
    Ok((s1, sn))
}
