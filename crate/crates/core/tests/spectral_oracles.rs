//! Hand-derived spectral values on tiny matrices, plus randomized
//! agreement checks against independent least-squares and SVD oracles.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use combilab_core::sampler::{
    enumerate_matrices, sample_matrix, CombMatrix, RowVector, SeedSpec,
};
use combilab_core::spectral::{
    biorthogonal_duals, decomposition_check, dist_to_span, is_singular_exact,
    spectrum, witness_certificate,
};
use combilab_core::Error;

fn mat(n: usize, supports: &[&[u32]]) -> CombMatrix {
    let rows = supports
        .iter()
        .map(|s| RowVector::new(n, s.to_vec()).unwrap())
        .collect();
    CombMatrix::from_rows(rows).unwrap()
}

/// J - I at n = 3: rows are the complements of the diagonal.
fn j_minus_i() -> CombMatrix {
    mat(3, &[&[1, 2], &[0, 2], &[0, 1]])
}

#[test]
fn permutation_matrix_spectrum() {
    let m = mat(2, &[&[1], &[0]]);
    let s = spectrum(&m).unwrap();
    assert!((s.s1 - 1.0).abs() < 1e-12);
    assert!((s.sn - 1.0).abs() < 1e-12);
    assert!((s.kappa.0 - 1.0).abs() < 1e-12);
    assert_eq!(s.exactly_singular, Some(false));
}

#[test]
fn all_ones_spectrum() {
    let m = mat(3, &[&[0, 1, 2], &[0, 1, 2], &[0, 1, 2]]);
    let s = spectrum(&m).unwrap();
    assert!((s.s1 - 3.0).abs() < 1e-12);
    assert_eq!(s.sn, 0.0);
    assert_eq!(s.exactly_singular, Some(true));
    assert!(s.kappa.0.is_infinite());
    assert_eq!(s.centered_opnorm, 0.0);
}

// Eigenvalues of J - I are {2, -1, -1}; after centering, {0, -1, -1}.
#[test]
fn j_minus_i_spectrum() {
    let s = spectrum(&j_minus_i()).unwrap();
    assert!((s.s1 - 2.0).abs() < 1e-12);
    assert!((s.sn - 1.0).abs() < 1e-12);
    assert!((s.kappa.0 - 2.0).abs() < 1e-12);
    assert!((s.centered_opnorm - 1.0).abs() < 1e-10);
    assert_eq!(s.exactly_singular, Some(false));
}

#[test]
fn span_distances() {
    let e1 = vec![1.0, 0.0];
    let e2 = vec![0.0, 1.0];
    assert_eq!(dist_to_span(&e1, &[e2.clone()]).unwrap(), 1.0);

    let half = std::f64::consts::FRAC_1_SQRT_2;
    let diag = vec![half, half];
    let d = dist_to_span(&diag, &[vec![1.0, 0.0]]).unwrap();
    assert!((d - half).abs() < 1e-14);

    assert!(matches!(
        dist_to_span(&e1, &[vec![1.0, 0.0, 0.0]]),
        Err(Error::InvalidParameter(_))
    ));
}

// Independent oracle: solve the normal equations directly and measure
// the least-squares residual.
#[test]
fn span_distance_matches_least_squares() {
    let mut rng = SeedSpec::for_experiment(11, "dist-oracle").aux_rng(0);
    for _ in 0..200 {
        let n = rng.gen_range(2..=6usize);
        let k = rng.gen_range(1..n);
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let a = DMatrix::from_fn(n, k, |i, j| w[j][i]);
        let b = DVector::from_column_slice(&v);
        let coeffs = (a.transpose() * &a)
            .lu()
            .solve(&(a.transpose() * &b))
            .expect("random system is generically full rank");
        let residual = (&b - &a * coeffs).norm();
        let d = dist_to_span(&v, &w).unwrap();
        assert!(
            (d - residual).abs() < 1e-9,
            "dist {d} vs residual {residual}"
        );
    }
}

#[test]
fn dual_of_orthonormal_basis_is_itself() {
    let e: Vec<Vec<f64>> = (0..4)
        .map(|i| (0..4).map(|j| f64::from(i == j)).collect())
        .collect();
    let pair = biorthogonal_duals(&e).unwrap();
    for (ei, fi) in e.iter().zip(&pair.f) {
        for (a, b) in ei.iter().zip(fi) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn dual_of_shear_basis() {
    let e = vec![vec![1.0, 0.0], vec![1.0, 1.0]];
    let pair = biorthogonal_duals(&e).unwrap();
    assert!((pair.f[0][0] - 1.0).abs() < 1e-12);
    assert!((pair.f[0][1] + 1.0).abs() < 1e-12);
    assert!((pair.f[1][0] - 0.0).abs() < 1e-12);
    assert!((pair.f[1][1] - 1.0).abs() < 1e-12);

    // |F_1| = 1 / dist(E_1, span E_2)
    let f1_norm = (pair.f[0][0] * pair.f[0][0] + pair.f[0][1] * pair.f[0][1]).sqrt();
    let d = dist_to_span(&e[0], &[e[1].clone()]).unwrap();
    assert!((f1_norm - 2f64.sqrt()).abs() < 1e-12);
    assert!((f1_norm * d - 1.0).abs() < 1e-12);
}

#[test]
fn dual_norm_identity_random_bases() {
    let mut rng = SeedSpec::for_experiment(12, "dual-oracle").aux_rng(0);
    let mut tested = 0;
    while tested < 60 {
        let n = rng.gen_range(2..=16usize);
        let e: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let pair = match biorthogonal_duals(&e) {
            Ok(p) => p,
            Err(Error::SingularInput(_)) => continue,
            Err(e) => panic!("unexpected error {e}"),
        };
        // Skip badly conditioned draws; the identity is exact but its
        // floating evaluation degrades with the condition number.
        let max_f = pair
            .f
            .iter()
            .map(|f| f.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0f64, f64::max);
        if max_f > 1e4 {
            continue;
        }
        for k in 0..n {
            for j in 0..n {
                let ip: f64 = e[j].iter().zip(&pair.f[k]).map(|(a, b)| a * b).sum();
                let target = f64::from(j == k);
                assert!((ip - target).abs() < 1e-8, "n={n} <E_{j}, F_{k}> = {ip}");
            }
            let fk_norm = pair.f[k].iter().map(|x| x * x).sum::<f64>().sqrt();
            let others: Vec<Vec<f64>> = (0..n)
                .filter(|&i| i != k)
                .map(|i| e[i].clone())
                .collect();
            if others.is_empty() {
                continue;
            }
            let dist = dist_to_span(&e[k], &others).unwrap();
            assert!(
                (fk_norm * dist - 1.0).abs() < 1e-8,
                "n={n} k={k}: |F_k| dist = {}",
                fk_norm * dist
            );
        }
        tested += 1;
    }
}

#[test]
fn exact_singularity_on_tiny_cases() {
    assert!(!is_singular_exact(&mat(2, &[&[1], &[0]])).unwrap());
    assert!(is_singular_exact(&mat(2, &[&[0], &[0]])).unwrap());
    assert!(!is_singular_exact(&j_minus_i()).unwrap());
}

// Exhaustive: of the 27 matrices at m = n = 3, d = 2, exactly the 6 row
// permutations of the three distinct supports are invertible.
#[test]
fn exact_singularity_census() {
    let mut singular = 0usize;
    let mut total = 0usize;
    for m in enumerate_matrices(3, 3, 2).unwrap() {
        total += 1;
        if is_singular_exact(&m).unwrap() {
            singular += 1;
        }
    }
    assert_eq!(total, 27);
    assert_eq!(singular, 21);
}

#[test]
fn exact_singularity_agrees_with_svd_on_all_tiny_squares() {
    for n in 1..=3usize {
        for d in 1..=n {
            for m in enumerate_matrices(n, n, d).unwrap() {
                let s = spectrum(&m).unwrap();
                let exact = is_singular_exact(&m).unwrap();
                let float_singular = s.sn < 1e-8 * s.s1;
                assert_eq!(
                    exact, float_singular,
                    "disagreement at n={n} d={d}: sn={} s1={}",
                    s.sn, s.s1
                );
            }
        }
    }
}

#[test]
fn certificate_on_identity() {
    let cert = witness_certificate(&mat(2, &[&[0], &[1]])).unwrap();
    assert!((cert.x[0] - 1.0).abs() < 1e-12);
    assert!(cert.x[1].abs() < 1e-12);
    assert!((cert.x_norm - 1.0).abs() < 1e-12);
    assert!((cert.image_norm - 1.0).abs() < 1e-12);
    assert!((cert.bound - 1.0).abs() < 1e-12);
}

// For J - I: |x| = 2/sqrt(3), |(M^T)^{-1} x| = sqrt(11)/3, so the bound
// is 6/sqrt(33) which indeed sits just above sn = 1.
#[test]
fn certificate_on_j_minus_i() {
    let cert = witness_certificate(&j_minus_i()).unwrap();
    assert!((cert.x_norm - 2.0 / 3f64.sqrt()).abs() < 1e-12);
    assert!((cert.image_norm - 11f64.sqrt() / 3.0).abs() < 1e-12);
    assert!((cert.bound - 6.0 / 33f64.sqrt()).abs() < 1e-12);
    assert!(cert.bound >= 1.0);
}

#[test]
fn certificate_rejects_singular_input() {
    assert!(matches!(
        witness_certificate(&mat(2, &[&[0], &[0]])),
        Err(Error::SingularInput(_))
    ));
}

#[test]
fn certificate_upper_bounds_sn_on_random_draws() {
    let seeds = SeedSpec::for_experiment(13, "cert-random");
    let mut rng = seeds.aux_rng(0);
    let mut done = 0usize;
    let mut trial = 0u64;
    while done < 1000 {
        let n = rng.gen_range(2..=8usize);
        let d = rng.gen_range(1..=n);
        let m = sample_matrix(n, n, d, &seeds, trial).unwrap();
        trial += 1;
        if is_singular_exact(&m).unwrap() {
            continue;
        }
        let s = spectrum(&m).unwrap();
        let cert = witness_certificate(&m).unwrap();
        assert!(
            cert.bound >= s.sn - 1e-8 * s.s1,
            "n={n} d={d}: bound {} < sn {}",
            cert.bound,
            s.sn
        );
        done += 1;
    }
}

#[test]
fn decomposition_on_identity() {
    let r = decomposition_check(&mat(3, &[&[0], &[1], &[2]])).unwrap();
    assert!((r.identity_lhs - 1.0).abs() < 1e-12);
    assert!((r.identity_rhs - 1.0).abs() < 1e-12);
    assert!(r.passes(1e-10));
}

#[test]
fn decomposition_on_j_minus_i() {
    let r = decomposition_check(&j_minus_i()).unwrap();
    assert!((r.identity_lhs - 11.0 / 9.0).abs() < 1e-12);
    assert!((r.identity_rhs - 11.0 / 9.0).abs() < 1e-12);
    assert!(r.passes(1e-8));
}

#[test]
fn decomposition_residuals_on_random_draws() {
    let seeds = SeedSpec::for_experiment(14, "decomp-random");
    let mut rng = seeds.aux_rng(0);
    let mut done = 0usize;
    let mut trial = 0u64;
    while done < 1000 {
        let n = rng.gen_range(2..=8usize);
        let d = rng.gen_range(1..=n);
        let m = sample_matrix(n, n, d, &seeds, trial).unwrap();
        trial += 1;
        if is_singular_exact(&m).unwrap() {
            continue;
        }
        match decomposition_check(&m) {
            Ok(r) => {
                assert!(r.passes(1e-8), "n={n} d={d}: {r:?}");
                done += 1;
            }
            // Spans with a repeated row drop below dimension n - 2; the
            // check legitimately refuses those.
            Err(Error::SingularInput(_)) | Err(Error::NumericalFailure(_)) => continue,
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}

#[test]
fn row_sum_action_is_exact() {
    let seeds = SeedSpec::for_experiment(15, "row-sums");
    for trial in 0..50u64 {
        let m = sample_matrix(9, 9, 4, &seeds, trial).unwrap();
        let ones = vec![1.0; 9];
        for y in m.mul_vec(&ones) {
            assert_eq!(y, 4.0);
        }
        let s = spectrum(&m).unwrap();
        assert!(s.s1 >= 4.0 - 1e-10);
    }
}

// |M - (d/n) J| must equal the norm of M restricted to the zero-sum
// hyperplane, computed here through an explicit projector.
#[test]
fn centered_norm_matches_hyperplane_restriction() {
    let seeds = SeedSpec::for_experiment(16, "centered");
    for trial in 0..20u64 {
        let n = 12usize;
        let m = sample_matrix(n, n, 5, &seeds, trial).unwrap();
        let s = spectrum(&m).unwrap();
        let dense = m.to_dense();
        let projector =
            DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
        let restricted = &dense * projector;
        let top = restricted
            .svd(false, false)
            .singular_values
            .iter()
            .cloned()
            .fold(0.0f64, f64::max);
        let rel = (s.centered_opnorm - top).abs() / top.max(1.0);
        assert!(rel < 1e-8, "centered {} vs restricted {top}", s.centered_opnorm);
    }
}
