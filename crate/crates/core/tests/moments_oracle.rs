//! The closed-form residual second moment against the exact enumeration
//! oracle. The small cases below are full enumerations of the matrix
//! space, so their oracle values are exact rationals.

use combilab_core::moments::{
    moment_report, x_second_moment, x_second_moment_oracle, x_tail_check,
    OracleMode,
};
use combilab_core::sampler::SeedSpec;
use combilab_core::Error;

fn seeds(tag: &str) -> SeedSpec {
    SeedSpec::for_experiment(51, tag)
}

#[test]
fn formula_values_at_small_sizes() {
    let cases = [
        (2usize, 1usize, 1.0 / 2.0),
        (3, 1, 1.0 / 3.0),
        (3, 2, 7.0 / 12.0),
        (4, 2, 5.0 / 9.0),
    ];
    for (n, d, expected) in cases {
        let (v, cap) = x_second_moment(n, d).unwrap();
        assert!((v - expected).abs() < 1e-15, "({n},{d}): {v}");
        assert!((cap - 3.0 * d as f64 / n as f64).abs() < 1e-15);
        assert!(v <= cap);
    }
}

// Full enumerations. The failure mode these freeze: the closed form is
// an upper bound with Cauchy-Schwarz slack, so away from (2,1) it
// matches neither the unconditional nor the conditional mean.
#[test]
fn exact_oracle_at_2_1() {
    let r = moment_report(2, 1, OracleMode::Exact, &seeds("exact-2-1")).unwrap();
    assert_eq!(r.exact_oracle, Some(true));
    assert_eq!(r.degenerate_mass, Some(0.0));
    assert!((r.oracle_value.unwrap() - 0.5).abs() < 1e-14);
    assert!((r.conditional_value.unwrap() - 0.5).abs() < 1e-14);
    assert!(r.abs_diff.unwrap() < 1e-14);
    assert!(r.passes());
}

#[test]
fn exact_oracle_at_3_1() {
    let r = moment_report(3, 1, OracleMode::Exact, &seeds("exact-3-1")).unwrap();
    assert_eq!(r.exact_oracle, Some(true));
    assert_eq!(r.degenerate_mass, Some(1.0 / 3.0));
    assert!((r.oracle_value.unwrap() - 4.0 / 9.0).abs() < 1e-14);
    // Conditioned on nondegenerate spans the formula is exact here.
    assert!((r.conditional_value.unwrap() - 1.0 / 3.0).abs() < 1e-14);
    assert!((r.formula_value - 1.0 / 3.0).abs() < 1e-15);
    assert!(!r.passes());
}

#[test]
fn exact_oracle_at_3_2() {
    let r = moment_report(3, 2, OracleMode::Exact, &seeds("exact-3-2")).unwrap();
    assert_eq!(r.exact_oracle, Some(true));
    assert_eq!(r.degenerate_mass, Some(1.0 / 3.0));
    assert!((r.oracle_value.unwrap() - 17.0 / 27.0).abs() < 1e-14);
    assert!((r.conditional_value.unwrap() - 4.0 / 9.0).abs() < 1e-14);
    assert!((r.formula_value - 7.0 / 12.0).abs() < 1e-15);
    assert!(!r.passes());
}

#[test]
fn exact_oracle_at_4_2() {
    let r = moment_report(4, 2, OracleMode::Exact, &seeds("exact-4-2")).unwrap();
    assert_eq!(r.exact_oracle, Some(true));
    assert_eq!(r.degenerate_mass, Some(4.0 / 9.0));
    assert!((r.oracle_value.unwrap() - 11.0 / 18.0).abs() < 1e-14);
    assert!((r.conditional_value.unwrap() - 2.0 / 5.0).abs() < 1e-14);
    assert!((r.formula_value - 5.0 / 9.0).abs() < 1e-15);
    assert!(!r.passes());
}

#[test]
fn oracle_never_exceeds_the_cap() {
    for (n, d) in [(2usize, 1usize), (3, 1), (3, 2), (4, 2), (4, 3), (4, 4)] {
        let (_, cap) = x_second_moment(n, d).unwrap();
        let out =
            x_second_moment_oracle(n, d, OracleMode::Exact, &seeds("cap")).unwrap();
        assert!(
            out.mean <= cap + 1e-12,
            "({n},{d}): oracle {} above cap {cap}",
            out.mean
        );
    }
}

#[test]
fn monte_carlo_oracle_agrees_with_enumeration() {
    let (n, d) = (4usize, 2usize);
    let exact =
        x_second_moment_oracle(n, d, OracleMode::Exact, &seeds("mc-ref")).unwrap();
    let mc = x_second_moment_oracle(
        n,
        d,
        OracleMode::MonteCarlo { trials: 40_000 },
        &seeds("mc-run"),
    )
    .unwrap();
    assert!(!mc.exact);
    let se = mc.standard_error.unwrap();
    assert!(
        (mc.mean - exact.mean).abs() <= 4.0 * se,
        "mc {} vs exact {} (se {se})",
        mc.mean,
        exact.mean
    );
}

#[test]
fn auto_mode_picks_the_feasible_route() {
    let small = x_second_moment_oracle(
        3,
        2,
        OracleMode::Auto { mc_trials: 1000 },
        &seeds("auto-small"),
    )
    .unwrap();
    assert!(small.exact);

    // C(30,15)^30 dwarfs any budget.
    let large = x_second_moment_oracle(
        30,
        15,
        OracleMode::Auto { mc_trials: 500 },
        &seeds("auto-large"),
    )
    .unwrap();
    assert!(!large.exact);
    assert_eq!(large.trials, Some(500));
}

#[test]
fn exact_mode_errors_beyond_the_budget() {
    assert!(matches!(
        x_second_moment_oracle(30, 15, OracleMode::Exact, &seeds("too-big")),
        Err(Error::CapacityExceeded(_))
    ));
}

#[test]
fn parameter_validation() {
    assert!(matches!(
        x_second_moment(1, 1),
        Err(Error::InvalidParameter(_))
    ));
    assert!(matches!(
        x_second_moment(4, 0),
        Err(Error::InvalidParameter(_))
    ));
    assert!(matches!(
        x_second_moment(4, 5),
        Err(Error::InvalidParameter(_))
    ));
}

#[test]
fn tail_probability_respects_the_markov_bound() {
    let r = x_tail_check(12, 6, 1.2, 600, &seeds("tail")).unwrap();
    assert!((r.bound.unwrap() - 3.0 * 6.0 / (1.2 * 1.2 * 12.0)).abs() < 1e-14);
    assert!(!r.violates(4.0));

    // Thresholds beyond sqrt(cap) can never fire much; the bound stays
    // honest there too.
    let r = x_tail_check(12, 6, 2.0, 600, &seeds("tail-far")).unwrap();
    assert!(!r.violates(4.0));
}

#[test]
fn tail_bound_holds_at_the_half_density_point() {
    for &u in &[1.0, 2.0] {
        let r = x_tail_check(100, 50, u, 200, &seeds("tail-dense")).unwrap();
        assert!(
            !r.violates(4.0),
            "u = {u}: p = {} vs bound {:?}",
            r.empirical_prob,
            r.bound
        );
    }
}
