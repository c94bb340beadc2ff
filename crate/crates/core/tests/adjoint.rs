mod common;

use mfsmp::adjoint::{
    constant_path_oracle, read_adjoint_csv, regress_conditional, solve_adjoints, solve_first_order,
    write_adjoint_csv, QPairing, RegressionBasis,
};
use mfsmp::copy::CopyIndex;
use mfsmp::fixtures;
use mfsmp::forward::{simulate, ParticlePathEnsemble};
use mfsmp::paths::KnotArray;
use mfsmp::smp::AdjointSummary;
use mfsmp::Error;
use proptest::prelude::*;

fn knot_means(a: &KnotArray) -> Vec<f64> {
    (0..a.knots()).map(|m| a.knot_mean(m, |z| z[0])).collect()
}

fn solve(
    name: &str,
    steps: usize,
    particles: usize,
) -> (ParticlePathEnsemble, mfsmp::adjoint::AdjointSolution) {
    let fx = fixtures::load(name).unwrap();
    let u = common::zero_control();
    let ens = simulate(&fx.spec, &u, &common::grid(steps), particles, 42).unwrap();
    let sol = solve_adjoints(
        &fx.spec,
        &ens,
        &u,
        &RegressionBasis::default(),
        &CopyIndex::full(),
    )
    .unwrap();
    (ens, sol)
}

#[test]
fn regression_recovers_constants_and_polynomials() {
    let states: Vec<f64> = (0..100).map(|i| -1.0 + 2.0 * i as f64 / 99.0).collect();
    let basis = RegressionBasis::default();
    let c = vec![3.5; 100];
    let fit = regress_conditional(&c, 1, &states, 1, &basis).unwrap();
    assert!(fit.fitted.iter().all(|y| (y - 3.5).abs() < 1e-12));

    let lin = RegressionBasis::new(1, 0.0).unwrap();
    let two_x: Vec<f64> = states.iter().map(|x| 2.0 * x).collect();
    let fit = regress_conditional(&two_x, 1, &states, 1, &lin).unwrap();
    assert!(fit.coefficients[0].abs() < 1e-10);
    assert!((fit.coefficients[1] - 2.0).abs() < 1e-10);

    let sq: Vec<f64> = states.iter().map(|x| x * x).collect();
    let fit = regress_conditional(&sq, 1, &states, 1, &basis).unwrap();
    let worst = fit
        .fitted
        .iter()
        .zip(&sq)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-9);
}

#[test]
fn rank_deficient_design_asks_for_a_ridge() {
    // two distinct states cannot carry a quadratic fit
    let states: Vec<f64> = (0..40).map(|i| (i % 2) as f64).collect();
    let targets = vec![1.0; 40];
    let err =
        regress_conditional(&targets, 1, &states, 1, &RegressionBasis::default()).unwrap_err();
    assert!(matches!(err, Error::RankDeficient { .. }), "{err}");
    assert!(err.to_string().contains("ridge"));
    let ridge = RegressionBasis::new(2, 1e-6).unwrap();
    assert!(regress_conditional(&targets, 1, &states, 1, &ridge).is_ok());
    assert!(RegressionBasis::new(2, -1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Targets that are quadratic polynomials of the state are fitted exactly.
    #[test]
    fn regression_reproduces_quadratics(a in -5.0..5.0f64, b in -5.0..5.0f64, c in -5.0..5.0f64, shift in -3.0..3.0f64) {
        let states: Vec<f64> = (0..60).map(|i| shift + (i as f64 * 0.37).sin()).collect();
        let targets: Vec<f64> = states.iter().map(|x| a + b * x + c * x * x).collect();
        let fit = regress_conditional(&targets, 1, &states, 1, &RegressionBasis::default()).unwrap();
        for (y, t) in fit.fitted.iter().zip(&targets) {
            prop_assert!((y - t).abs() <= 1e-8 * (1.0 + t.abs()));
        }
    }
}

#[test]
fn zero_problem_has_zero_adjoints() {
    let (_, sol) = solve("zero", 20, 200);
    assert!(sol.first.p.is_all_zero());
    assert!(sol.first.q.is_all_zero());
    assert!(sol.second.big_p.is_all_zero());
    assert!(sol.second.big_q.is_all_zero());
}

#[test]
fn example11_first_order_adjoint_vanishes() {
    let (_, sol) = solve("example11", 100, 10_000);
    let summary = AdjointSummary::new(&sol);
    assert!(summary.max_mean_abs_p <= 5e-2);
    assert!(summary.max_mean_abs_q <= 5e-2);
    assert!(summary.max_asymmetry <= 5e-2);
}

#[test]
fn linear_fixture_first_order_oracle() {
    let (ens, sol) = solve("linear_p", 200, 10_000);
    let err =
        common::relative_sup_error(&knot_means(&sol.first.p), &common::knot_times(&ens), |t| {
            1.0 - t
        });
    assert!(err <= 0.02, "relative error {err}");
}

#[test]
fn linear_fixture_second_order_oracle() {
    let (ens, sol) = solve("linear_big_p", 200, 10_000);
    let exact = |t: f64| (1.0 - t).exp() - 1.0;
    let err = common::relative_sup_error(
        &knot_means(&sol.second.big_p),
        &common::knot_times(&ens),
        exact,
    );
    assert!(err <= 0.02, "relative error {err}");
}

#[test]
fn first_order_adjoint_scales_with_the_terminal_cost() {
    let run = |c: f64| {
        let fx = common::scalar_fixture(
            1.0,
            r#"monomials = [ { vars = "v", coeff = 1.0 }, { vars = "x", coeff = 0.3 } ]"#,
            r#"monomials = [ { vars = "x", coeff = 0.4 } ]"#,
            "",
            &format!(r#"monomials = [ {{ vars = "x^2", coeff = {c:?} }} ]"#),
        );
        let u = common::zero_control();
        let ens = simulate(&fx.spec, &u, &common::grid(50), 2000, 8).unwrap();
        solve_first_order(
            &fx.spec,
            &ens,
            &u,
            &RegressionBasis::default(),
            &CopyIndex::full(),
        )
        .unwrap()
    };
    let (one, three) = (run(1.0), run(3.0));
    for (a, b) in one.p.as_slice().iter().zip(three.p.as_slice()) {
        assert!((3.0 * a - b).abs() <= 1e-8 * (1.0 + b.abs()));
    }
    for (a, b) in one.q.as_slice().iter().zip(three.q.as_slice()) {
        assert!((3.0 * a - b).abs() <= 1e-8 * (1.0 + b.abs()));
    }
}

#[test]
fn example11_oracle_starts_from_the_mean_field_terminal_value() {
    let fx = fixtures::example11();
    let curve =
        constant_path_oracle(&fx.spec, &[1.0], &[0.0], 10_000, QPairing::Symmetric).unwrap();
    assert!((curve.big_p_at(1.0)[0] - 4.0).abs() < 1e-12);
    // P' = -4 P along X = 1
    assert!((curve.big_p_at(0.0)[0] - 4.0 * 4.0f64.exp()).abs() < 1e-8);
    assert!(curve.p.iter().all(|p| p[0] == 0.0));
}

#[test]
fn oracle_refuses_moving_paths() {
    let fx = fixtures::load("linear_p").unwrap();
    assert!(constant_path_oracle(&fx.spec, &[0.0], &[0.0], 100, QPairing::Symmetric).is_err());
}

#[test]
fn adjoint_csv_round_trip() {
    let (ens, sol) = solve("gbm", 8, 100);
    let mut buf = Vec::new();
    write_adjoint_csv(&sol, ens.grid(), 1, 1, 3, &mut buf).unwrap();
    let rows = read_adjoint_csv(buf.as_slice()).unwrap();
    // p and P on 9 knots, q and Q on 8 steps, 3 particles
    assert_eq!(rows.len(), 3 * (9 * 2 + 8 * 2));
    for r in &rows {
        let stored = match r.block.as_str() {
            "p" => sol.first.p.get(r.step, r.particle)[r.row],
            "q" => sol.first.q.get(r.step, r.particle)[r.col],
            "P" => sol.second.big_p.get(r.step, r.particle)[r.col],
            "Q" => sol.second.big_q.get(r.step, r.particle)[r.col],
            other => panic!("unexpected block {other}"),
        };
        assert_eq!(r.value, stored);
    }
}
