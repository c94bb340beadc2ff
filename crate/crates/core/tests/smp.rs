mod common;

use mfsmp::adjoint::{solve_adjoints, RegressionBasis};
use mfsmp::copy::CopyIndex;
use mfsmp::fixtures;
use mfsmp::forward::{simulate, ControlProcess};
use mfsmp::measure::empirical_from_samples;
use mfsmp::problem::Fixture;
use mfsmp::smp::{
    check_candidate, cost, expansion_audit, hamiltonian, hamiltonian_gap, ito_residual,
    CheckConfig, CheckRun, ExpansionConfig,
};

fn check(fx: &Fixture, particles: usize, extra: Vec<Vec<f64>>) -> CheckRun {
    let u = ControlProcess::constant(fx.candidate.clone().unwrap());
    let cfg = CheckConfig {
        particles,
        extra_points: extra,
        ..CheckConfig::default()
    };
    check_candidate(&fx.spec, &fx.name, &u, &cfg).unwrap()
}

fn condition_at(run: &CheckRun, v: f64) -> &mfsmp::smp::ConditionTable {
    run.report
        .second_order
        .tables
        .iter()
        .find(|t| t.v == [v])
        .unwrap()
}

#[test]
fn hamiltonian_pairs_adjoints_with_coefficients() {
    let fx = fixtures::load("nonsingular").unwrap();
    let mu = empirical_from_samples(&[vec![0.2], vec![0.4]], None).unwrap();
    // p = q = 0 leaves h = x + v^2
    let h = hamiltonian(&fx.spec, 0.0, &[0.3], &mu, &[0.0], &[0.0], &[2.0]).unwrap();
    assert!((h - 4.3).abs() < 1e-14);
    let plain = common::scalar_fixture(
        0.0,
        r#"monomials = [ { vars = "v", coeff = 1.0 } ]"#,
        "",
        "",
        "",
    );
    let h = hamiltonian(&plain.spec, 0.0, &[0.3], &mu, &[1.0], &[0.0], &[3.0]).unwrap();
    assert_eq!(h, 3.0);
    let ex = fixtures::example11();
    let one = empirical_from_samples(&[vec![1.0]], None).unwrap();
    for v in [-1.0, 0.0, 1.0] {
        assert_eq!(
            hamiltonian(&ex.spec, 0.5, &[1.0], &one, &[0.0], &[0.0], &[v]).unwrap(),
            0.0
        );
    }
}

#[test]
fn gap_is_two_for_unit_adjoint() {
    // b = v, h = v^2, Phi = x gives p = 1 and Delta H = 1 + 1 at v = 1
    let fx = common::scalar_fixture(
        0.0,
        r#"monomials = [ { vars = "v", coeff = 1.0 } ]"#,
        r#"monomials = [ { vars = "", coeff = 0.3 } ]"#,
        r#"monomials = [ { vars = "v^2", coeff = 1.0 } ]"#,
        r#"monomials = [ { vars = "x", coeff = 1.0 } ]"#,
    );
    let u = common::zero_control();
    let ens = simulate(&fx.spec, &u, &common::grid(40), 500, 3).unwrap();
    let sol = solve_adjoints(
        &fx.spec,
        &ens,
        &u,
        &RegressionBasis::default(),
        &CopyIndex::full(),
    )
    .unwrap();
    let gap = hamiltonian_gap(
        &fx.spec,
        &ens,
        &u,
        &sol.first,
        &ControlProcess::constant(vec![1.0]),
    )
    .unwrap();
    assert!(gap.mean.iter().all(|g| (g - 2.0).abs() < 1e-9));
    let same = hamiltonian_gap(&fx.spec, &ens, &u, &sol.first, &u).unwrap();
    assert!(same.mean.iter().all(|&g| g == 0.0));
}

#[test]
fn example11_candidate_is_singular_and_passes_both_conditions() {
    let fx = fixtures::example11();
    let run = check(&fx, 4000, vec![vec![-0.5], vec![0.5]]);
    let r = &run.report;
    assert!(r.first_order.result.pass);
    assert!(r.first_order.result.witness.is_none());
    for t in &r.first_order.tables {
        assert!(t.gap.mean.iter().all(|g| g.abs() <= 5e-2));
    }
    assert!(r.singular_region.covers_grid);
    assert!(r.singular_region.positive_measure);
    assert!(r.second_order.pass);
    assert!(r.second_order.nonnegative_everywhere);
    let shape = r.second_order.shape.as_ref().unwrap();
    assert!(shape.pass && shape.r_squared >= 0.99 && shape.asymmetry <= 0.1);
    assert!(condition_at(&run, 0.0)
        .series
        .mean
        .iter()
        .all(|&x| x == 0.0));
}

#[test]
fn suboptimal_candidate_has_a_witness_at_one() {
    let fx = fixtures::load("suboptimal").unwrap();
    let run = check(&fx, 1000, Vec::new());
    let res = &run.report.first_order.result;
    assert!(!res.pass);
    assert!(res.violation > 0.0);
    assert_eq!(res.witness.as_ref().unwrap().v, vec![1.0]);
}

#[test]
fn control_free_hamiltonian_has_no_violation() {
    let fx = fixtures::load("zero").unwrap();
    let run = check(&fx, 200, Vec::new());
    assert_eq!(run.report.first_order.result.violation, 0.0);
    assert!(run.report.first_order.result.pass);
}

#[test]
fn convex_cost_is_singular_only_at_the_candidate() {
    let fx = fixtures::load("convex").unwrap();
    let run = check(&fx, 500, Vec::new());
    let region = &run.report.singular_region;
    let points: Vec<usize> = region.cells.iter().map(|c| c.1).collect();
    assert!(!points.is_empty());
    assert!(points
        .iter()
        .all(|&i| run.report.meta.control_grid[i] == [0.0]));
    assert!(!region.positive_measure);
    assert!(run.report.first_order.result.pass);
}

#[test]
fn zero_tolerance_on_noisy_gaps_is_empty_off_candidate() {
    let fx = fixtures::load("gbm").unwrap();
    let u = common::zero_control();
    let cfg = CheckConfig {
        particles: 500,
        tol_sing: Some(0.0),
        ..CheckConfig::default()
    };
    let run = check_candidate(&fx.spec, &fx.name, &u, &cfg).unwrap();
    // off-candidate gaps are Monte Carlo estimates, never exactly zero
    let region = &run.report.singular_region;
    assert!(region
        .cells
        .iter()
        .all(|c| run.report.meta.control_grid[c.1] == [0.0]));
    assert!(!region.positive_measure);
}

#[test]
fn optimal_lq_feedback_passes_the_first_order_check() {
    let fx = fixtures::load("lq_optimal").unwrap();
    let run = check(&fx, 2000, Vec::new());
    assert!(run.report.first_order.result.pass);
}

#[test]
fn kernel_fixture_second_order_value() {
    let fx = fixtures::load("kernel").unwrap();
    let run = check(&fx, 200, Vec::new());
    let table = condition_at(&run, 2.0);
    assert!(
        table.series.mean.iter().all(|x| (x - 2.0).abs() < 1e-9),
        "{:?}",
        &table.series.mean[..3]
    );
    assert!(run.adjoint.second.big_p.is_all_zero());
}

#[test]
fn cost_of_reference_problems() {
    let ex = fixtures::example11();
    let u = common::zero_control();
    let ens = simulate(&ex.spec, &u, &common::grid(100), 1000, 42).unwrap();
    assert_eq!(cost(&ex.spec, &ens, &u).unwrap(), (0.0, 0.0));

    let unit = common::scalar_fixture(
        0.0,
        "",
        r#"monomials = [ { vars = "", coeff = 1.0 } ]"#,
        r#"monomials = [ { vars = "", coeff = 1.0 } ]"#,
        "",
    );
    let ens = simulate(&unit.spec, &u, &common::grid(64), 100, 1).unwrap();
    let (j, se) = cost(&unit.spec, &ens, &u).unwrap();
    assert!((j - 1.0).abs() < 1e-12 && se < 1e-12);
}

#[test]
fn example11_cost_agrees_across_independent_seeds() {
    let ex = fixtures::example11();
    let v = ControlProcess::constant(vec![1.0]);
    let est = |seed| {
        let ens = simulate(&ex.spec, &v, &common::grid(100), 10_000, seed).unwrap();
        cost(&ex.spec, &ens, &v).unwrap()
    };
    let ((a, sa), (b, sb)) = (est(42), est(4242));
    assert!(
        (a - b).abs() <= 3.0 * (sa * sa + sb * sb).sqrt(),
        "{a} +- {sa} vs {b} +- {sb}"
    );
}

#[test]
fn ito_residual_trivial_functionals() {
    let drift_one = common::scalar_fixture(
        0.5,
        r#"monomials = [ { vars = "", coeff = 1.0 } ]"#,
        "",
        "",
        "",
    );
    let u = common::zero_control();
    let ens = simulate(&drift_one.spec, &u, &common::grid(40), 50, 1).unwrap();
    let constant = common::scalar_fixture(
        0.0,
        "",
        "",
        "",
        r#"monomials = [ { vars = "", coeff = 2.5 } ]"#,
    );
    let identity = common::scalar_fixture(
        0.0,
        "",
        "",
        "",
        r#"monomials = [ { vars = "x", coeff = 1.0 } ]"#,
    );
    for s in [10, 20, 40] {
        let c = ito_residual(&drift_one.spec, &constant.spec.terminal_cost, &ens, &u, s).unwrap();
        assert_eq!(c.residual, 0.0);
        let x = ito_residual(&drift_one.spec, &identity.spec.terminal_cost, &ens, &u, s).unwrap();
        assert!(x.residual.abs() <= 1e-12);
        assert!((x.increment - ens.grid().knot(s)).abs() <= 1e-12);
    }
}

#[test]
fn ito_residual_for_the_squared_mean() {
    let bm = common::scalar_fixture(
        0.3,
        "",
        r#"monomials = [ { vars = "", coeff = 1.0 } ]"#,
        "",
        "",
    );
    let mean_sq = common::scalar_fixture(
        0.0,
        "",
        "",
        "",
        r#"basis = [ { monomials = [ { vars = "y", coeff = 1.0 } ] } ]
monomials = [ { vars = "m^2", coeff = 1.0 } ]"#,
    );
    let u = common::zero_control();
    let steps = 100;
    let ens = simulate(&bm.spec, &u, &common::grid(steps), 10_000, 42).unwrap();
    let dt = ens.grid().dt();
    for s in [25, 50, 100] {
        let r = ito_residual(&bm.spec, &mean_sq.spec.terminal_cost, &ens, &u, s).unwrap();
        assert!(r.within(3.0, 2.0 * dt), "{r:?}");
        // E[m^2] - x0^2 = s / N for the empirical mean of N Brownian particles
        assert!((r.finite_particle_term - ens.grid().knot(s) / 10_000.0).abs() <= 1e-9);
    }
}

#[test]
fn expansion_of_an_unperturbed_control_is_zero() {
    let fx = fixtures::load("nonsingular").unwrap();
    let u = common::zero_control();
    let cfg = ExpansionConfig {
        particles: 200,
        ..ExpansionConfig::default()
    };
    let audit = expansion_audit(&fx.spec, &u, &u, &cfg).unwrap();
    assert_eq!((audit.c1, audit.c2), (0.0, 0.0));
    assert!(audit.rungs.iter().all(|r| r.delta_j == 0.0));
    let short = ExpansionConfig {
        ladder: vec![0.4, 0.2],
        ..cfg
    };
    assert!(expansion_audit(&fx.spec, &u, &u, &short).is_err());
}
