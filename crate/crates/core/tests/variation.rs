mod common;

use mfsmp::copy::CopyIndex;
use mfsmp::fixtures;
use mfsmp::forward::{simulate_with_noise, ControlProcess, NoiseField};
use mfsmp::problem::ProblemSpec;
use mfsmp::variation::{
    control_distance, first_variation, leading_spike_set, partition_spike_set,
    read_convergence_csv, second_variation, spike_control, transition_matrix, uniform_partition,
    variation_ensemble, write_convergence_csv, OrderRow, VariationEnsemble,
};
use proptest::prelude::*;
use std::sync::Arc;

fn spiked_run(
    spec: &ProblemSpec,
    steps: usize,
    particles: usize,
    spikes: &[usize],
    seed: u64,
) -> VariationEnsemble {
    let grid = common::grid(steps);
    let u = common::zero_control();
    let v = ControlProcess::constant(vec![1.0]);
    let vhat = spike_control(&u, &v, spikes, &grid).unwrap();
    let noise = Arc::new(NoiseField::generate(
        seed,
        &grid,
        particles,
        spec.dims.noise,
    ));
    let ens_u = simulate_with_noise(spec, &u, &grid, noise.clone()).unwrap();
    let ens_v = simulate_with_noise(spec, &vhat, &grid, noise).unwrap();
    variation_ensemble(spec, &ens_u, &ens_v, &u, &vhat, &CopyIndex::full()).unwrap()
}

#[test]
fn control_distance_counts_differing_steps() {
    let grid = common::grid(100);
    let u = common::zero_control();
    let v = ControlProcess::constant(vec![1.0]);
    assert_eq!(control_distance(&u, &u, &grid, 3).unwrap(), 0.0);
    assert!((control_distance(&u, &v, &grid, 3).unwrap() - 1.0).abs() < 1e-12);
    let quarter: Vec<usize> = (0..25).collect();
    let s = spike_control(&u, &v, &quarter, &grid).unwrap();
    assert!((control_distance(&u, &s, &grid, 3).unwrap() - 0.25).abs() <= grid.dt());
}

#[test]
fn spike_control_switches_on_the_spike_set() {
    let grid = common::grid(100);
    let u = common::zero_control();
    let v = ControlProcess::constant(vec![1.0]);
    let first_ten: Vec<usize> = (0..10).collect();
    let s = spike_control(&u, &v, &first_ten, &grid).unwrap();
    for m in 0..100 {
        assert_eq!(s.value(m, 0)[0], if m < 10 { 1.0 } else { 0.0 });
    }
    let none = spike_control(&u, &v, &[], &grid).unwrap();
    let all: Vec<usize> = (0..100).collect();
    let full = spike_control(&u, &v, &all, &grid).unwrap();
    for m in 0..100 {
        assert_eq!(none.value(m, 1)[0], 0.0);
        assert_eq!(full.value(m, 1)[0], 1.0);
    }
}

#[test]
fn partition_spike_sets_take_leading_steps() {
    let g10 = common::grid(10);
    assert_eq!(
        partition_spike_set(&g10, 0.5, &[0, 10]).unwrap(),
        vec![0, 1, 2, 3, 4]
    );
    let g100 = common::grid(100);
    let cells = uniform_partition(&g100, 10).unwrap();
    let set = partition_spike_set(&g100, 0.1, &cells).unwrap();
    assert_eq!(set, (0..10).map(|c| 10 * c).collect::<Vec<_>>());
    let g64 = common::grid(64);
    let cells = uniform_partition(&g64, 8).unwrap();
    let set = partition_spike_set(&g64, 0.25, &cells).unwrap();
    assert_eq!(set.len(), 16);
    assert_eq!(&set[..4], &[0, 1, 8, 9]);
    assert_eq!(
        leading_spike_set(&g100, 0.2).unwrap(),
        (0..20).collect::<Vec<_>>()
    );
}

#[test]
fn unspiked_variations_vanish() {
    let fx = fixtures::load("quadratic").unwrap();
    let run = spiked_run(&fx.spec, 50, 200, &[], 4);
    assert!(run.x1.is_all_zero());
    assert!(run.x2.is_all_zero());
    assert!(run.xstar.is_all_zero());
}

#[test]
fn example11_first_variation_mean_is_spike_length() {
    let fx = fixtures::example11();
    let spikes: Vec<usize> = (0..20).collect();
    let n = 10_000;
    let run = spiked_run(&fx.spec, 100, n, &spikes, 42);
    let xs: Vec<f64> = (0..n).map(|j| run.x1.get(100, j)[0]).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    assert!((mean - 0.2).abs() <= 0.01 + 3.0 / (n as f64).sqrt());
    // affine coefficients: no second-order term, and the expansion is exact
    assert!(run.x2.is_all_zero());
    let worst = run
        .xstar
        .as_slice()
        .iter()
        .fold(0.0f64, |a, x| a.max(x.abs()));
    let scale = run.x1.as_slice().iter().fold(1.0f64, |a, x| a.max(x.abs()));
    assert!(worst <= 1e-12 * scale, "remainder {worst} at scale {scale}");
}

#[test]
fn pure_drift_variation_is_the_integral_of_the_jump() {
    // b = 2 v: Delta b = 2 on the spike set, every derivative vanishes
    let fx = common::scalar_fixture(
        0.0,
        r#"monomials = [ { vars = "v", coeff = 2.0 } ]"#,
        "",
        "",
        "",
    );
    let spikes = [3usize, 4, 9];
    let run = spiked_run(&fx.spec, 10, 4, &spikes, 1);
    for m in 0..=10 {
        let covered = spikes.iter().filter(|&&s| s < m).count() as f64;
        for j in 0..4 {
            assert!((run.x1.get(m, j)[0] - 2.0 * covered * 0.1).abs() < 1e-14);
        }
    }
    assert!(run.x2.is_all_zero());
}

#[test]
fn quadratic_remainder_is_third_order() {
    // b = x^2 / 2 + v, sigma = 0: the flow is deterministic
    let fx = common::scalar_fixture(
        0.5,
        r#"monomials = [ { vars = "x^2", coeff = 0.5 }, { vars = "v", coeff = 1.0 } ]"#,
        "",
        "",
        "",
    );
    let steps = 400;
    let rem = |d: usize| {
        let spikes: Vec<usize> = (0..d).collect();
        let run = spiked_run(&fx.spec, steps, 2, &spikes, 1);
        run.xstar.get(steps, 0)[0].abs()
    };
    let (r1, r2, r3) = (rem(80), rem(40), rem(20));
    // halving d divides an O(d^3) remainder by about 8
    assert!(r1 / r2 > 6.0 && r2 / r3 > 6.0, "{r1} {r2} {r3}");
}

#[test]
fn second_variation_needs_a_matching_first_variation() {
    let fx = fixtures::example11();
    let grid = common::grid(10);
    let u = common::zero_control();
    let noise = Arc::new(NoiseField::generate(1, &grid, 5, 1));
    let ens = simulate_with_noise(&fx.spec, &u, &grid, noise).unwrap();
    let x1 = first_variation(&fx.spec, &ens, &u, &u, &CopyIndex::full()).unwrap();
    let short = mfsmp::paths::KnotArray::zeros(5, 5, 1);
    assert!(second_variation(&fx.spec, &ens, &u, &u, &short, &CopyIndex::full()).is_err());
    assert!(second_variation(&fx.spec, &ens, &u, &u, &x1, &CopyIndex::full()).is_ok());
}

#[test]
fn transition_is_identity_without_linear_terms() {
    let fx = fixtures::load("nonsingular").unwrap();
    let grid = common::grid(20);
    let u = common::zero_control();
    let ens = simulate_with_noise(
        &fx.spec,
        &u,
        &grid,
        Arc::new(NoiseField::generate(2, &grid, 8, 1)),
    )
    .unwrap();
    let tr = transition_matrix(&fx.spec, &ens, &u, &CopyIndex::full()).unwrap();
    assert!(tr.phi.as_slice().iter().all(|&x| x == 1.0));
    assert!(tr.psi.as_slice().iter().all(|&x| x == 1.0));
    assert_eq!(tr.defect, 0.0);
}

#[test]
fn deterministic_linear_transition_is_exponential() {
    let a = 0.7;
    let drift = format!(r#"monomials = [ {{ vars = "x", coeff = {a:?} }} ]"#);
    let fx = common::scalar_fixture(1.0, &drift, "", "", "");
    let steps = 1000;
    let grid = common::grid(steps);
    let u = common::zero_control();
    let ens = simulate_with_noise(
        &fx.spec,
        &u,
        &grid,
        Arc::new(NoiseField::generate(2, &grid, 2, 1)),
    )
    .unwrap();
    let tr = transition_matrix(&fx.spec, &ens, &u, &CopyIndex::full()).unwrap();
    for m in (0..=steps).step_by(100) {
        let t = grid.knot(m);
        assert!(
            (tr.phi.get(m, 0)[0] - (a * t).exp()).abs() <= 2.0 * a * a * grid.dt() * (a * t).exp()
        );
    }
}

#[test]
fn example11_transition_inverse_consistency() {
    let fx = fixtures::example11();
    let grid = common::grid(1000);
    let u = common::zero_control();
    let ens = simulate_with_noise(
        &fx.spec,
        &u,
        &grid,
        Arc::new(NoiseField::generate(42, &grid, 2000, 1)),
    )
    .unwrap();
    let tr = transition_matrix(&fx.spec, &ens, &u, &CopyIndex::full()).unwrap();
    assert!(tr.defect <= 5e-3, "defect {}", tr.defect);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn convergence_csv_round_trip(rows in prop::collection::vec((0.01..1.0f64, -1e3..1e3f64, 0.0..10.0f64), 1..20)) {
        let rows: Vec<OrderRow> = rows
            .into_iter()
            .map(|(d, estimate, stderr)| OrderRow {
                fixture: "fx".into(),
                quantity: "x1_sup_sq".into(),
                d,
                estimate,
                stderr,
            })
            .collect();
        let mut buf = Vec::new();
        write_convergence_csv(&rows, &mut buf).unwrap();
        prop_assert_eq!(read_convergence_csv(buf.as_slice()).unwrap(), rows);
    }
}
