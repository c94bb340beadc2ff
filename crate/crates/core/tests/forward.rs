mod common;

use mfsmp::fixtures;
use mfsmp::forward::{
    moment_bound_check, read_paths_csv, simulate, simulate_with_noise, write_paths_csv,
    ControlProcess, NoiseField,
};
use mfsmp::Error;
use proptest::prelude::*;
use std::sync::Arc;

#[test]
fn example11_paths_stay_at_one() {
    let fx = fixtures::example11();
    let ens = simulate(
        &fx.spec,
        &common::zero_control(),
        &common::grid(100),
        1000,
        42,
    )
    .unwrap();
    assert!(ens.paths().iter().all(|&x| x == 1.0));
}

#[test]
fn zero_coefficients_keep_the_initial_state() {
    let fx = fixtures::load("zero").unwrap();
    let ens = simulate(&fx.spec, &common::zero_control(), &common::grid(50), 64, 7).unwrap();
    assert!(ens.paths().iter().all(|&x| x == fx.spec.x0[0]));
}

#[test]
fn unit_drift_moves_by_the_horizon() {
    let fx = common::scalar_fixture(
        0.0,
        r#"monomials = [ { vars = "", coeff = 1.0 } ]"#,
        "",
        "",
        "",
    );
    let ens = simulate(&fx.spec, &common::zero_control(), &common::grid(100), 16, 3).unwrap();
    for j in 0..16 {
        assert!((ens.state(100, j)[0] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn brownian_law_has_the_right_moments() {
    let fx = common::scalar_fixture(
        2.0,
        "",
        r#"monomials = [ { vars = "", coeff = 1.0 } ]"#,
        "",
        "",
    );
    let n = 20_000;
    let ens = simulate(&fx.spec, &common::zero_control(), &common::grid(20), n, 11).unwrap();
    let xs: Vec<f64> = (0..n).map(|j| ens.state(20, j)[0]).collect();
    let (mean, se) = mfsmp::linalg::mean_se(&xs);
    assert!((mean - 2.0).abs() <= 4.0 * se);
    let var: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    let (v, vse) = mfsmp::linalg::mean_se(&var);
    assert!((v - 1.0).abs() <= 4.0 * vse);
}

#[test]
fn explicit_euler_blow_up_is_reported() {
    let fx = fixtures::load("cubic_blowup").unwrap();
    let err = simulate(&fx.spec, &common::zero_control(), &common::grid(100), 4, 1).unwrap_err();
    assert!(matches!(err, Error::BlowUp { .. }), "{err}");
}

#[test]
fn moment_ratio_for_constant_paths() {
    let fx = fixtures::example11();
    let u = common::zero_control();
    let ens = simulate(&fx.spec, &u, &common::grid(100), 100, 42).unwrap();
    let report = moment_bound_check(&ens, &u).unwrap();
    assert!((report.ratio - 0.5).abs() < 1e-12);
}

#[test]
fn same_seed_gives_identical_paths() {
    let fx = fixtures::load("gbm").unwrap();
    let u = ControlProcess::constant(vec![1.0]);
    let a = simulate(&fx.spec, &u, &common::grid(40), 200, 9).unwrap();
    let b = simulate(&fx.spec, &u, &common::grid(40), 200, 9).unwrap();
    assert_eq!(a.paths(), b.paths());
    let c = simulate(&fx.spec, &u, &common::grid(40), 200, 10).unwrap();
    assert_ne!(a.paths(), c.paths());
}

#[test]
fn paths_do_not_depend_on_thread_count() {
    let fx = fixtures::example11();
    let v = ControlProcess::constant(vec![1.0]);
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| simulate(&fx.spec, &v, &common::grid(30), 500, 5).unwrap())
    };
    assert_eq!(run(1).paths(), run(3).paths());
}

#[test]
fn paths_csv_round_trip() {
    let fx = fixtures::load("gbm").unwrap();
    let ens = simulate(&fx.spec, &common::zero_control(), &common::grid(10), 5, 2).unwrap();
    let mut buf = Vec::new();
    write_paths_csv(&ens, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("step,time,particle,coord,value\n"));
    assert!(!text.contains('\r'));
    let rows = read_paths_csv(buf.as_slice()).unwrap();
    assert_eq!(rows.len(), 11 * 5);
    for r in &rows {
        assert_eq!(r.value, ens.state(r.step, r.particle)[r.coord]);
        assert_eq!(r.time, ens.grid().knot(r.step));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Relabelling the particles' noise relabels the paths of an
    /// exchangeable system.
    #[test]
    fn particle_permutation_symmetry(perm in Just((0..12usize).collect::<Vec<_>>()).prop_shuffle(), seed in 0u64..1000) {
        let fx = fixtures::example11();
        let grid = common::grid(20);
        let v = ControlProcess::constant(vec![1.0]);
        let noise = Arc::new(NoiseField::generate(seed, &grid, 12, 1));
        let a = simulate_with_noise(&fx.spec, &v, &grid, noise.clone()).unwrap();
        let b = simulate_with_noise(&fx.spec, &v, &grid, Arc::new(noise.permuted(&perm).unwrap())).unwrap();
        for m in 0..=20 {
            for (j, &p) in perm.iter().enumerate() {
                prop_assert!((b.state(m, j)[0] - a.state(m, p)[0]).abs() <= 1e-12);
            }
        }
    }
}
