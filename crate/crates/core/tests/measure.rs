mod common;

use itertools::Itertools;
use mfsmp::measure::{
    empirical_from_samples, lions_bundle, moment_vector, wasserstein2, EmpiricalMeasure,
};
use mfsmp::problem::MomentCoupledFunction;
use proptest::prelude::*;

/// Minimum over all permutations of the mean squared matching cost.
fn brute_force_w2(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let n = a.len();
    (0..n)
        .permutations(n)
        .map(|perm| {
            perm.iter()
                .enumerate()
                .map(|(i, &j)| {
                    a[i].iter()
                        .zip(&b[j])
                        .map(|(x, y)| (x - y).powi(2))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / n as f64
        })
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

fn cloud(dim: usize, max_atoms: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    (1..=max_atoms).prop_flat_map(move |n| {
        let pts = prop::collection::vec(prop::collection::vec(-5.0..5.0f64, dim), n);
        (pts.clone(), pts)
    })
}

fn measure(pts: &[Vec<f64>]) -> EmpiricalMeasure {
    empirical_from_samples(pts, None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w2_matches_permutation_oracle_in_one_dimension((a, b) in cloud(1, 6)) {
        let w = wasserstein2(&measure(&a), &measure(&b)).unwrap();
        prop_assert!((w - brute_force_w2(&a, &b)).abs() <= 1e-10);
    }

    #[test]
    fn w2_matches_permutation_oracle_in_two_dimensions((a, b) in cloud(2, 6)) {
        let w = wasserstein2(&measure(&a), &measure(&b)).unwrap();
        prop_assert!((w - brute_force_w2(&a, &b)).abs() <= 1e-10);
    }

    #[test]
    fn w2_is_a_metric((a, b) in cloud(2, 5), shift in prop::collection::vec(-3.0..3.0f64, 2)) {
        let c: Vec<Vec<f64>> = a.iter().map(|p| vec![p[0] + shift[0], p[1] - shift[1]]).collect();
        let (ma, mb, mc) = (measure(&a), measure(&b), measure(&c));
        let ab = wasserstein2(&ma, &mb).unwrap();
        prop_assert!(wasserstein2(&ma, &ma).unwrap().abs() <= 1e-12);
        prop_assert!((ab - wasserstein2(&mb, &ma).unwrap()).abs() <= 1e-10);
        let ac = wasserstein2(&ma, &mc).unwrap();
        let bc = wasserstein2(&mb, &mc).unwrap();
        prop_assert!(ac <= ab + bc + 1e-10);
        // a rigid shift moves every atom by the same vector
        prop_assert!((ac - (shift[0].powi(2) + shift[1].powi(2)).sqrt()).abs() <= 1e-10);
    }
}

#[test]
fn w2_between_diracs_is_their_distance() {
    let w = wasserstein2(&measure(&[vec![0.0, 0.0]]), &measure(&[vec![3.0, 4.0]])).unwrap();
    assert!((w - 5.0).abs() < 1e-14);
}

/// `f(x, mu) = m1^2 + x m2 + m1 m2` with `m1 = E[y]`, `m2 = E[y^2]`.
fn functional() -> MomentCoupledFunction {
    let fx = common::scalar_fixture(
        0.0,
        "",
        "",
        "",
        r#"basis = [ { monomials = [ { vars = "y", coeff = 1.0 } ] },
                     { monomials = [ { vars = "y^2", coeff = 1.0 } ] } ]
monomials = [ { vars = "m1^2", coeff = 1.0 }, { vars = "x*m2", coeff = 1.0 },
              { vars = "m1*m2", coeff = 1.0 } ]"#,
    );
    fx.spec.terminal_cost
}

fn value(f: &MomentCoupledFunction, x: f64, pts: &[Vec<f64>]) -> f64 {
    let mu = measure(pts);
    let m = moment_vector(&mu, f.basis()).unwrap();
    let mut out = [0.0];
    f.eval_at(0.0, &[x], &m, &[], &mut out);
    out[0]
}

#[test]
fn lions_derivative_matches_closed_form() {
    let f = functional();
    let pts = vec![vec![-1.0], vec![0.5], vec![2.0]];
    let (m1, m2) = (0.5, (1.0 + 0.25 + 4.0) / 3.0);
    let x = 0.7;
    let y = 0.3;
    let d = lions_bundle(&f)
        .at(0.0, &[x], &[])
        .unwrap()
        .d_mu(&measure(&pts), &[y])
        .unwrap();
    // (2 m1 + m2) * 1 + (x + m1) * 2y
    let expected = (2.0 * m1 + m2) + (x + m1) * 2.0 * y;
    assert!((d[0] - expected).abs() < 1e-12);
    let dy = lions_bundle(&f)
        .at(0.0, &[x], &[])
        .unwrap()
        .dy_dmu(&measure(&pts), &[y])
        .unwrap();
    assert!((dy[0] - 2.0 * (x + m1)).abs() < 1e-12);
    let d2 = lions_bundle(&f)
        .at(0.0, &[x], &[])
        .unwrap()
        .d2_mu(&measure(&pts), &[y], &[-y])
        .unwrap();
    // f_{m1 m1} + f_{m1 m2} (2y' + 2y) with f_{m2 m2} = 0
    let expected2 = 2.0 + (2.0 * -y + 2.0 * y);
    assert!((d2[0] - expected2).abs() < 1e-12);
}

#[test]
fn lions_derivative_finite_difference_slope() {
    let f = functional();
    let pts = vec![vec![-1.2], vec![0.1], vec![0.4], vec![1.7]];
    let n = pts.len() as f64;
    let x = -0.4;
    let j = 2;
    let exact = lions_bundle(&f)
        .at(0.0, &[x], &[])
        .unwrap()
        .d_mu(&measure(&pts), &pts[j])
        .unwrap()[0];
    let base = value(&f, x, &pts);
    let eps = [1e-1, 5e-2, 2.5e-2, 1.25e-2, 6.25e-3];
    let errors: Vec<f64> = eps
        .iter()
        .map(|&e| {
            let mut moved = pts.clone();
            moved[j][0] += e;
            ((value(&f, x, &moved) - base) * n / e - exact).abs()
        })
        .collect();
    let lx: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let (slope, _) = mfsmp::linalg::linear_fit(&lx, &ly);
    assert!(slope >= 0.9, "finite-difference error slope {slope}");
}
