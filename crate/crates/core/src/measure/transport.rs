use super::EmpiricalMeasure;
use crate::error::{check_dim, invalid, Result};
use crate::linalg::norm_sq;

/// Largest atom count accepted by the exact assignment solver for `dim > 1`.
pub const MAX_ASSIGNMENT_ATOMS: usize = 64;

/// 2-Wasserstein distance between two empirical measures.
///
/// One-dimensional measures use the quantile coupling (any atom counts and
/// weights). Higher dimensions require equal-count uniform clouds and are
/// solved exactly as an assignment problem.
pub fn wasserstein2(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    check_dim("measure dimension", mu.dim(), nu.dim())?;
    if mu.dim() == 1 {
        return Ok(quantile_w2(mu, nu));
    }
    if mu.len() != nu.len() {
        return invalid("dim > 1 transport requires equal atom counts");
    }
    if !mu.is_uniform() || !nu.is_uniform() {
        return invalid("dim > 1 transport requires uniform weights");
    }
    if mu.len() > MAX_ASSIGNMENT_ATOMS {
        return invalid(format!(
            "dim > 1 transport limited to {MAX_ASSIGNMENT_ATOMS} atoms"
        ));
    }
    let n = mu.len();
    let mut cost = vec![0.0; n * n];
    let mut diff = vec![0.0; mu.dim()];
    for i in 0..n {
        for j in 0..n {
            for (d, (a, b)) in diff.iter_mut().zip(mu.sample(i).iter().zip(nu.sample(j))) {
                *d = a - b;
            }
            cost[i * n + j] = norm_sq(&diff);
        }
    }
    let assignment = hungarian(&cost, n);
    let total: f64 = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    Ok((total / n as f64).max(0.0).sqrt())
}

fn sorted_atoms(m: &EmpiricalMeasure) -> Vec<(f64, f64)> {
    let mut atoms: Vec<(f64, f64)> = (0..m.len())
        .map(|j| (m.sample(j)[0], m.weight(j)))
        .collect();
    // stable: equal values keep sample order
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    atoms
}

fn quantile_w2(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> f64 {
    let a = sorted_atoms(mu);
    let b = sorted_atoms(nu);
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut total = 0.0;
    while i < a.len() && j < b.len() {
        let mass = ra.min(rb);
        total += mass * (a[i].0 - b[j].0).powi(2);
        ra -= mass;
        rb -= mass;
        if ra <= 1e-15 {
            i += 1;
            if i < a.len() {
                ra = a[i].1;
            }
        }
        if rb <= 1e-15 {
            j += 1;
            if j < b.len() {
                rb = b[j].1;
            }
        }
    }
    total.max(0.0).sqrt()
}

/// Minimum-cost perfect matching on a square cost matrix; returns the
/// column assigned to each row.
fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    // potentials formulation, 1-based with a virtual column 0
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::empirical_from_samples;

    fn line(xs: &[f64]) -> EmpiricalMeasure {
        let s: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        empirical_from_samples(&s, None).unwrap()
    }

    #[test]
    fn identical_measures_are_at_distance_zero() {
        let m = line(&[0.5, -1.0, 2.0]);
        assert_eq!(wasserstein2(&m, &m).unwrap(), 0.0);
    }

    #[test]
    fn dirac_to_dirac() {
        assert_eq!(wasserstein2(&line(&[0.0]), &line(&[3.0])).unwrap(), 3.0);
    }

    #[test]
    fn unequal_weights_on_the_line() {
        // half the mass of delta_0 moves to 1, half to -1: W2^2 = 1
        let a = line(&[0.0]);
        let b = line(&[-1.0, 1.0]);
        assert!((wasserstein2(&a, &b).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn assignment_in_two_dimensions() {
        let a = empirical_from_samples(&[vec![0.0, 0.0], vec![1.0, 0.0]], None).unwrap();
        let b = empirical_from_samples(&[vec![1.0, 1.0], vec![0.0, 1.0]], None).unwrap();
        assert!((wasserstein2(&a, &b).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_unequal_counts_in_higher_dimension() {
        let a = empirical_from_samples(&[vec![0.0, 0.0]], None).unwrap();
        let b = empirical_from_samples(&[vec![1.0, 1.0], vec![0.0, 1.0]], None).unwrap();
        assert!(wasserstein2(&a, &b).is_err());
        assert!(wasserstein2(&a, &line(&[0.0])).is_err());
    }
}
