//! Polynomial ridge regression for conditional expectations.

use crate::error::{invalid, Error, Result};
use crate::poly::{Monomial, Polynomial};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

/// Relative eigenvalue level below which the Gram matrix is rank deficient.
const RANK_TOLERANCE: f64 = 1e-12;

/// Polynomial features of the state up to `degree`, constant included.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionBasis {
    pub degree: u32,
    /// Ridge penalty on the standardized non-constant features.
    pub ridge: f64,
}

impl Default for RegressionBasis {
    fn default() -> Self {
        RegressionBasis {
            degree: 2,
            ridge: 0.0,
        }
    }
}

impl RegressionBasis {
    pub fn new(degree: u32, ridge: f64) -> Result<Self> {
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return invalid("ridge penalty must be a nonnegative finite number");
        }
        Ok(RegressionBasis { degree, ridge })
    }

    /// Exponent lists of every monomial of degree at most `degree` in the
    /// given variables, constant first, then by degree.
    pub fn monomials(&self, vars: &[usize]) -> Vec<Vec<(usize, u32)>> {
        let mut out = vec![Vec::new()];
        let mut frontier: Vec<Vec<(usize, u32)>> = vec![Vec::new()];
        for _ in 0..self.degree {
            let mut next = Vec::new();
            for f in &frontier {
                let start = f
                    .last()
                    .map_or(0, |&(v, _)| vars.iter().position(|&x| x == v).unwrap());
                for &v in &vars[start..] {
                    let mut g = f.clone();
                    match g.last_mut() {
                        Some(last) if last.0 == v => last.1 += 1,
                        _ => g.push((v, 1)),
                    }
                    next.push(g);
                }
            }
            out.extend(next.iter().cloned());
            frontier = next;
        }
        out
    }

    pub fn feature_count(&self, dim: usize) -> usize {
        self.monomials(&(0..dim).collect::<Vec<_>>()).len()
    }
}

/// Fitted conditional expectation of `r` targets.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionFit {
    /// Raw monomials of the state, in [`RegressionBasis::monomials`] order.
    pub monomials: Vec<Vec<(usize, u32)>>,
    /// `monomials x r` coefficients in the raw monomial basis.
    pub coefficients: Vec<f64>,
    /// One polynomial in the state per target column.
    pub functions: Vec<Polynomial>,
    /// `N x r` fitted values at the regression states.
    pub fitted: Vec<f64>,
    /// Features actually used after dropping constant coordinates.
    pub features: usize,
    pub rank: usize,
}

impl RegressionFit {
    pub fn targets(&self) -> usize {
        self.functions.len()
    }

    pub fn predict(&self, x: &[f64], out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(&self.functions) {
            *o = f.eval(x);
        }
    }
}

/// Ridge least-squares fit of `targets` (`N x r`) on polynomial features of
/// `states` (`N x n`).
pub fn regress_conditional(
    targets: &[f64],
    r: usize,
    states: &[f64],
    n: usize,
    basis: &RegressionBasis,
) -> Result<RegressionFit> {
    regress_at_step(targets, r, states, n, basis, 0)
}

pub(crate) fn regress_at_step(
    targets: &[f64],
    r: usize,
    states: &[f64],
    n: usize,
    basis: &RegressionBasis,
    step: usize,
) -> Result<RegressionFit> {
    if n == 0 || !states.len().is_multiple_of(n) {
        return invalid("state array is not a multiple of the state dimension");
    }
    let np = states.len() / n;
    if targets.len() != np * r {
        return Err(Error::DimensionMismatch {
            what: "regression targets".into(),
            expected: np * r,
            got: targets.len(),
        });
    }
    let full = basis.feature_count(n);
    if np < 10 * full {
        return invalid(format!(
            "regression needs at least {} samples for {full} features, got {np}",
            10 * full
        ));
    }

    let mut mean = vec![0.0; n];
    let mut scale = vec![0.0; n];
    for j in 0..np {
        for i in 0..n {
            mean[i] += states[j * n + i];
        }
    }
    mean.iter_mut().for_each(|m| *m /= np as f64);
    for j in 0..np {
        for i in 0..n {
            scale[i] += (states[j * n + i] - mean[i]).powi(2);
        }
    }
    scale.iter_mut().for_each(|s| *s = (*s / np as f64).sqrt());
    let active: Vec<usize> = (0..n)
        .filter(|&i| scale[i] > 1e-12 * (1.0 + mean[i].abs()))
        .collect();
    let monos = basis.monomials(&active);
    let nf = monos.len();

    let feature = |j: usize, f: &[(usize, u32)]| -> f64 {
        f.iter()
            .map(|&(v, p)| ((states[j * n + v] - mean[v]) / scale[v]).powi(p as i32))
            .product()
    };
    let mut fmat = vec![0.0; np * nf];
    for j in 0..np {
        for (k, f) in monos.iter().enumerate() {
            fmat[j * nf + k] = feature(j, f);
        }
    }
    let mut gram = DMatrix::<f64>::zeros(nf, nf);
    let mut rhs = DMatrix::<f64>::zeros(nf, r);
    for j in 0..np {
        let row = &fmat[j * nf..(j + 1) * nf];
        let y = &targets[j * r..(j + 1) * r];
        for a in 0..nf {
            for b in a..nf {
                gram[(a, b)] += row[a] * row[b];
            }
            for c in 0..r {
                rhs[(a, c)] += row[a] * y[c];
            }
        }
    }
    for a in 0..nf {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    gram /= np as f64;
    rhs /= np as f64;
    for a in 1..nf {
        gram[(a, a)] += basis.ridge;
    }

    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let rank = eig
        .eigenvalues
        .iter()
        .filter(|&&e| e > RANK_TOLERANCE * top)
        .count();
    if rank < nf {
        return Err(Error::RankDeficient {
            step,
            rank,
            features: nf,
        });
    }
    let mut inv = DMatrix::<f64>::zeros(nf, nf);
    for (k, &e) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        inv += (v * v.transpose()) / e;
    }
    let beta = inv * rhs;

    let mut fitted = vec![0.0; np * r];
    for j in 0..np {
        let row = &fmat[j * nf..(j + 1) * nf];
        for c in 0..r {
            fitted[j * r + c] = (0..nf).map(|a| row[a] * beta[(a, c)]).sum();
        }
    }

    // Standardized features expanded back into raw monomials.
    let standardized: Vec<Polynomial> = monos
        .iter()
        .map(|f| {
            let mut p = Polynomial::constant(n, 1.0);
            for &(v, pow) in f {
                let z = Polynomial::from_terms(
                    n,
                    vec![
                        Monomial::new(1.0 / scale[v], vec![(v, 1)]),
                        Monomial::new(-mean[v] / scale[v], vec![]),
                    ],
                )
                .expect("in range");
                for _ in 0..pow {
                    p = p.mul(&z);
                }
            }
            p
        })
        .collect();
    let functions: Vec<Polynomial> = (0..r)
        .map(|c| {
            standardized
                .iter()
                .enumerate()
                .fold(Polynomial::zero(n), |acc, (a, p)| {
                    acc.add(&p.scale(beta[(a, c)]))
                })
        })
        .collect();
    let raw = basis.monomials(&(0..n).collect::<Vec<_>>());
    let mut coefficients = vec![0.0; raw.len() * r];
    for (k, f) in raw.iter().enumerate() {
        for (c, func) in functions.iter().enumerate() {
            coefficients[k * r + c] = func.coefficient(f);
        }
    }
    Ok(RegressionFit {
        monomials: raw,
        coefficients,
        functions,
        fitted,
        features: nf,
        rank,
    })
}
