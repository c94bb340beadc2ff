//! Empirical measures, the 2-Wasserstein metric and Lions derivatives of
//! moment-coupled functions.

mod lions;
mod transport;

pub use lions::{lions_bundle, LionsDerivativeBundle};
pub use transport::{wasserstein2, MAX_ASSIGNMENT_ATOMS};

use crate::error::{check_dim, invalid, Error, Result};
use crate::poly::Polynomial;
use serde::{Deserialize, Serialize};

/// Weighted particle cloud on `R^dim`, samples stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    dim: usize,
    samples: Vec<f64>,
    weights: Vec<f64>,
    uniform: bool,
}

impl EmpiricalMeasure {
    /// Builds a measure from flat row-major samples.
    pub fn from_flat(dim: usize, samples: Vec<f64>, weights: Option<Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return invalid("measure dimension must be positive");
        }
        if samples.is_empty() {
            return invalid("empty sample list");
        }
        if !samples.len().is_multiple_of(dim) {
            return invalid("sample buffer length is not a multiple of the dimension");
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("empirical measure samples".into()));
        }
        let n = samples.len() / dim;
        let (weights, uniform) = match weights {
            None => (vec![1.0 / n as f64; n], true),
            Some(w) => {
                check_dim("weight count", n, w.len())?;
                if w.iter().any(|&x| x < 0.0 || !x.is_finite()) {
                    return invalid("weights must be finite and nonnegative");
                }
                let total: f64 = w.iter().sum();
                if total <= 0.0 {
                    return invalid("all weights are zero");
                }
                let w: Vec<f64> = w.iter().map(|x| x / total).collect();
                let uniform = w.iter().all(|&x| x == w[0]);
                (w, uniform)
            }
        };
        Ok(EmpiricalMeasure {
            dim,
            samples,
            weights,
            uniform,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample(&self, j: usize) -> &[f64] {
        &self.samples[j * self.dim..(j + 1) * self.dim]
    }

    pub fn samples_flat(&self) -> &[f64] {
        &self.samples
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// `integral of f` against the measure.
    pub fn integrate(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        (0..self.len())
            .map(|j| self.weights[j] * f(self.sample(j)))
            .sum()
    }

    /// Pushes every atom through `map`, keeping the weights.
    pub fn map(&self, mut map: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Self> {
        let mut out = Vec::with_capacity(self.samples.len());
        for j in 0..self.len() {
            let y = map(self.sample(j));
            check_dim("mapped sample", self.dim, y.len())?;
            out.extend(y);
        }
        Self::from_flat(self.dim, out, Some(self.weights.clone()))
    }
}

/// Builds an empirical measure from a list of points; uniform weights when omitted.
pub fn empirical_from_samples(
    samples: &[Vec<f64>],
    weights: Option<&[f64]>,
) -> Result<EmpiricalMeasure> {
    let Some(first) = samples.first() else {
        return invalid("empty sample list");
    };
    let dim = first.len();
    let mut flat = Vec::with_capacity(dim * samples.len());
    for s in samples {
        check_dim("sample dimension", dim, s.len())?;
        flat.extend_from_slice(s);
    }
    EmpiricalMeasure::from_flat(dim, flat, weights.map(|w| w.to_vec()))
}

/// Moment functions `h_1..h_k`, each a polynomial of degree at most 2 in `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentBasis {
    dim: usize,
    funcs: Vec<Polynomial>,
    grads: Vec<Vec<Polynomial>>,
    hess: Vec<Vec<f64>>,
}

/// Values, gradients and Hessians of every basis function at one point.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BasisJet {
    pub values: Vec<f64>,
    /// `k x dim`
    pub grads: Vec<f64>,
    /// `k x dim x dim`
    pub hess: Vec<f64>,
}

impl MomentBasis {
    pub fn new(dim: usize, funcs: Vec<Polynomial>) -> Result<Self> {
        let mut grads = Vec::with_capacity(funcs.len());
        let mut hess = Vec::with_capacity(funcs.len());
        for h in &funcs {
            check_dim("moment basis variable count", dim, h.nvars())?;
            if h.degree() > 2 {
                return invalid(format!(
                    "moment basis function has degree {} > 2",
                    h.degree()
                ));
            }
            let g: Vec<Polynomial> = (0..dim).map(|r| h.derivative(r)).collect();
            // degree <= 2 makes the Hessian constant
            let zero = vec![0.0; dim];
            let mut hm = vec![0.0; dim * dim];
            for r in 0..dim {
                for s in 0..dim {
                    hm[r * dim + s] = g[r].derivative(s).eval(&zero);
                }
            }
            grads.push(g);
            hess.push(hm);
        }
        Ok(MomentBasis {
            dim,
            funcs,
            grads,
            hess,
        })
    }

    pub fn empty(dim: usize) -> Self {
        MomentBasis {
            dim,
            funcs: Vec::new(),
            grads: Vec::new(),
            hess: Vec::new(),
        }
    }

    /// `h_a(y) = y_coord` for each listed coordinate.
    pub fn coordinates(dim: usize, coords: &[usize]) -> Result<Self> {
        Self::new(
            dim,
            coords.iter().map(|&r| Polynomial::var(dim, r)).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.funcs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.funcs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn functions(&self) -> &[Polynomial] {
        &self.funcs
    }

    pub fn eval(&self, y: &[f64], out: &mut [f64]) {
        for (o, h) in out.iter_mut().zip(&self.funcs) {
            *o = h.eval(y);
        }
    }

    /// `[grad h_a(y) . z]_a`
    pub fn directional(&self, y: &[f64], z: &[f64], out: &mut [f64]) {
        for (a, o) in out.iter_mut().enumerate() {
            *o = (0..self.dim).map(|r| self.grads[a][r].eval(y) * z[r]).sum();
        }
    }

    /// `[z^T hess h_a w]_a`
    pub fn quadratic(&self, z: &[f64], w: &[f64], out: &mut [f64]) {
        let n = self.dim;
        for (a, o) in out.iter_mut().enumerate() {
            let h = &self.hess[a];
            let mut s = 0.0;
            for r in 0..n {
                for c in 0..n {
                    s += z[r] * h[r * n + c] * w[c];
                }
            }
            *o = s;
        }
    }

    pub fn jet(&self, y: &[f64]) -> BasisJet {
        let mut j = BasisJet::default();
        self.jet_into(y, &mut j);
        j
    }

    pub fn jet_into(&self, y: &[f64], jet: &mut BasisJet) {
        let k = self.len();
        let n = self.dim;
        jet.values.resize(k, 0.0);
        jet.grads.resize(k * n, 0.0);
        jet.hess.resize(k * n * n, 0.0);
        for a in 0..k {
            jet.values[a] = self.funcs[a].eval(y);
            for r in 0..n {
                jet.grads[a * n + r] = self.grads[a][r].eval(y);
            }
            jet.hess[a * n * n..(a + 1) * n * n].copy_from_slice(&self.hess[a]);
        }
    }

    /// Uniform average of the basis over `count` row-major states.
    pub fn uniform_moments(&self, states: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let count = states.len() / n;
        let mut acc = vec![0.0; self.len()];
        let mut tmp = vec![0.0; self.len()];
        for j in 0..count {
            self.eval(&states[j * n..(j + 1) * n], &mut tmp);
            for (a, t) in acc.iter_mut().zip(&tmp) {
                *a += t;
            }
        }
        for a in &mut acc {
            *a /= count as f64;
        }
        acc
    }
}

/// `m_i = sum_j w_j h_i(sample_j)`.
pub fn moment_vector(mu: &EmpiricalMeasure, basis: &MomentBasis) -> Result<Vec<f64>> {
    check_dim("moment basis dimension", mu.dim(), basis.dim())?;
    let mut acc = vec![0.0; basis.len()];
    let mut tmp = vec![0.0; basis.len()];
    for j in 0..mu.len() {
        basis.eval(mu.sample(j), &mut tmp);
        for (a, t) in acc.iter_mut().zip(&tmp) {
            *a += mu.weight(j) * t;
        }
    }
    if acc.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("moment vector".into()));
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::Monomial;

    fn square() -> Polynomial {
        Polynomial::from_terms(1, vec![Monomial::new(1.0, vec![(0, 2)])]).unwrap()
    }

    #[test]
    fn construction_examples() {
        let d = empirical_from_samples(&[vec![0.0]], None).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.weight(0), 1.0);
        let u = empirical_from_samples(&[vec![1.0], vec![1.0], vec![1.0]], None).unwrap();
        assert!(u.weights().iter().all(|&w| w == 1.0 / 3.0));
        let w = empirical_from_samples(&[vec![0.0], vec![2.0]], Some(&[3.0, 1.0])).unwrap();
        assert_eq!(w.weights(), &[0.75, 0.25]);
    }

    #[test]
    fn construction_errors() {
        assert!(empirical_from_samples(&[], None).is_err());
        assert!(empirical_from_samples(&[vec![0.0]], Some(&[-1.0])).is_err());
        assert!(empirical_from_samples(&[vec![0.0], vec![1.0]], Some(&[0.0, 0.0])).is_err());
        assert!(empirical_from_samples(&[vec![0.0], vec![1.0, 2.0]], None).is_err());
    }

    #[test]
    fn moment_examples() {
        let id = MomentBasis::coordinates(1, &[0]).unwrap();
        let d2 = empirical_from_samples(&[vec![2.0]], None).unwrap();
        assert_eq!(moment_vector(&d2, &id).unwrap(), vec![2.0]);

        let sq = MomentBasis::new(1, vec![square()]).unwrap();
        let u02 = empirical_from_samples(&[vec![0.0], vec![2.0]], None).unwrap();
        assert_eq!(moment_vector(&u02, &sq).unwrap(), vec![2.0]);

        let both = MomentBasis::new(1, vec![Polynomial::var(1, 0), square()]).unwrap();
        let u123 = empirical_from_samples(&[vec![1.0], vec![2.0], vec![3.0]], None).unwrap();
        let m = moment_vector(&u123, &both).unwrap();
        assert!((m[0] - 2.0).abs() < 1e-15);
        assert!((m[1] - 14.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn basis_rejects_cubic() {
        let cube = Polynomial::from_terms(1, vec![Monomial::new(1.0, vec![(0, 3)])]).unwrap();
        assert!(MomentBasis::new(1, vec![cube]).is_err());
    }

    #[test]
    fn jet_of_square() {
        let sq = MomentBasis::new(1, vec![square()]).unwrap();
        let j = sq.jet(&[3.0]);
        assert_eq!(j.values, vec![9.0]);
        assert_eq!(j.grads, vec![6.0]);
        assert_eq!(j.hess, vec![2.0]);
    }
}
