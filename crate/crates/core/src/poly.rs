//! Sparse multivariate polynomials with exact symbolic derivatives.

use crate::error::{invalid, Result};
use serde::{Deserialize, Serialize};

/// A single term `coeff * prod_i vars[i]^pow[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    /// `(variable index, power)` pairs, sorted by index, powers >= 1.
    pub factors: Vec<(usize, u32)>,
}

impl Monomial {
    pub fn new(coeff: f64, mut factors: Vec<(usize, u32)>) -> Self {
        factors.retain(|&(_, p)| p > 0);
        factors.sort_by_key(|&(v, _)| v);
        let mut merged: Vec<(usize, u32)> = Vec::with_capacity(factors.len());
        for (v, p) in factors {
            match merged.last_mut() {
                Some(last) if last.0 == v => last.1 += p,
                _ => merged.push((v, p)),
            }
        }
        Monomial {
            coeff,
            factors: merged,
        }
    }

    pub fn degree(&self) -> u32 {
        self.factors.iter().map(|&(_, p)| p).sum()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let mut acc = self.coeff;
        for &(v, p) in &self.factors {
            acc *= x[v].powi(p as i32);
        }
        acc
    }

    fn derivative(&self, var: usize) -> Option<Monomial> {
        let pos = self.factors.iter().position(|&(v, _)| v == var)?;
        let p = self.factors[pos].1;
        let mut factors = self.factors.clone();
        if p == 1 {
            factors.remove(pos);
        } else {
            factors[pos].1 = p - 1;
        }
        Some(Monomial {
            coeff: self.coeff * p as f64,
            factors,
        })
    }
}

/// Polynomial in a fixed number of variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    nvars: usize,
    terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial {
            nvars,
            terms: Vec::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        Self::from_terms(nvars, vec![Monomial::new(c, vec![])]).expect("constant is valid")
    }

    /// Variable `var` to the first power.
    pub fn var(nvars: usize, var: usize) -> Self {
        Self::from_terms(nvars, vec![Monomial::new(1.0, vec![(var, 1)])]).expect("index checked")
    }

    /// Builds a polynomial, merging equal monomials and dropping zero terms.
    pub fn from_terms(nvars: usize, terms: Vec<Monomial>) -> Result<Self> {
        let mut out: Vec<Monomial> = Vec::new();
        for t in terms {
            if !t.coeff.is_finite() {
                return invalid("polynomial coefficient is not finite");
            }
            let t = Monomial::new(t.coeff, t.factors);
            if let Some(&(v, _)) = t.factors.iter().find(|&&(v, _)| v >= nvars) {
                return invalid(format!(
                    "variable index {v} out of range for {nvars} variables"
                ));
            }
            match out.iter_mut().find(|m| m.factors == t.factors) {
                Some(m) => m.coeff += t.coeff,
                None => out.push(t),
            }
        }
        out.retain(|m| m.coeff != 0.0);
        Ok(Polynomial { nvars, terms: out })
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Degree counting only the listed variables.
    pub fn degree_in(&self, vars: &[usize]) -> u32 {
        self.terms
            .iter()
            .map(|m| {
                m.factors
                    .iter()
                    .filter(|(v, _)| vars.contains(v))
                    .map(|&(_, p)| p)
                    .sum()
            })
            .max()
            .unwrap_or(0)
    }

    pub fn depends_on(&self, var: usize) -> bool {
        self.terms
            .iter()
            .any(|m| m.factors.iter().any(|&(v, _)| v == var))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert!(x.len() >= self.nvars);
        self.terms.iter().map(|m| m.eval(x)).sum()
    }

    pub fn derivative(&self, var: usize) -> Polynomial {
        let terms = self
            .terms
            .iter()
            .filter_map(|m| m.derivative(var))
            .collect();
        Polynomial::from_terms(self.nvars, terms).expect("derivative stays in range")
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Polynomial::from_terms(self.nvars.max(other.nvars), terms).expect("same layout")
    }

    pub fn scale(&self, c: f64) -> Polynomial {
        let terms = self
            .terms
            .iter()
            .map(|m| Monomial::new(m.coeff * c, m.factors.clone()))
            .collect();
        Polynomial::from_terms(self.nvars, terms).expect("same layout")
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                let mut factors = a.factors.clone();
                factors.extend(b.factors.iter().copied());
                terms.push(Monomial::new(a.coeff * b.coeff, factors));
            }
        }
        Polynomial::from_terms(self.nvars.max(other.nvars), terms).expect("same layout")
    }

    /// Coefficient of the monomial with the given sorted factors.
    pub fn coefficient(&self, factors: &[(usize, u32)]) -> f64 {
        self.terms
            .iter()
            .find(|m| m.factors == factors)
            .map_or(0.0, |m| m.coeff)
    }

    /// Parses a product like `"x*m^2"` or `"x1*v2"`; empty string is the constant 1.
    pub fn parse_monomial(
        nvars: usize,
        spec: &str,
        coeff: f64,
        resolve: &dyn Fn(&str) -> Option<usize>,
    ) -> Result<Monomial> {
        let mut factors = Vec::new();
        let spec = spec.trim();
        if !spec.is_empty() && spec != "1" {
            for part in spec.split('*') {
                let part = part.trim();
                let (name, pow) = match part.split_once('^') {
                    Some((n, p)) => {
                        let p: u32 = p.trim().parse().map_err(|_| {
                            crate::Error::InvalidInput(format!("bad exponent in `{part}`"))
                        })?;
                        (n.trim(), p)
                    }
                    None => (part, 1),
                };
                let idx = resolve(name).ok_or_else(|| {
                    crate::Error::InvalidInput(format!("unknown variable `{name}` in `{spec}`"))
                })?;
                if idx >= nvars {
                    return invalid(format!("variable `{name}` out of range"));
                }
                factors.push((idx, pow));
            }
        }
        Ok(Monomial::new(coeff, factors))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(terms: Vec<(f64, Vec<(usize, u32)>)>) -> Polynomial {
        Polynomial::from_terms(
            3,
            terms
                .into_iter()
                .map(|(c, f)| Monomial::new(c, f))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn merges_like_terms_and_drops_zeros() {
        let q = p(vec![
            (1.0, vec![(0, 1)]),
            (-1.0, vec![(0, 1)]),
            (2.0, vec![]),
        ]);
        assert_eq!(q.terms().len(), 1);
        assert_eq!(q.eval(&[5.0, 0.0, 0.0]), 2.0);
    }

    #[test]
    fn derivative_of_product() {
        // 3 x0^2 x1 + x2
        let q = p(vec![(3.0, vec![(0, 2), (1, 1)]), (1.0, vec![(2, 1)])]);
        let d0 = q.derivative(0);
        assert_eq!(d0.eval(&[2.0, 5.0, 0.0]), 60.0);
        let d00 = d0.derivative(0);
        assert_eq!(d00.eval(&[2.0, 5.0, 0.0]), 30.0);
        assert!(q.derivative(2).derivative(2).is_zero());
        assert_eq!(q.degree(), 3);
        assert_eq!(q.degree_in(&[0]), 2);
    }

    #[test]
    fn parse_resolves_names() {
        let resolve = |s: &str| match s {
            "x" => Some(0),
            "m" => Some(1),
            "v" => Some(2),
            _ => None,
        };
        let m = Polynomial::parse_monomial(3, "x*m^2", 0.5, &resolve).unwrap();
        assert_eq!(m.factors, vec![(0, 1), (1, 2)]);
        let c = Polynomial::parse_monomial(3, "", 4.0, &resolve).unwrap();
        assert!(c.factors.is_empty());
        assert!(Polynomial::parse_monomial(3, "z", 1.0, &resolve).is_err());
        assert!(Polynomial::parse_monomial(3, "x^a", 1.0, &resolve).is_err());
    }

    #[test]
    fn rejects_out_of_range_variable() {
        assert!(Polynomial::from_terms(1, vec![Monomial::new(1.0, vec![(3, 1)])]).is_err());
    }
}
