use super::{moment_vector, EmpiricalMeasure};
use crate::error::{check_dim, Error, Result};
use crate::problem::MomentCoupledFunction;

/// Closed-form Lions derivatives of a moment-coupled function, frozen at a
/// point `(t, x, v)`. Every output stacks the components of `f`.
#[derive(Clone, Debug)]
pub struct LionsDerivativeBundle<'a> {
    f: &'a MomentCoupledFunction,
    t: f64,
    x: Vec<f64>,
    v: Vec<f64>,
}

/// Lions derivatives of `phi`, initially frozen at `t = 0`, `x = 0`, `v = 0`.
pub fn lions_bundle(phi: &MomentCoupledFunction) -> LionsDerivativeBundle<'_> {
    let lay = phi.layout();
    LionsDerivativeBundle {
        f: phi,
        t: 0.0,
        x: vec![0.0; lay.state],
        v: vec![0.0; lay.controls],
    }
}

impl<'a> LionsDerivativeBundle<'a> {
    pub fn at(mut self, t: f64, x: &[f64], v: &[f64]) -> Result<Self> {
        let lay = self.f.layout();
        check_dim("state", lay.state, x.len())?;
        check_dim("control", lay.controls, v.len())?;
        self.t = t;
        self.x = x.to_vec();
        self.v = v.to_vec();
        Ok(self)
    }

    fn jet(&self, mu: &EmpiricalMeasure) -> Result<crate::problem::FunctionJet> {
        check_dim("measure dimension", self.f.layout().state, mu.dim())?;
        let m = moment_vector(mu, self.f.basis())?;
        let jet = self.f.jet_at(self.t, &self.x, &m, &self.v);
        if jet.values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Lions derivative".into()));
        }
        Ok(jet)
    }

    /// `d_mu f(mu, y)`: `components x n`.
    pub fn d_mu(&self, mu: &EmpiricalMeasure, y: &[f64]) -> Result<Vec<f64>> {
        let jet = self.jet(mu)?;
        let basis = self.f.basis();
        let n = basis.dim();
        check_dim("copy point", n, y.len())?;
        let hy = basis.jet(y);
        let mut out = vec![0.0; self.f.components() * n];
        for c in 0..self.f.components() {
            for a in 0..basis.len() {
                let fa = jet.fm(c, a);
                for s in 0..n {
                    out[c * n + s] += fa * hy.grads[a * n + s];
                }
            }
        }
        Ok(out)
    }

    /// `d2_mu f(mu, x, y)`: `components x n x n`, entry `[r][s]` pairs
    /// `d_r h(x)` with `d_s h(y)`.
    pub fn d2_mu(&self, mu: &EmpiricalMeasure, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let jet = self.jet(mu)?;
        let basis = self.f.basis();
        let n = basis.dim();
        check_dim("copy point", n, x.len())?;
        check_dim("copy point", n, y.len())?;
        let hx = basis.jet(x);
        let hy = basis.jet(y);
        let k = basis.len();
        let mut out = vec![0.0; self.f.components() * n * n];
        for c in 0..self.f.components() {
            for a in 0..k {
                for b in 0..k {
                    let fab = jet.fmm(c, a, b);
                    for r in 0..n {
                        for s in 0..n {
                            out[(c * n + r) * n + s] +=
                                fab * hx.grads[a * n + r] * hy.grads[b * n + s];
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// `d_y d_mu f(mu, y)`: `components x n x n`.
    pub fn dy_dmu(&self, mu: &EmpiricalMeasure, y: &[f64]) -> Result<Vec<f64>> {
        let jet = self.jet(mu)?;
        let basis = self.f.basis();
        let n = basis.dim();
        check_dim("copy point", n, y.len())?;
        let hy = basis.jet(y);
        let mut out = vec![0.0; self.f.components() * n * n];
        for c in 0..self.f.components() {
            for a in 0..basis.len() {
                let fa = jet.fm(c, a);
                for rs in 0..n * n {
                    out[c * n * n + rs] += fa * hy.hess[a * n * n + rs];
                }
            }
        }
        Ok(out)
    }
}
