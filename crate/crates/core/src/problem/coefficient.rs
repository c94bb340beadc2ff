//! Moment-coupled coefficients `f(t, x, mu, v) = phi(t, x, m(mu), v)` with
//! `m(mu) = integral of h dmu` and exact first and second partials of `phi`.

use crate::error::{check_dim, invalid, Error, Result};
use crate::measure::{moment_vector, EmpiricalMeasure, MomentBasis};
use crate::poly::Polynomial;
use serde::{Deserialize, Serialize};

/// Largest total degree accepted for a coefficient body.
pub const MAX_BODY_DEGREE: u32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Drift,
    Diffusion,
    RunningCost,
    TerminalCost,
}

/// Variable ordering of a body: `[t, x_1..x_n, m_1..m_K, v_1..v_k]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VarLayout {
    pub state: usize,
    pub moments: usize,
    pub controls: usize,
}

impl VarLayout {
    pub fn new(state: usize, moments: usize, controls: usize) -> Self {
        VarLayout {
            state,
            moments,
            controls,
        }
    }

    pub fn nvars(&self) -> usize {
        1 + self.state + self.moments + self.controls
    }

    pub fn t(&self) -> usize {
        0
    }

    pub fn x(&self, r: usize) -> usize {
        1 + r
    }

    pub fn m(&self, a: usize) -> usize {
        1 + self.state + a
    }

    pub fn v(&self, c: usize) -> usize {
        1 + self.state + self.moments + c
    }

    /// Writes the packed argument vector into `out`.
    pub fn pack(&self, t: f64, x: &[f64], m: &[f64], v: &[f64], out: &mut [f64]) {
        out[0] = t;
        out[1..1 + self.state].copy_from_slice(&x[..self.state]);
        out[1 + self.state..1 + self.state + self.moments].copy_from_slice(&m[..self.moments]);
        out[1 + self.state + self.moments..self.nvars()].copy_from_slice(&v[..self.controls]);
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Component {
    body: Polynomial,
    grad: Vec<(usize, Polynomial)>,
    hess: Vec<(usize, usize, Polynomial)>,
}

impl Component {
    fn new(body: Polynomial) -> Self {
        let nv = body.nvars();
        let mut grad = Vec::new();
        let mut hess = Vec::new();
        for i in 0..nv {
            let gi = body.derivative(i);
            if gi.is_zero() {
                continue;
            }
            for j in i..nv {
                let hij = gi.derivative(j);
                if !hij.is_zero() {
                    hess.push((i, j, hij));
                }
            }
            grad.push((i, gi));
        }
        Component { body, grad, hess }
    }
}

/// Value, gradient and Hessian of every component with respect to the packed
/// variables.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FunctionJet {
    pub layout: Option<VarLayout>,
    pub values: Vec<f64>,
    grad: Vec<f64>,
    hess: Vec<f64>,
    nvars: usize,
}

impl FunctionJet {
    fn reset(&mut self, layout: VarLayout, ncomp: usize) {
        let nv = layout.nvars();
        self.layout = Some(layout);
        self.nvars = nv;
        self.values.clear();
        self.values.resize(ncomp, 0.0);
        self.grad.clear();
        self.grad.resize(ncomp * nv, 0.0);
        self.hess.clear();
        self.hess.resize(ncomp * nv * nv, 0.0);
    }

    fn lay(&self) -> VarLayout {
        self.layout.expect("jet evaluated")
    }

    pub fn value(&self, c: usize) -> f64 {
        self.values[c]
    }

    pub fn d(&self, c: usize, i: usize) -> f64 {
        self.grad[c * self.nvars + i]
    }

    pub fn d2(&self, c: usize, i: usize, j: usize) -> f64 {
        self.hess[(c * self.nvars + i) * self.nvars + j]
    }

    pub fn fx(&self, c: usize, r: usize) -> f64 {
        self.d(c, self.lay().x(r))
    }

    pub fn fm(&self, c: usize, a: usize) -> f64 {
        self.d(c, self.lay().m(a))
    }

    pub fn fv(&self, c: usize, k: usize) -> f64 {
        self.d(c, self.lay().v(k))
    }

    pub fn fxx(&self, c: usize, r: usize, s: usize) -> f64 {
        let l = self.lay();
        self.d2(c, l.x(r), l.x(s))
    }

    pub fn fxm(&self, c: usize, r: usize, a: usize) -> f64 {
        let l = self.lay();
        self.d2(c, l.x(r), l.m(a))
    }

    pub fn fmm(&self, c: usize, a: usize, b: usize) -> f64 {
        let l = self.lay();
        self.d2(c, l.m(a), l.m(b))
    }
}

/// Symbolic coefficient in the moment-coupled family.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentCoupledFunction {
    role: Role,
    rows: usize,
    cols: usize,
    layout: VarLayout,
    basis: MomentBasis,
    comps: Vec<Component>,
}

impl MomentCoupledFunction {
    /// `bodies` are row-major components, each a polynomial over `layout`.
    pub fn new(
        role: Role,
        rows: usize,
        cols: usize,
        state_dim: usize,
        control_dim: usize,
        basis: MomentBasis,
        bodies: Vec<Polynomial>,
    ) -> Result<Self> {
        check_dim("basis dimension", state_dim, basis.dim())?;
        check_dim("component count", rows * cols, bodies.len())?;
        let layout = VarLayout::new(state_dim, basis.len(), control_dim);
        let mut comps = Vec::with_capacity(bodies.len());
        for body in bodies {
            check_dim("body variable count", layout.nvars(), body.nvars())?;
            if body.degree() > MAX_BODY_DEGREE {
                return invalid(format!(
                    "{role:?} body has degree {} > {MAX_BODY_DEGREE}",
                    body.degree()
                ));
            }
            if matches!(role, Role::Diffusion | Role::TerminalCost)
                && (0..control_dim).any(|c| body.depends_on(layout.v(c)))
            {
                return invalid(format!("{role:?} must not depend on the control"));
            }
            comps.push(Component::new(body));
        }
        Ok(MomentCoupledFunction {
            role,
            rows,
            cols,
            layout,
            basis,
            comps,
        })
    }

    pub fn zero(
        role: Role,
        rows: usize,
        cols: usize,
        state_dim: usize,
        control_dim: usize,
    ) -> Self {
        let nv = VarLayout::new(state_dim, 0, control_dim).nvars();
        Self::new(
            role,
            rows,
            cols,
            state_dim,
            control_dim,
            MomentBasis::empty(state_dim),
            vec![Polynomial::zero(nv); rows * cols],
        )
        .expect("zero coefficient is valid")
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn components(&self) -> usize {
        self.comps.len()
    }

    pub fn layout(&self) -> VarLayout {
        self.layout
    }

    pub fn basis(&self) -> &MomentBasis {
        &self.basis
    }

    pub fn body(&self, c: usize) -> &Polynomial {
        &self.comps[c].body
    }

    pub fn is_zero(&self) -> bool {
        self.comps.iter().all(|c| c.body.is_zero())
    }

    /// True when no component depends on the moment variables.
    pub fn is_local(&self) -> bool {
        (0..self.layout.moments).all(|a| {
            self.comps
                .iter()
                .all(|c| !c.body.depends_on(self.layout.m(a)))
        })
    }

    pub fn depends_on_var(&self, var: usize) -> bool {
        self.comps.iter().any(|c| c.body.depends_on(var))
    }

    /// Moments of the uniform empirical measure on row-major `states`.
    pub fn moments(&self, states: &[f64]) -> Vec<f64> {
        self.basis.uniform_moments(states)
    }

    pub fn eval_packed(&self, z: &[f64], out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.comps) {
            *o = c.body.eval(z);
        }
    }

    pub fn eval_at(&self, t: f64, x: &[f64], m: &[f64], v: &[f64], out: &mut [f64]) {
        let mut z = vec![0.0; self.layout.nvars()];
        self.layout.pack(t, x, m, v, &mut z);
        self.eval_packed(&z, out);
    }

    pub fn jet_packed(&self, z: &[f64], jet: &mut FunctionJet) {
        jet.reset(self.layout, self.comps.len());
        let nv = self.layout.nvars();
        for (ci, c) in self.comps.iter().enumerate() {
            jet.values[ci] = c.body.eval(z);
            for (i, g) in &c.grad {
                jet.grad[ci * nv + i] = g.eval(z);
            }
            for (i, j, h) in &c.hess {
                let val = h.eval(z);
                jet.hess[(ci * nv + i) * nv + j] = val;
                jet.hess[(ci * nv + j) * nv + i] = val;
            }
        }
    }

    pub fn jet_at(&self, t: f64, x: &[f64], m: &[f64], v: &[f64]) -> FunctionJet {
        let mut z = vec![0.0; self.layout.nvars()];
        self.layout.pack(t, x, m, v, &mut z);
        let mut jet = FunctionJet::default();
        self.jet_packed(&z, &mut jet);
        jet
    }

    fn check_point(&self, x: &[f64], mu: &EmpiricalMeasure, v: &[f64]) -> Result<()> {
        check_dim("state", self.layout.state, x.len())?;
        check_dim("measure dimension", self.layout.state, mu.dim())?;
        if v.len() < self.layout.controls {
            return Err(Error::DimensionMismatch {
                what: "control".into(),
                expected: self.layout.controls,
                got: v.len(),
            });
        }
        Ok(())
    }
}

/// Row-major value of a coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapedValue {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl ShapedValue {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}

/// `phi(t, x, m(mu), v)`.
pub fn eval_coefficient(
    f: &MomentCoupledFunction,
    t: f64,
    x: &[f64],
    mu: &EmpiricalMeasure,
    v: &[f64],
) -> Result<ShapedValue> {
    f.check_point(x, mu, v)?;
    let m = moment_vector(mu, f.basis())?;
    let mut data = vec![0.0; f.components()];
    f.eval_at(t, x, &m, v, &mut data);
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(format!("{:?} coefficient", f.role())));
    }
    Ok(ShapedValue {
        rows: f.rows,
        cols: f.cols,
        data,
    })
}

/// Spatial and Lions derivatives of one scalar component, `n = state dim`.
/// Matrices are row-major `n x n`; `f_xmu[r][s] = d/dx_r (d_mu f(y))_s`.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeBundle {
    pub value: f64,
    pub f_x: Vec<f64>,
    pub f_v: Vec<f64>,
    pub f_mu: Vec<f64>,
    pub f_xx: Vec<f64>,
    pub f_xmu: Vec<f64>,
    pub f_ymu: Vec<f64>,
    pub f_mumu: Vec<f64>,
}

/// Derivatives of every component of `f` at `(t, x, mu, v)` with copy points
/// `y` (tilde) and `ybar` (bar).
pub fn eval_derivatives(
    f: &MomentCoupledFunction,
    t: f64,
    x: &[f64],
    mu: &EmpiricalMeasure,
    v: &[f64],
    y: &[f64],
    ybar: &[f64],
) -> Result<Vec<DerivativeBundle>> {
    f.check_point(x, mu, v)?;
    let n = f.layout.state;
    check_dim("copy point", n, y.len())?;
    check_dim("second copy point", n, ybar.len())?;
    let m = moment_vector(mu, f.basis())?;
    let jet = f.jet_at(t, x, &m, v);
    let hy = f.basis.jet(y);
    let hb = f.basis.jet(ybar);
    let kk = f.layout.moments;
    let mut out = Vec::with_capacity(f.components());
    for c in 0..f.components() {
        let mut b = DerivativeBundle {
            value: jet.value(c),
            f_x: (0..n).map(|r| jet.fx(c, r)).collect(),
            f_v: (0..f.layout.controls).map(|k| jet.fv(c, k)).collect(),
            f_mu: vec![0.0; n],
            f_xx: vec![0.0; n * n],
            f_xmu: vec![0.0; n * n],
            f_ymu: vec![0.0; n * n],
            f_mumu: vec![0.0; n * n],
        };
        for r in 0..n {
            for s in 0..n {
                b.f_xx[r * n + s] = jet.fxx(c, r, s);
            }
        }
        for a in 0..kk {
            let fa = jet.fm(c, a);
            for s in 0..n {
                b.f_mu[s] += fa * hy.grads[a * n + s];
                for r in 0..n {
                    b.f_xmu[r * n + s] += jet.fxm(c, r, a) * hy.grads[a * n + s];
                    b.f_ymu[r * n + s] += fa * hy.hess[(a * n + r) * n + s];
                }
            }
            for bb in 0..kk {
                let fab = jet.fmm(c, a, bb);
                if fab == 0.0 {
                    continue;
                }
                for r in 0..n {
                    for s in 0..n {
                        b.f_mumu[r * n + s] += fab * hy.grads[a * n + r] * hb.grads[bb * n + s];
                    }
                }
            }
        }
        let all = [&b.f_x, &b.f_mu, &b.f_xx, &b.f_xmu, &b.f_ymu, &b.f_mumu];
        if !b.value.is_finite() || all.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite(format!("{:?} derivatives", f.role())));
        }
        out.push(b);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::empirical_from_samples;
    use crate::poly::Monomial;

    fn xm_product() -> MomentCoupledFunction {
        // phi(x, m) = x * m, h(y) = y
        let basis = MomentBasis::coordinates(1, &[0]).unwrap();
        let lay = VarLayout::new(1, 1, 1);
        let body = Polynomial::from_terms(
            lay.nvars(),
            vec![Monomial::new(1.0, vec![(lay.x(0), 1), (lay.m(0), 1)])],
        )
        .unwrap();
        MomentCoupledFunction::new(Role::Drift, 1, 1, 1, 1, basis, vec![body]).unwrap()
    }

    #[test]
    fn product_derivatives() {
        let f = xm_product();
        let mu = empirical_from_samples(&[vec![1.0], vec![3.0]], None).unwrap();
        let d = &eval_derivatives(&f, 0.0, &[5.0], &mu, &[0.0], &[7.0], &[1.0]).unwrap()[0];
        assert_eq!(d.value, 10.0);
        assert_eq!(d.f_x, vec![2.0]);
        assert_eq!(d.f_mu, vec![5.0]);
        assert_eq!(d.f_xmu, vec![1.0]);
        assert_eq!(d.f_ymu, vec![0.0]);
        assert_eq!(d.f_mumu, vec![0.0]);
    }

    #[test]
    fn diffusion_rejects_control_dependence() {
        let lay = VarLayout::new(1, 0, 1);
        let body = Polynomial::var(lay.nvars(), lay.v(0));
        let r = MomentCoupledFunction::new(
            Role::Diffusion,
            1,
            1,
            1,
            1,
            MomentBasis::empty(1),
            vec![body],
        );
        assert!(r.is_err());
    }

    #[test]
    fn rejects_high_degree() {
        let lay = VarLayout::new(1, 0, 0);
        let body =
            Polynomial::from_terms(lay.nvars(), vec![Monomial::new(1.0, vec![(lay.x(0), 5)])])
                .unwrap();
        assert!(MomentCoupledFunction::new(
            Role::RunningCost,
            1,
            1,
            1,
            0,
            MomentBasis::empty(1),
            vec![body]
        )
        .is_err());
    }

    #[test]
    fn zero_is_zero_everywhere() {
        let f = MomentCoupledFunction::zero(Role::Drift, 2, 1, 2, 1);
        let mu = empirical_from_samples(&[vec![1.0, 2.0]], None).unwrap();
        let v = eval_coefficient(&f, 0.3, &[4.0, 5.0], &mu, &[1.0]).unwrap();
        assert_eq!(v.data, vec![0.0, 0.0]);
    }
}
