//! Per-step evaluation of coefficient jets along a simulated ensemble.

use crate::copy::{CopyIndex, CopyTable};
use crate::forward::{ControlProcess, ParticlePathEnsemble};
use crate::measure::{BasisJet, MomentBasis};
use crate::problem::{FunctionJet, MomentCoupledFunction, ProblemSpec};
use rayon::prelude::*;

pub(crate) fn jets<'c>(
    f: &MomentCoupledFunction,
    t: f64,
    states: &[f64],
    moments: &[f64],
    control: &(dyn Fn(usize) -> &'c [f64] + Sync),
) -> Vec<FunctionJet> {
    let lay = f.layout();
    let n = lay.state;
    let count = states.len() / n;
    (0..count)
        .into_par_iter()
        .map_init(
            || vec![0.0; lay.nvars()],
            |z, j| {
                lay.pack(t, &states[j * n..(j + 1) * n], moments, control(j), z);
                let mut jet = FunctionJet::default();
                f.jet_packed(z, &mut jet);
                jet
            },
        )
        .collect()
}

pub(crate) fn basis_jets(basis: &MomentBasis, states: &[f64]) -> Vec<BasisJet> {
    let n = basis.dim();
    (0..states.len() / n)
        .into_par_iter()
        .map(|j| basis.jet(&states[j * n..(j + 1) * n]))
        .collect()
}

/// Jets of a coefficient at one knot, with its basis evaluated on the cloud.
pub(crate) struct CoefStep {
    pub jets: Vec<FunctionJet>,
    pub basis: Vec<BasisJet>,
    pub moments: Vec<f64>,
}

impl CoefStep {
    pub fn new<'c>(
        f: &MomentCoupledFunction,
        t: f64,
        states: &[f64],
        control: &(dyn Fn(usize) -> &'c [f64] + Sync),
    ) -> Self {
        let moments = f.moments(states);
        CoefStep {
            jets: jets(f, t, states, &moments, control),
            basis: basis_jets(f.basis(), states),
            moments,
        }
    }

    /// Jets of the same coefficient at another control, same cloud.
    pub fn at_control<'c>(
        &self,
        f: &MomentCoupledFunction,
        t: f64,
        states: &[f64],
        control: &(dyn Fn(usize) -> &'c [f64] + Sync),
    ) -> Vec<FunctionJet> {
        jets(f, t, states, &self.moments, control)
    }

    /// Copy table of `[grad h_a(X^l) . z^l]_a`.
    pub fn directional_table(&self, z: &[f64], n: usize) -> CopyTable {
        let k = self.moments.len();
        CopyTable::build(self.basis.len(), k, |l, row| {
            let g = &self.basis[l].grads;
            let zl = &z[l * n..(l + 1) * n];
            for (a, r) in row.iter_mut().enumerate() {
                *r = (0..n).map(|s| g[a * n + s] * zl[s]).sum();
            }
        })
    }

    /// Copy table of `grad h_a(X^l)` flattened `K x n`.
    pub fn gradient_table(&self, n: usize) -> CopyTable {
        let k = self.moments.len();
        CopyTable::build(self.basis.len(), k * n, |l, row| {
            row.copy_from_slice(&self.basis[l].grads);
        })
    }
}

/// Linearization of the dynamics at knot `m` along `ens` under `u`, with the
/// drift also evaluated at `vhat` when the two differ at this step.
pub(crate) struct LinearStep {
    pub b: CoefStep,
    pub b_alt: Option<Vec<FunctionJet>>,
    pub s: CoefStep,
}

pub(crate) fn control_differs(
    u: &ControlProcess,
    v: &ControlProcess,
    m: usize,
    particles: usize,
) -> bool {
    if std::ptr::eq(u, v) {
        return false;
    }
    (0..particles).any(|j| u.value(m, j) != v.value(m, j))
}

impl LinearStep {
    pub fn new(
        spec: &ProblemSpec,
        ens: &ParticlePathEnsemble,
        u: &ControlProcess,
        vhat: Option<&ControlProcess>,
        m: usize,
    ) -> Self {
        let t = ens.grid().knot(m);
        let states = ens.knot_states(m);
        let uc = |j: usize| u.value(m, j);
        let b = CoefStep::new(&spec.drift, t, states, &uc);
        let b_alt = vhat
            .filter(|v| control_differs(u, v, m, ens.particles()))
            .map(|v| {
                let vc = |j: usize| v.value(m, j);
                b.at_control(&spec.drift, t, states, &vc)
            });
        let s = CoefStep::new(&spec.diffusion, t, states, &uc);
        LinearStep { b, b_alt, s }
    }
}

/// Per-particle `A = b_x + E~[b_mu]` (`n x n`) and `C_c = sigma_x + E~[sigma_mu]`
/// (`d` blocks of `n x n`).
pub(crate) fn mean_field_jacobians(
    step: &LinearStep,
    copies: &CopyIndex,
    n: usize,
    d: usize,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let gb = step.b.gradient_table(n);
    let gs = step.s.gradient_table(n);
    let kb = step.b.moments.len();
    let ks = step.s.moments.len();
    (0..step.b.jets.len())
        .into_par_iter()
        .map(|j| {
            let jb = &step.b.jets[j];
            let js = &step.s.jets[j];
            let eb = gb.tilde(copies, j);
            let es = gs.tilde(copies, j);
            let mut a = vec![0.0; n * n];
            for i in 0..n {
                for r in 0..n {
                    let mut v = jb.fx(i, r);
                    for q in 0..kb {
                        v += jb.fm(i, q) * eb[q * n + r];
                    }
                    a[i * n + r] = v;
                }
            }
            let mut c = vec![0.0; d * n * n];
            for cc in 0..d {
                for i in 0..n {
                    let comp = i * d + cc;
                    for r in 0..n {
                        let mut v = js.fx(comp, r);
                        for q in 0..ks {
                            v += js.fm(comp, q) * es[q * n + r];
                        }
                        c[(cc * n + i) * n + r] = v;
                    }
                }
            }
            (a, c)
        })
        .collect()
}
