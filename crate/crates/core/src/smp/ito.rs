//! Monte Carlo check of the Itô formula along flows of measures.

use crate::copy::CopyTable;
use crate::error::{check_dim, invalid, Result};
use crate::forward::{ControlProcess, ParticlePathEnsemble};
use crate::linalg::mean_se;
use crate::linearize::CoefStep;
use crate::problem::{MomentCoupledFunction, ProblemSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItoResidual {
    pub knot: usize,
    pub time: f64,
    /// `E[Phi(X_s, mu_s)] - Phi(x0, mu_0)`
    pub increment: f64,
    /// Time integral of the drift of the formula.
    pub integral: f64,
    pub residual: f64,
    pub stderr: f64,
    /// Interaction terms of order `1/N` that the law-level formula omits.
    pub finite_particle_term: f64,
    pub dt: f64,
}

impl ItoResidual {
    /// `|residual| <= k stderr + allowance`.
    pub fn within(&self, k: f64, allowance: f64) -> bool {
        self.residual.abs() <= k * self.stderr + allowance + 1e-12
    }
}

/// Compares `E[Phi(X_s, mu_s)] - Phi(x0, delta_x0)` with the integrated
/// drift of the Itô formula for `Phi` along `ens`, up to knot `s`.
pub fn ito_residual(
    spec: &ProblemSpec,
    functional: &MomentCoupledFunction,
    ens: &ParticlePathEnsemble,
    u: &ControlProcess,
    s: usize,
) -> Result<ItoResidual> {
    let (n, d) = (spec.dims.state, spec.dims.noise);
    let lay = functional.layout();
    if functional.components() != 1 || lay.controls != 0 {
        return invalid("the functional must be scalar and free of the control");
    }
    check_dim("functional state dimension", n, lay.state)?;
    check_dim("ensemble state dimension", n, ens.dim())?;
    check_dim("control dimension", spec.dims.control, u.dim())?;
    let grid = ens.grid();
    if s > grid.steps() {
        return invalid(format!("knot {s} beyond the last knot {}", grid.steps()));
    }
    let np = ens.particles();
    let dt = grid.dt();
    let none = |_: usize| -> &[f64] { &[] };

    let start = CoefStep::new(functional, 0.0, ens.knot_states(0), &none);
    let end = CoefStep::new(functional, grid.knot(s), ens.knot_states(s), &none);
    let mut samples: Vec<f64> = (0..np)
        .map(|j| end.jets[j].value(0) - start.jets[j].value(0))
        .collect();
    let increment = mean_se(&samples).0;
    let mut integral = 0.0;
    let mut finite = 0.0;
    for r in 0..s {
        let t = grid.knot(r);
        let states = ens.knot_states(r);
        let phi = CoefStep::new(functional, t, states, &none);
        let mb = spec.drift.moments(states);
        let ms = spec.diffusion.moments(states);
        // b and sigma sigma^T per particle
        let coeffs: Vec<(Vec<f64>, Vec<f64>)> = (0..np)
            .into_par_iter()
            .map(|j| {
                let x = ens.state(r, j);
                let mut b = vec![0.0; n];
                let mut sg = vec![0.0; n * d];
                spec.drift.eval_at(t, x, &mb, u.value(r, j), &mut b);
                spec.diffusion.eval_at(t, x, &ms, u.value(r, j), &mut sg);
                let mut a = vec![0.0; n * n];
                for k in 0..n {
                    for l in 0..n {
                        a[k * n + l] = (0..d).map(|c| sg[k * d + c] * sg[l * d + c]).sum();
                    }
                }
                (b, a)
            })
            .collect();
        let k = phi.moments.len();
        let table = CopyTable::build(np, k + k * k, |l, row| {
            let bj = &phi.basis[l];
            let (b, a) = &coeffs[l];
            for q in 0..k {
                let g = &bj.grads[q * n..(q + 1) * n];
                let h = &bj.hess[q * n * n..(q + 1) * n * n];
                let mut v: f64 = (0..n).map(|i| g[i] * b[i]).sum();
                v += 0.5 * (0..n * n).map(|i| h[i] * a[i]).sum::<f64>();
                row[q] = v;
                for p in 0..k {
                    let gp = &bj.grads[p * n..(p + 1) * n];
                    let mut w = 0.0;
                    for i in 0..n {
                        for l2 in 0..n {
                            w += g[i] * a[i * n + l2] * gp[l2];
                        }
                    }
                    row[k + q * k + p] = w;
                }
            }
        });
        let mean = table.mean();
        let terms: Vec<(f64, f64)> = (0..np)
            .into_par_iter()
            .map(|j| {
                let jet = &phi.jets[j];
                let (b, a) = &coeffs[j];
                let mut v = 0.0;
                for i in 0..n {
                    v += jet.fx(0, i) * b[i];
                    for l in 0..n {
                        v += 0.5 * jet.fxx(0, i, l) * a[i * n + l];
                    }
                }
                let mut fin = 0.0;
                let g = &phi.basis[j].grads;
                for q in 0..k {
                    v += jet.fm(0, q) * mean[q];
                    for i in 0..n {
                        for l in 0..n {
                            fin += jet.fxm(0, i, q) * a[i * n + l] * g[q * n + l];
                        }
                    }
                    for p in 0..k {
                        fin += 0.5 * jet.fmm(0, q, p) * mean[k + q * k + p];
                    }
                }
                (v, fin / np as f64)
            })
            .collect();
        for (sample, (v, fin)) in samples.iter_mut().zip(&terms) {
            *sample -= v * dt;
            integral += v * dt / np as f64;
            finite += fin * dt / np as f64;
        }
    }
    let (residual, stderr) = mean_se(&samples);
    Ok(ItoResidual {
        knot: s,
        time: grid.knot(s),
        increment,
        integral,
        residual,
        stderr,
        finite_particle_term: finite,
        dt,
    })
}
