//! Backward regression Monte Carlo for the first- and second-order adjoints.

mod oracle;
mod regression;

pub use oracle::{constant_path_oracle, OracleCurve};
pub use regression::{regress_conditional, RegressionBasis, RegressionFit};

use crate::copy::{CopyIndex, CopyTable};
use crate::error::{check_dim, Error, Result};
use crate::forward::{ControlProcess, ParticlePathEnsemble, TimeGrid};
use crate::linalg::{asymmetry, mean_se, symmetrize};
use crate::linearize::CoefStep;
use crate::paths::KnotArray;
use crate::problem::ProblemSpec;
use rayon::prelude::*;
use regression::regress_at_step;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// How the `Q` terms of the second-order driver pair with `sigma_x`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QPairing {
    /// `C^T Q + Q C` with `C = sigma_x + E~[sigma_mu]`.
    #[default]
    Symmetric,
    /// `sigma_x^T Q + P sigma_x + Q E~[sigma_mu] + E~[sigma_mu]^T Q`, as
    /// the driver is sometimes written.
    Verbatim,
}

/// Regression diagnostics of one backward step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    /// Root mean square of `Y_{m+1} - E[Y_{m+1} | X_m]`.
    pub residual_rms: f64,
    /// Largest particle-mean residual component and its standard error.
    pub mean_residual: f64,
    pub mean_residual_se: f64,
    /// Root mean square of the regression targets.
    pub target_rms: f64,
    /// Largest `max|P - P^T|` before symmetrization (second order only).
    pub asymmetry: f64,
}

impl StepDiagnostics {
    /// Mean residual within `k` standard errors of zero, up to roundoff
    /// relative to the targets.
    pub fn martingale_ok(&self, k: f64) -> bool {
        self.mean_residual <= k * self.mean_residual_se + 1e-10 * (1.0 + self.target_rms)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FirstOrderAdjoint {
    /// `(M + 1) x N x n`
    pub p: KnotArray,
    /// `M x N x (n d)`, entry `i * d + c`
    pub q: KnotArray,
    pub diagnostics: Vec<StepDiagnostics>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SecondOrderAdjoint {
    /// `(M + 1) x N x (n n)`, row-major
    pub big_p: KnotArray,
    /// `M x N x (d n n)`, block `c` at `c * n * n`
    pub big_q: KnotArray,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Largest pre-symmetrization asymmetry over all steps.
    pub max_asymmetry: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdjointSolution {
    pub first: FirstOrderAdjoint,
    pub second: SecondOrderAdjoint,
}

/// Coefficient jets along the cloud at one knot under `u`.
pub(crate) struct Frame {
    pub b: CoefStep,
    pub s: CoefStep,
    pub h: CoefStep,
}

impl Frame {
    pub fn new<'c>(
        spec: &ProblemSpec,
        t: f64,
        states: &[f64],
        control: &(dyn Fn(usize) -> &'c [f64] + Sync),
    ) -> Self {
        Frame {
            b: CoefStep::new(&spec.drift, t, states, control),
            s: CoefStep::new(&spec.diffusion, t, states, control),
            h: CoefStep::new(&spec.running_cost, t, states, control),
        }
    }

    pub fn at_knot(
        spec: &ProblemSpec,
        ens: &ParticlePathEnsemble,
        u: &ControlProcess,
        m: usize,
    ) -> Self {
        let uc = |j: usize| u.value(m, j);
        Frame::new(spec, ens.grid().knot(m), ens.knot_states(m), &uc)
    }
}

pub(crate) fn terminal_step(spec: &ProblemSpec, t: f64, states: &[f64]) -> CoefStep {
    let none = |_: usize| -> &[f64] { &[] };
    CoefStep::new(&spec.terminal_cost, t, states, &none)
}

/// Copy table of `sum_c w_c(l) f_{c, m_a}(l)`.
fn weighted_moment_table(step: &CoefStep, w: &[f64], comps: usize) -> CopyTable {
    let k = step.moments.len();
    CopyTable::build(step.jets.len(), k, |l, row| {
        let jet = &step.jets[l];
        let wl = &w[l * comps..(l + 1) * comps];
        for (a, r) in row.iter_mut().enumerate() {
            *r = (0..comps).map(|c| wl[c] * jet.fm(c, a)).sum();
        }
    })
}

/// Adds `sum_c w_c f_{c,x} + E~[sum_c w~_c d_mu f~_c](X^j)` to `out` (`N x n`).
fn add_first_order_part(
    step: &CoefStep,
    w: &[f64],
    comps: usize,
    copies: &CopyIndex,
    n: usize,
    out: &mut [f64],
) {
    let table = weighted_moment_table(step, w, comps);
    let k = table.width();
    out.par_chunks_mut(n).enumerate().for_each(|(j, o)| {
        let jet = &step.jets[j];
        let wj = &w[j * comps..(j + 1) * comps];
        let t = table.tilde(copies, j);
        let g = &step.basis[j].grads;
        for r in 0..n {
            let mut v = 0.0;
            for c in 0..comps {
                v += wj[c] * jet.fx(c, r);
            }
            for a in 0..k {
                v += t[a] * g[a * n + r];
            }
            o[r] += v;
        }
    });
}

/// Adds the second-order Hamiltonian block
/// `H_xx + E~E-[H_mumu] + E~[H_ymu] + 2 E~[H_xmu]` of one coefficient.
fn add_second_order_part(
    step: &CoefStep,
    w: &[f64],
    comps: usize,
    copies: &CopyIndex,
    n: usize,
    out: &mut [f64],
) {
    let k = step.moments.len();
    let table = CopyTable::build(step.jets.len(), k + n * k + k * k, |l, row| {
        let jet = &step.jets[l];
        let wl = &w[l * comps..(l + 1) * comps];
        for c in 0..comps {
            for a in 0..k {
                row[a] += wl[c] * jet.fm(c, a);
                for r in 0..n {
                    row[k + r * k + a] += wl[c] * jet.fxm(c, r, a);
                }
                for b in 0..k {
                    row[k + n * k + a * k + b] += wl[c] * jet.fmm(c, a, b);
                }
            }
        }
    });
    out.par_chunks_mut(n * n).enumerate().for_each(|(j, o)| {
        let jet = &step.jets[j];
        let wj = &w[j * comps..(j + 1) * comps];
        let t = table.tilde(copies, j);
        let bj = &step.basis[j];
        let g = |a: usize, r: usize| bj.grads[a * n + r];
        for r in 0..n {
            for s in 0..n {
                let mut v = 0.0;
                for c in 0..comps {
                    v += wj[c] * jet.fxx(c, r, s);
                }
                for a in 0..k {
                    v += t[a] * bj.hess[(a * n + r) * n + s];
                    v += t[k + r * k + a] * g(a, s) + t[k + s * k + a] * g(a, r);
                    for b in 0..k {
                        v += t[k + n * k + a * k + b] * g(a, r) * g(b, s);
                    }
                }
                o[r * n + s] += v;
            }
        }
    });
}

/// Per-particle `f_x` and `E~[d_mu f~](X^j)` matrices (`comps x n`).
fn jacobian_pair(
    step: &CoefStep,
    comps: usize,
    copies: &CopyIndex,
    n: usize,
) -> (Vec<f64>, Vec<f64>) {
    let k = step.moments.len();
    let np = step.jets.len();
    let table = CopyTable::build(np, comps * k, |l, row| {
        let jet = &step.jets[l];
        for c in 0..comps {
            for a in 0..k {
                row[c * k + a] = jet.fm(c, a);
            }
        }
    });
    let mut local = vec![0.0; np * comps * n];
    let mut field = vec![0.0; np * comps * n];
    local
        .par_chunks_mut(comps * n)
        .zip(field.par_chunks_mut(comps * n))
        .enumerate()
        .for_each(|(j, (lo, fi))| {
            let jet = &step.jets[j];
            let t = table.tilde(copies, j);
            let g = &step.basis[j].grads;
            for c in 0..comps {
                for r in 0..n {
                    lo[c * n + r] = jet.fx(c, r);
                    fi[c * n + r] = (0..k).map(|a| t[c * k + a] * g[a * n + r]).sum();
                }
            }
        });
    (local, field)
}

pub(crate) fn first_order_terminal(phi: &CoefStep, copies: &CopyIndex, n: usize) -> Vec<f64> {
    let np = phi.jets.len();
    let mut out = vec![0.0; np * n];
    add_first_order_part(phi, &vec![1.0; np], 1, copies, n, &mut out);
    out
}

pub(crate) fn second_order_terminal(phi: &CoefStep, copies: &CopyIndex, n: usize) -> Vec<f64> {
    let np = phi.jets.len();
    let mut out = vec![0.0; np * n * n];
    add_second_order_part(phi, &vec![1.0; np], 1, copies, n, &mut out);
    out
}

/// First-order driver at every particle (`N x n`).
pub(crate) fn first_order_driver(
    frame: &Frame,
    p: &[f64],
    q: &[f64],
    copies: &CopyIndex,
    n: usize,
    d: usize,
) -> Vec<f64> {
    let np = frame.b.jets.len();
    let mut out = vec![0.0; np * n];
    add_first_order_part(&frame.b, p, n, copies, n, &mut out);
    add_first_order_part(&frame.s, q, n * d, copies, n, &mut out);
    add_first_order_part(&frame.h, &vec![1.0; np], 1, copies, n, &mut out);
    out
}

/// Hamiltonian second-order block with weights `(p, q, 1)` (`N x n x n`).
pub(crate) fn hamiltonian_hessian(
    frame: &Frame,
    p: &[f64],
    q: &[f64],
    copies: &CopyIndex,
    n: usize,
    d: usize,
) -> Vec<f64> {
    let np = frame.b.jets.len();
    let mut out = vec![0.0; np * n * n];
    add_second_order_part(&frame.b, p, n, copies, n, &mut out);
    add_second_order_part(&frame.s, q, n * d, copies, n, &mut out);
    add_second_order_part(&frame.h, &vec![1.0; np], 1, copies, n, &mut out);
    out
}

/// Second-order driver at every particle (`N x n x n`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn second_order_driver(
    frame: &Frame,
    p: &[f64],
    q: &[f64],
    big_p: &[f64],
    big_q: &[f64],
    copies: &CopyIndex,
    n: usize,
    d: usize,
    pairing: QPairing,
) -> Vec<f64> {
    let mut out = hamiltonian_hessian(frame, p, q, copies, n, d);
    let (b_loc, b_fld) = jacobian_pair(&frame.b, n, copies, n);
    let (s_loc, s_fld) = jacobian_pair(&frame.s, n * d, copies, n);
    let nn = n * n;
    out.par_chunks_mut(nn).enumerate().for_each(|(j, o)| {
        let pj = &big_p[j * nn..(j + 1) * nn];
        let qj = &big_q[j * d * nn..(j + 1) * d * nn];
        let mut a = vec![0.0; nn];
        for i in 0..nn {
            a[i] = b_loc[j * nn + i] + b_fld[j * nn + i];
        }
        // sigma rows are indexed i * d + c
        let col = |src: &[f64], c: usize| -> Vec<f64> {
            let base = j * n * d * n;
            let mut m = vec![0.0; nn];
            for i in 0..n {
                for r in 0..n {
                    m[i * n + r] = src[base + (i * d + c) * n + r];
                }
            }
            m
        };
        for r in 0..n {
            for s in 0..n {
                let mut v = 0.0;
                for i in 0..n {
                    v += a[i * n + r] * pj[i * n + s] + pj[r * n + i] * a[i * n + s];
                }
                o[r * n + s] += v;
            }
        }
        for c in 0..d {
            let sl = col(&s_loc, c);
            let sf = col(&s_fld, c);
            let cm: Vec<f64> = sl.iter().zip(&sf).map(|(x, y)| x + y).collect();
            let qc = &qj[c * nn..(c + 1) * nn];
            for r in 0..n {
                for s in 0..n {
                    let mut v = 0.0;
                    for i in 0..n {
                        for l in 0..n {
                            v += cm[i * n + r] * pj[i * n + l] * cm[l * n + s];
                        }
                    }
                    match pairing {
                        QPairing::Symmetric => {
                            for i in 0..n {
                                v += cm[i * n + r] * qc[i * n + s] + qc[r * n + i] * cm[i * n + s];
                            }
                        }
                        QPairing::Verbatim => {
                            for i in 0..n {
                                v += sl[i * n + r] * qc[i * n + s]
                                    + pj[r * n + i] * sl[i * n + s]
                                    + qc[r * n + i] * sf[i * n + s]
                                    + sf[i * n + r] * qc[i * n + s];
                            }
                        }
                    }
                    o[r * n + s] += v;
                }
            }
        }
    });
    out
}

fn check_ensemble(
    spec: &ProblemSpec,
    ens: &ParticlePathEnsemble,
    u: &ControlProcess,
) -> Result<()> {
    check_dim("ensemble state dimension", spec.dims.state, ens.dim())?;
    check_dim("noise dimension", spec.dims.noise, ens.noise().dim())?;
    check_dim("control dimension", spec.dims.control, u.dim())?;
    u.validate(ens.grid(), ens.particles(), None)
}

fn ensure_finite(values: &[f64], what: &str, step: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} at step {step}")))
    }
}

/// Conditional expectation of `y` given `X_m` and the regressed martingale
/// integrand `E[(y - yhat) dB_c | X_m] / dt`, laid out `[c][component]`.
struct BackwardStep {
    yhat: Vec<f64>,
    z: Vec<f64>,
    diag: StepDiagnostics,
}

#[allow(clippy::too_many_arguments)]
fn backward_regression(
    y: &[f64],
    width: usize,
    states: &[f64],
    n: usize,
    grid: &TimeGrid,
    ens: &ParticlePathEnsemble,
    m: usize,
    basis: &RegressionBasis,
) -> Result<BackwardStep> {
    let np = ens.particles();
    let d = ens.noise().dim();
    let fit = regress_at_step(y, width, states, n, basis, m)?;
    let yhat = fit.fitted;
    let dt = grid.dt();
    let mut target = vec![0.0; np * d * width];
    target
        .par_chunks_mut(d * width)
        .enumerate()
        .for_each(|(j, row)| {
            let db = ens.noise().increment(m, j);
            for c in 0..d {
                for i in 0..width {
                    row[c * width + i] = (y[j * width + i] - yhat[j * width + i]) * db[c] / dt;
                }
            }
        });
    let z = if d == 0 {
        Vec::new()
    } else {
        regress_at_step(&target, d * width, states, n, basis, m)?.fitted
    };

    let resid: Vec<f64> = y.iter().zip(&yhat).map(|(a, b)| a - b).collect();
    let rms = (resid.iter().map(|r| r * r).sum::<f64>() / np as f64).sqrt();
    let (mut worst, mut worst_se) = (0.0, 0.0);
    let mut col = vec![0.0; np];
    for i in 0..width {
        for j in 0..np {
            col[j] = resid[j * width + i];
        }
        let (mean, se) = mean_se(&col);
        if mean.abs() >= worst {
            worst = mean.abs();
            worst_se = se;
        }
    }
    Ok(BackwardStep {
        yhat,
        z,
        diag: StepDiagnostics {
            step: m,
            residual_rms: rms,
            mean_residual: worst,
            mean_residual_se: worst_se,
            target_rms: (y.iter().map(|v| v * v).sum::<f64>() / np as f64).sqrt(),
            asymmetry: 0.0,
        },
    })
}

/// Regression Monte Carlo for the first-order adjoint `(p, q)` along `ens`.
pub fn solve_first_order(
    spec: &ProblemSpec,
    ens: &ParticlePathEnsemble,
    u: &ControlProcess,
    basis: &RegressionBasis,
    copies: &CopyIndex,
) -> Result<FirstOrderAdjoint> {
    check_ensemble(spec, ens, u)?;
    let (n, d) = (spec.dims.state, spec.dims.noise);
    let np = ens.particles();
    let grid = *ens.grid();
    let steps = grid.steps();
    let mut p = KnotArray::zeros(steps + 1, np, n);
    let mut q = KnotArray::zeros(steps, np, n * d);
    let phi = terminal_step(spec, grid.horizon(), ens.knot_states(steps));
    let pt = first_order_terminal(&phi, copies, n);
    ensure_finite(&pt, "first-order terminal condition", steps)?;
    p.knot_mut(steps).copy_from_slice(&pt);

    let mut diagnostics = Vec::with_capacity(steps);
    for m in (0..steps).rev() {
        let states = ens.knot_states(m);
        let bs = backward_regression(p.knot(m + 1), n, states, n, &grid, ens, m, basis)?;
        // z is laid out [c][i]; q is [i][c]
        let qm = q.knot_mut(m);
        for j in 0..np {
            for i in 0..n {
                for c in 0..d {
                    qm[(j * n + i) * d + c] = bs.z[j * d * n + c * n + i];
                }
            }
        }
        let frame = Frame::at_knot(spec, ens, u, m);
        let drv = first_order_driver(&frame, &bs.yhat, q.knot(m), copies, n, d);
        let dt = grid.dt();
        let pm = p.knot_mut(m);
        for ((o, y), f) in pm.iter_mut().zip(&bs.yhat).zip(&drv) {
            *o = y + f * dt;
        }
        ensure_finite(p.knot(m), "first-order adjoint", m)?;
        ensure_finite(q.knot(m), "first-order martingale integrand", m)?;
        diagnostics.push(bs.diag);
    }
    diagnostics.reverse();
    Ok(FirstOrderAdjoint { p, q, diagnostics })
}

/// Regression Monte Carlo for the second-order adjoint `(P, Q)` along `ens`.
pub fn solve_second_order(
    spec: &ProblemSpec,
    ens: &ParticlePathEnsemble,
    u: &ControlProcess,
    first: &FirstOrderAdjoint,
    basis: &RegressionBasis,
    copies: &CopyIndex,
    pairing: QPairing,
) -> Result<SecondOrderAdjoint> {
    check_ensemble(spec, ens, u)?;
    let (n, d) = (spec.dims.state, spec.dims.noise);
    let nn = n * n;
    let np = ens.particles();
    let grid = *ens.grid();
    let steps = grid.steps();
    check_dim("first-order adjoint knots", steps + 1, first.p.knots())?;
    check_dim("first-order adjoint particles", np, first.p.particles())?;
    let mut big_p = KnotArray::zeros(steps + 1, np, nn);
    let mut big_q = KnotArray::zeros(steps, np, d * nn);
    let phi = terminal_step(spec, grid.horizon(), ens.knot_states(steps));
    let mut pt = second_order_terminal(&phi, copies, n);
    ensure_finite(&pt, "second-order terminal condition", steps)?;
    pt.chunks_mut(nn).for_each(|c| symmetrize(c, n));
    big_p.knot_mut(steps).copy_from_slice(&pt);

    let mut diagnostics = Vec::with_capacity(steps);
    let mut max_asymmetry: f64 = 0.0;
    for m in (0..steps).rev() {
        let states = ens.knot_states(m);
        let mut bs = backward_regression(big_p.knot(m + 1), nn, states, n, &grid, ens, m, basis)?;
        big_q.knot_mut(m).copy_from_slice(&bs.z);
        let frame = Frame::at_knot(spec, ens, u, m);
        let drv = second_order_driver(
            &frame,
            first.p.knot(m),
            first.q.knot(m),
            &bs.yhat,
            big_q.knot(m),
            copies,
            n,
            d,
            pairing,
        );
        let dt = grid.dt();
        let pm = big_p.knot_mut(m);
        for ((o, y), f) in pm.iter_mut().zip(&bs.yhat).zip(&drv) {
            *o = y + f * dt;
        }
        let mut asym: f64 = 0.0;
        for c in pm.chunks_mut(nn) {
            asym = asym.max(asymmetry(c, n));
            symmetrize(c, n);
        }
        ensure_finite(big_p.knot(m), "second-order adjoint", m)?;
        ensure_finite(big_q.knot(m), "second-order martingale integrand", m)?;
        bs.diag.asymmetry = asym;
        max_asymmetry = max_asymmetry.max(asym);
        diagnostics.push(bs.diag);
    }
    diagnostics.reverse();
    Ok(SecondOrderAdjoint {
        big_p,
        big_q,
        diagnostics,
        max_asymmetry,
    })
}

/// Both adjoints with the default symmetric `Q` pairing.
pub fn solve_adjoints(
    spec: &ProblemSpec,
    ens: &ParticlePathEnsemble,
    u: &ControlProcess,
    basis: &RegressionBasis,
    copies: &CopyIndex,
) -> Result<AdjointSolution> {
    let first = solve_first_order(spec, ens, u, basis, copies)?;
    let second = solve_second_order(spec, ens, u, &first, basis, copies, QPairing::Symmetric)?;
    Ok(AdjointSolution { first, second })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjointRow {
    pub step: usize,
    pub time: f64,
    pub particle: usize,
    pub block: String,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// Writes `step,time,particle,block,row,col,value` for the first
/// `max_particles` particles. `q` uses `col = c`; `Q` uses `col = c * n + s`.
pub fn write_adjoint_csv<W: Write>(
    sol: &AdjointSolution,
    grid: &TimeGrid,
    n: usize,
    d: usize,
    max_particles: usize,
    out: W,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let np = sol.first.p.particles().min(max_particles);
    let nn = n * n;
    for m in 0..=grid.steps() {
        let time = grid.knot(m);
        for j in 0..np {
            let mut emit = |block: &str, row: usize, col: usize, value: f64| {
                w.serialize(AdjointRow {
                    step: m,
                    time,
                    particle: j,
                    block: block.to_string(),
                    row,
                    col,
                    value,
                })
            };
            for (i, &v) in sol.first.p.get(m, j).iter().enumerate() {
                emit("p", i, 0, v)?;
            }
            if m < grid.steps() {
                for (k, &v) in sol.first.q.get(m, j).iter().enumerate() {
                    emit("q", k / d, k % d, v)?;
                }
            }
            for (k, &v) in sol.second.big_p.get(m, j).iter().enumerate() {
                emit("P", k / n, k % n, v)?;
            }
            if m < grid.steps() {
                for (k, &v) in sol.second.big_q.get(m, j).iter().enumerate() {
                    let (c, rs) = (k / nn, k % nn);
                    emit("Q", rs / n, c * n + rs % n, v)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_adjoint_csv<R: std::io::Read>(input: R) -> Result<Vec<AdjointRow>> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}
