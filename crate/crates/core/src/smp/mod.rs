//! Maximum-principle checks for a candidate control.

mod expansion;
mod ito;
mod report;

pub use expansion::{expansion_audit, ExpansionAudit, ExpansionConfig, ExpansionRung};
pub use ito::{ito_residual, ItoResidual};
pub use report::{
    check_candidate, AdjointSummary, CheckConfig, CheckRun, ConditionTable, FirstOrderSection,
    QuadraticShape, ReportMeta, SMPReport, SecondOrderSection,
};

use crate::adjoint::{AdjointSolution, FirstOrderAdjoint};
use crate::copy::CopyIndex;
use crate::error::{check_dim, invalid, Error, Result};
use crate::forward::{ControlProcess, ParticlePathEnsemble};
use crate::linalg::mean_se;
use crate::linearize::{control_differs, CoefStep};
use crate::measure::{moment_vector, EmpiricalMeasure};
use crate::paths::KnotArray;
use crate::problem::ProblemSpec;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Margin below which a negative Monte Carlo value counts as roundoff.
pub(crate) const ROUNDOFF: f64 = 1e-9;

/// `p . b + q : sigma + h` at one point.
#[allow(clippy::too_many_arguments)]
pub fn hamiltonian(
    spec: &ProblemSpec,
    t: f64,
    x: &[f64],
    mu: &EmpiricalMeasure,
    p: &[f64],
    q: &[f64],
    v: &[f64],
) -> Result<f64> {
    let (n, d) = (spec.dims.state, spec.dims.noise);
    check_dim("state", n, x.len())?;
    check_dim("first-order adjoint", n, p.len())?;
    check_dim("martingale integrand", n * d, q.len())?;
    check_dim("control", spec.dims.control, v.len())?;
    check_dim("measure dimension", n, mu.dim())?;
    let mut b = vec![0.0; n];
    let mut s = vec![0.0; n * d];
    let mut h = [0.0];
    spec.drift
        .eval_at(t, x, &moment_vector(mu, spec.drift.basis())?, v, &mut b);
    spec.diffusion
        .eval_at(t, x, &moment_vector(mu, spec.diffusion.basis())?, v, &mut s);
    spec.running_cost.eval_at(
        t,
        x,
        &moment_vector(mu, spec.running_cost.basis())?,
        v,
        &mut h,
    );
    let value = p.iter().zip(&b).map(|(a, c)| a * c).sum::<f64>()
        + q.iter().zip(&s).map(|(a, c)| a * c).sum::<f64>()
        + h[0];
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite("Hamiltonian".into()))
    }
}

/// Particle mean and standard error of a quantity at each knot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnotSeries {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

impl KnotSeries {
    fn from_samples(times: Vec<f64>, samples: &[Vec<f64>]) -> Self {
        let (mean, stderr) = samples.iter().map(|s| mean_se(s)).unzip();
        KnotSeries {
            times,
            mean,
            stderr,
        }
    }

    /// `sum_m mean_m dt` with the matching standard error.
    pub fn integral(&self, dt: f64) -> (f64, f64) {
        let v = self.mean.iter().sum::<f64>() * dt;
        let se = self.stderr.iter().map(|s| s * s).sum::<f64>().sqrt() * dt;
        (v, se)
    }
}

fn check_adjoint(ens: &ParticlePathEnsemble, adj: &FirstOrderAdjoint) -> Result<()> {
    check_dim("adjoint knots", ens.grid().steps() + 1, adj.p.knots())?;
    check_dim("adjoint particles", ens.particles(), adj.p.particles())
}

/// Per-knot `E[H(v) - H(u)]` along `ens` with the solved first-order adjoint,
/// over knots `0..M`.
pub fn hamiltonian_gap(
    spec: &ProblemSpec,
    ens: &ParticlePathEnsemble,
    u: &ControlProcess,
    adj: &FirstOrderAdjoint,
    v: &ControlProcess,
) -> Result<KnotSeries> {
    check_adjoint(ens, adj)?;
    check_dim("control dimension", spec.dims.control, v.dim())?;
    v.validate(ens.grid(), ens.particles(), None)?;
    let n = spec.dims.state;
    let grid = ens.grid();
    let mut samples = Vec::with_capacity(grid.steps());
    for m in 0..grid.steps() {
        let states = ens.knot_states(m);
        let t = grid.knot(m);
        if !control_differs(u, v, m, ens.particles()) {
            samples.push(vec![0.0; ens.particles()]);
            continue;
        }
        let mb = spec.drift.moments(states);
        let mh = spec.running_cost.moments(states);
        let gaps: Vec<f64> = (0..ens.particles())
            .into_par_iter()
            .map(|j| {
                let x = ens.state(m, j);
                let p = adj.p.get(m, j);
                let mut bu = vec![0.0; n];
                let mut bv = vec![0.0; n];
                let (mut hu, mut hv) = ([0.0], [0.0]);
                spec.drift.eval_at(t, x, &mb, u.value(m, j), &mut bu);
                spec.drift.eval_at(t, x, &mb, v.value(m, j), &mut bv);
                spec.running_cost.eval_at(t, x, &mh, u.value(m, j), &mut hu);
                spec.running_cost.eval_at(t, x, &mh, v.value(m, j), &mut hv);
                // sigma carries no control, so the q-pairing cancels
                (0..n).map(|i| p[i] * (bv[i] - bu[i])).sum::<f64>() + hv[0] - hu[0]
            })
            .collect();
        if gaps.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("Hamiltonian gap at step {m}")));
        }
        samples.push(gaps);
    }
    Ok(KnotSeries::from_samples(
        (0..grid.steps()).map(|m| grid.knot(m)).collect(),
        &samples,
    ))
}

/// A control-grid point and the gap series it produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapTable {
    pub v: Vec<f64>,
    pub gap: KnotSeries,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub knot: usize,
    pub time: f64,
    pub v: Vec<f64>,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderResult {
    /// `max (-E[Delta H])_+` over knots and grid points.
    pub violation: f64,
    /// Present when some gap is negative beyond three standard errors.
    pub witness: Option<Witness>,
    pub pass: bool,
}

/// First-order maximum principle on the control grid.
pub fn first_order_residual(tables: &[GapTable]) -> Result<FirstOrderResult> {
    if tables.is_empty() {
        return invalid("empty control grid");
    }
    let mut violation: f64 = 0.0;
    let mut worst: Option<(f64, Witness)> = None;
    for tab in tables {
        for (k, (&g, &se)) in tab.gap.mean.iter().zip(&tab.gap.stderr).enumerate() {
            violation = violation.max(-g);
            let excess = -g - 3.0 * se;
            if excess > ROUNDOFF && worst.as_ref().is_none_or(|w| excess > w.0) {
                worst = Some((
                    excess,
                    Witness {
                        knot: k,
                        time: tab.gap.times[k],
                        v: tab.v.clone(),
                        value: g,
                        stderr: se,
                    },
                ));
            }
        }
    }
    let witness = worst.map(|w| w.1);
    Ok(FirstOrderResult {
        violation: violation + 0.0,
        pass: witness.is_none(),
        witness,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularRegion {
    /// `None` means three standard errors of each cell.
    pub tol_sing: Option<f64>,
    /// `(knot, grid index)` pairs with `|E[Delta H]| <= tol`.
    pub cells: Vec<(usize, usize)>,
    /// At least two knots and one grid point away from the candidate.
    pub positive_measure: bool,
    pub covers_grid: bool,
}

impl SingularRegion {
    pub fn contains(&self, knot: usize, grid_index: usize) -> bool {
        self.cells.binary_search(&(knot, grid_index)).is_ok()
    }
}

/// Cells where the Hamiltonian gap vanishes within `tol_sing`.
/// `is_candidate[i]` marks grid points equal to the candidate everywhere.
pub fn detect_singular_region(
    tables: &[GapTable],
    tol_sing: Option<f64>,
    is_candidate: &[bool],
) -> SingularRegion {
    let mut cells = Vec::new();
    for (i, tab) in tables.iter().enumerate() {
        for (k, (&g, &se)) in tab.gap.mean.iter().zip(&tab.gap.stderr).enumerate() {
            let tol = tol_sing.unwrap_or(3.0 * se);
            if g.abs() <= tol {
                cells.push((k, i));
            }
        }
    }
    cells.sort_unstable();
    let total: usize = tables.iter().map(|t| t.gap.mean.len()).sum();
    let mut knots: Vec<usize> = cells.iter().map(|c| c.0).collect();
    knots.dedup();
    let off_candidate = cells
        .iter()
        .any(|&(_, i)| !is_candidate.get(i).copied().unwrap_or(false));
    SingularRegion {
        tol_sing,
        positive_measure: knots.len() >= 2 && off_candidate,
        covers_grid: total > 0 && cells.len() == total,
        cells,
    }
}

/// Direction paired with `P` and the Hamiltonian derivatives.
#[derive(Clone, Copy, Debug)]
pub(crate) enum Direction<'a> {
    /// The drift difference itself: the second-order condition.
    Drift,
    /// A process on the grid, e.g. the first variation.
    Paths(&'a KnotArray),
}

/// Per-particle values of
/// `Delta H_x . z + E~[Delta H_mu(X^j)(X~) . z~] + Delta b^T P z`
/// at knot `m`, where `Delta` compares `v` against `u`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn pairing_samples(
    spec: &ProblemSpec,
    ens: &ParticlePathEnsemble,
    u: &ControlProcess,
    v: &ControlProcess,
    adj: &AdjointSolution,
    dir: Direction<'_>,
    copies: &CopyIndex,
    m: usize,
) -> Vec<f64> {
    let n = spec.dims.state;
    let np = ens.particles();
    if !control_differs(u, v, m, np) {
        return vec![0.0; np];
    }
    let t = ens.grid().knot(m);
    let states = ens.knot_states(m);
    let uc = |j: usize| u.value(m, j);
    let vc = |j: usize| v.value(m, j);
    let bu = CoefStep::new(&spec.drift, t, states, &uc);
    let bv = bu.at_control(&spec.drift, t, states, &vc);
    let hu = CoefStep::new(&spec.running_cost, t, states, &uc);
    let hv = hu.at_control(&spec.running_cost, t, states, &vc);
    let db: Vec<f64> = (0..np)
        .flat_map(|j| (0..n).map(move |i| (j, i)))
        .map(|(j, i)| bv[j].value(i) - bu.jets[j].value(i))
        .collect();
    let z: &[f64] = match dir {
        Direction::Drift => &db,
        Direction::Paths(a) => a.knot(m),
    };
    let tb = bu.directional_table(z, n);
    let th = hu.directional_table(z, n);
    let p = adj.first.p.knot(m);
    let big_p = adj.second.big_p.knot(m);
    (0..np)
        .into_par_iter()
        .map(|j| {
            let pj = &p[j * n..(j + 1) * n];
            let zj = &z[j * n..(j + 1) * n];
            let dbj = &db[j * n..(j + 1) * n];
            let mut acc = 0.0;
            for r in 0..n {
                let mut hx = hv[j].fx(0, r) - hu.jets[j].fx(0, r);
                for i in 0..n {
                    hx += pj[i] * (bv[j].fx(i, r) - bu.jets[j].fx(i, r));
                }
                acc += hx * zj[r];
            }
            let eb = tb.tilde(copies, j);
            for (a, e) in eb.iter().enumerate() {
                let hm: f64 = (0..n)
                    .map(|i| pj[i] * (bv[j].fm(i, a) - bu.jets[j].fm(i, a)))
                    .sum();
                acc += hm * e;
            }
            let eh = th.tilde(copies, j);
            for (a, e) in eh.iter().enumerate() {
                acc += (hv[j].fm(0, a) - hu.jets[j].fm(0, a)) * e;
            }
            let pm = &big_p[j * n * n..(j + 1) * n * n];
            for r in 0..n {
                for s in 0..n {
                    acc += dbj[r] * pm[r * n + s] * zj[s];
                }
            }
            acc
        })
        .collect()
}

/// Per-knot particle average of the second-order condition integrand.
pub fn second_order_condition(
    spec: &ProblemSpec,
    ens: &ParticlePathEnsemble,
    u: &ControlProcess,
    adj: &AdjointSolution,
    v: &ControlProcess,
    copies: &CopyIndex,
) -> Result<KnotSeries> {
    check_adjoint(ens, &adj.first)?;
    check_dim("control dimension", spec.dims.control, v.dim())?;
    v.validate(ens.grid(), ens.particles(), None)?;
    let grid = ens.grid();
    let samples: Vec<Vec<f64>> = (0..grid.steps())
        .map(|m| pairing_samples(spec, ens, u, v, adj, Direction::Drift, copies, m))
        .collect();
    if samples.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("second-order condition".into()));
    }
    Ok(KnotSeries::from_samples(
        (0..grid.steps()).map(|m| grid.knot(m)).collect(),
        &samples,
    ))
}

/// Per-particle `sum_m h dt + Phi(X_M)`.
pub fn cost_samples(
    spec: &ProblemSpec,
    ens: &ParticlePathEnsemble,
    control: &ControlProcess,
) -> Result<Vec<f64>> {
    check_dim("state dimension", spec.dims.state, ens.dim())?;
    check_dim("control dimension", spec.dims.control, control.dim())?;
    control.validate(ens.grid(), ens.particles(), None)?;
    let grid = ens.grid();
    let np = ens.particles();
    let dt = grid.dt();
    let mut acc = vec![0.0; np];
    if !spec.running_cost.is_zero() {
        for m in 0..grid.steps() {
            let states = ens.knot_states(m);
            let mom = spec.running_cost.moments(states);
            let t = grid.knot(m);
            acc.par_iter_mut().enumerate().for_each(|(j, a)| {
                let mut h = [0.0];
                spec.running_cost
                    .eval_at(t, ens.state(m, j), &mom, control.value(m, j), &mut h);
                *a += h[0] * dt;
            });
        }
    }
    let last = grid.steps();
    let states = ens.knot_states(last);
    let mom = spec.terminal_cost.moments(states);
    acc.par_iter_mut().enumerate().for_each(|(j, a)| {
        let mut g = [0.0];
        spec.terminal_cost
            .eval_at(grid.horizon(), ens.state(last, j), &mom, &[], &mut g);
        *a += g[0];
    });
    if acc.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("cost".into()));
    }
    Ok(acc)
}

/// Monte Carlo cost estimate and its standard error.
pub fn cost(
    spec: &ProblemSpec,
    ens: &ParticlePathEnsemble,
    control: &ControlProcess,
) -> Result<(f64, f64)> {
    Ok(mean_se(&cost_samples(spec, ens, control)?))
}
