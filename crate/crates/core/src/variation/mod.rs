//! Spike perturbations and the variation processes of the state.

mod study;
mod transition;

pub(crate) use study::decreasing_within_se;
pub use study::{
    order_study, proportional_cells, read_convergence_csv, spike_limit_study,
    write_convergence_csv, OrderRow, OrderStudy, OrderStudyConfig, SpikeLimitConfig,
    SpikeLimitRung, SpikeLimitStudy, X1_SLOPE_THRESHOLD, X2_SLOPE_THRESHOLD,
};
pub use transition::{transition_matrix, TransitionEnsemble};

use crate::copy::{CopyIndex, CopyTable};
use crate::error::{check_dim, invalid, Result};
use crate::forward::{ControlProcess, ParticlePathEnsemble, TimeGrid};
use crate::linearize::LinearStep;
use crate::paths::KnotArray;
use crate::problem::ProblemSpec;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// `dt` times the number of steps on which some particle's controls differ.
pub fn control_distance(
    v1: &ControlProcess,
    v2: &ControlProcess,
    grid: &TimeGrid,
    particles: usize,
) -> Result<f64> {
    check_dim("control dimension", v1.dim(), v2.dim())?;
    v1.validate(grid, particles, None)?;
    v2.validate(grid, particles, None)?;
    let count = (0..grid.steps())
        .filter(|&m| (0..particles).any(|j| v1.value(m, j) != v2.value(m, j)))
        .count();
    Ok(count as f64 * grid.dt())
}

/// `v` on `spike_steps`, `u` elsewhere.
pub fn spike_control(
    u: &ControlProcess,
    v: &ControlProcess,
    spike_steps: &[usize],
    grid: &TimeGrid,
) -> Result<ControlProcess> {
    check_dim("control dimension", u.dim(), v.dim())?;
    let mut mask = vec![false; grid.steps()];
    for &s in spike_steps {
        if s >= grid.steps() {
            return invalid(format!(
                "spike step {s} outside grid of {} steps",
                grid.steps()
            ));
        }
        mask[s] = true;
    }
    Ok(ControlProcess::Switched {
        base: Arc::new(u.clone()),
        alternative: Arc::new(v.clone()),
        mask: Arc::new(mask),
    })
}

/// Knot indices `0, c, 2c, ..., M` (last cell may be shorter).
pub fn uniform_partition(grid: &TimeGrid, cell_steps: usize) -> Result<Vec<usize>> {
    if cell_steps == 0 {
        return invalid("partition cells need at least one step");
    }
    let mut knots: Vec<usize> = (0..grid.steps()).step_by(cell_steps).collect();
    knots.push(grid.steps());
    Ok(knots)
}

/// Where the spike steps sit inside each partition cell.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpikePlacement {
    /// The first steps of the cell.
    #[default]
    Leading,
    /// A block centered in the cell, so each cell's spike acts at its
    /// midpoint to first order.
    Centered,
}

/// The leading `floor(rho * cell + 1/2)` steps of every partition cell.
pub fn partition_spike_set(grid: &TimeGrid, rho: f64, partition: &[usize]) -> Result<Vec<usize>> {
    placed_spike_set(grid, rho, partition, SpikePlacement::Leading)
}

/// `floor(rho * cell + 1/2)` steps of every partition cell at `placement`.
pub fn placed_spike_set(
    grid: &TimeGrid,
    rho: f64,
    partition: &[usize],
    placement: SpikePlacement,
) -> Result<Vec<usize>> {
    if !(rho > 0.0 && rho < 1.0) {
        return invalid(format!("rho = {rho} outside (0, 1)"));
    }
    if partition.len() < 2
        || partition[0] != 0
        || *partition.last().unwrap() != grid.steps()
        || partition.windows(2).any(|w| w[1] <= w[0])
    {
        return invalid("partition must be strictly increasing knots from 0 to M");
    }
    let mut steps = Vec::new();
    for w in partition.windows(2) {
        let cell = w[1] - w[0];
        let take = ((rho * cell as f64 + 0.5).floor() as usize).min(cell);
        let start = match placement {
            SpikePlacement::Leading => w[0],
            SpikePlacement::Centered => w[0] + (cell - take) / 2,
        };
        steps.extend(start..start + take);
    }
    Ok(steps)
}

/// Steps covering `[0, d)`, rounded to the grid.
pub fn leading_spike_set(grid: &TimeGrid, d: f64) -> Result<Vec<usize>> {
    if !(d > 0.0 && d <= grid.horizon()) {
        return invalid(format!("spike length {d} outside (0, T]"));
    }
    let count = ((d / grid.dt()) + 0.5).floor() as usize;
    Ok((0..count.clamp(1, grid.steps())).collect())
}

/// A spiked control together with its ingredients.
#[derive(Clone, Debug)]
pub struct SpikePerturbation {
    pub base: ControlProcess,
    pub alternative: ControlProcess,
    pub spike_steps: Vec<usize>,
    pub rho: f64,
    /// Realized measure `|spike_steps| dt`.
    pub d_value: f64,
    pub control: ControlProcess,
}

impl SpikePerturbation {
    pub fn new(
        base: &ControlProcess,
        alternative: &ControlProcess,
        spike_steps: Vec<usize>,
        rho: f64,
        grid: &TimeGrid,
    ) -> Result<Self> {
        let control = spike_control(base, alternative, &spike_steps, grid)?;
        Ok(SpikePerturbation {
            base: base.clone(),
            alternative: alternative.clone(),
            d_value: spike_steps.len() as f64 * grid.dt(),
            spike_steps,
            rho,
            control,
        })
    }
}

/// First and second variations and the remainder of the expansion of
/// `X^{vhat}` around `X^u`.
#[derive(Clone, Debug)]
pub struct VariationEnsemble {
    pub x1: KnotArray,
    pub x2: KnotArray,
    pub xstar: KnotArray,
}

fn check_pair(
    spec: &ProblemSpec,
    ens: &ParticlePathEnsemble,
    u: &ControlProcess,
    vhat: &ControlProcess,
) -> Result<()> {
    check_dim("ensemble state dimension", spec.dims.state, ens.dim())?;
    check_dim("noise dimension", spec.dims.noise, ens.noise().dim())?;
    check_dim("control dimension", spec.dims.control, u.dim())?;
    check_dim(
        "alternative control dimension",
        spec.dims.control,
        vhat.dim(),
    )?;
    u.validate(ens.grid(), ens.particles(), None)?;
    vhat.validate(ens.grid(), ens.particles(), None)
}

/// Euler scheme for the first variation equation along `ens`.
pub fn first_variation(
    spec: &ProblemSpec,
    ens: &ParticlePathEnsemble,
    u: &ControlProcess,
    vhat: &ControlProcess,
    copies: &CopyIndex,
) -> Result<KnotArray> {
    check_pair(spec, ens, u, vhat)?;
    let (n, d) = (spec.dims.state, spec.dims.noise);
    let np = ens.particles();
    let grid = *ens.grid();
    let dt = grid.dt();
    let mut x1 = KnotArray::zeros(grid.steps() + 1, np, n);
    for m in 0..grid.steps() {
        let step = LinearStep::new(spec, ens, u, Some(vhat), m);
        let (prev, next) = x1.split_at_knot(m + 1);
        let cur = &prev[m * np * n..];
        let tb = step.b.directional_table(cur, n);
        let ts = step.s.directional_table(cur, n);
        let kb = tb.width();
        let ks = ts.width();
        let noise = ens.noise();
        next.par_chunks_mut(n).enumerate().for_each(|(j, out)| {
            let z = &cur[j * n..(j + 1) * n];
            let jb = &step.b.jets[j];
            let js = &step.s.jets[j];
            let eb = tb.tilde(copies, j);
            let es = ts.tilde(copies, j);
            let db = noise.increment(m, j);
            for i in 0..n {
                let mut drift = 0.0;
                for r in 0..n {
                    drift += jb.fx(i, r) * z[r];
                }
                for a in 0..kb {
                    drift += jb.fm(i, a) * eb[a];
                }
                if let Some(alt) = &step.b_alt {
                    drift += alt[j].value(i) - jb.value(i);
                }
                let mut xi = z[i] + drift * dt;
                for c in 0..d {
                    let comp = i * d + c;
                    let mut vol = 0.0;
                    for r in 0..n {
                        vol += js.fx(comp, r) * z[r];
                    }
                    for a in 0..ks {
                        vol += js.fm(comp, a) * es[a];
                    }
                    xi += vol * db[c];
                }
                out[i] = xi;
            }
        });
    }
    Ok(x1)
}

/// Copy table `[grad h_a . z | grad h_a . w | z^T hess h_a z]` per particle.
pub(crate) fn second_order_table(
    step: &crate::linearize::CoefStep,
    z: &[f64],
    w: &[f64],
    n: usize,
) -> CopyTable {
    let k = step.moments.len();
    CopyTable::build(step.basis.len(), 3 * k, |l, row| {
        let bj = &step.basis[l];
        let zl = &z[l * n..(l + 1) * n];
        let wl = &w[l * n..(l + 1) * n];
        for a in 0..k {
            let g = &bj.grads[a * n..(a + 1) * n];
            let h = &bj.hess[a * n * n..(a + 1) * n * n];
            row[a] = (0..n).map(|s| g[s] * zl[s]).sum();
            row[k + a] = (0..n).map(|s| g[s] * wl[s]).sum();
            let mut q = 0.0;
            for r in 0..n {
                for s in 0..n {
                    q += zl[r] * h[r * n + s] * zl[s];
                }
            }
            row[2 * k + a] = q;
        }
    })
}

/// Second-order terms of one coefficient component: everything in the
/// second variation equation except `Delta`-terms.
#[allow(clippy::too_many_arguments)]
fn second_order_terms(
    jet: &crate::problem::FunctionJet,
    comp: usize,
    x1: &[f64],
    x2: &[f64],
    tilde: &[f64],
    bar: &[f64],
    k: usize,
    n: usize,
) -> f64 {
    let mut acc = 0.0;
    for r in 0..n {
        acc += jet.fx(comp, r) * x2[r];
        for s in 0..n {
            acc += 0.5 * jet.fxx(comp, r, s) * x1[r] * x1[s];
        }
    }
    for a in 0..k {
        let fa = jet.fm(comp, a);
        acc += fa * tilde[k + a] + 0.5 * fa * tilde[2 * k + a];
        let mut cross = 0.0;
        for r in 0..n {
            cross += jet.fxm(comp, r, a) * x1[r];
        }
        acc += cross * tilde[a];
        for b in 0..k {
            acc += 0.5 * jet.fmm(comp, a, b) * tilde[a] * bar[b];
        }
    }
    acc
}

/// Euler scheme for the second variation equation, driven by `x1`.
pub fn second_variation(
    spec: &ProblemSpec,
    ens: &ParticlePathEnsemble,
    u: &ControlProcess,
    vhat: &ControlProcess,
    x1: &KnotArray,
    copies: &CopyIndex,
) -> Result<KnotArray> {
    check_pair(spec, ens, u, vhat)?;
    let (n, d) = (spec.dims.state, spec.dims.noise);
    let np = ens.particles();
    let grid = *ens.grid();
    check_dim("first variation knots", grid.steps() + 1, x1.knots())?;
    check_dim("first variation particles", np, x1.particles())?;
    let dt = grid.dt();
    let mut x2 = KnotArray::zeros(grid.steps() + 1, np, n);
    for m in 0..grid.steps() {
        let step = LinearStep::new(spec, ens, u, Some(vhat), m);
        let (prev, next) = x2.split_at_knot(m + 1);
        let cur2 = &prev[m * np * n..];
        let cur1 = x1.knot(m);
        let tb = second_order_table(&step.b, cur1, cur2, n);
        let ts = second_order_table(&step.s, cur1, cur2, n);
        let kb = step.b.moments.len();
        let ks = step.s.moments.len();
        let noise = ens.noise();
        next.par_chunks_mut(n).enumerate().for_each(|(j, out)| {
            let z1 = &cur1[j * n..(j + 1) * n];
            let z2 = &cur2[j * n..(j + 1) * n];
            let jb = &step.b.jets[j];
            let js = &step.s.jets[j];
            let (eb, bb) = (tb.tilde(copies, j), tb.bar(copies, j));
            let (es, bs) = (ts.tilde(copies, j), ts.bar(copies, j));
            let db = noise.increment(m, j);
            for i in 0..n {
                let mut drift = second_order_terms(jb, i, z1, z2, eb, bb, kb, n);
                if let Some(alt) = &step.b_alt {
                    let ja = &alt[j];
                    for r in 0..n {
                        drift += (ja.fx(i, r) - jb.fx(i, r)) * z1[r];
                    }
                    for a in 0..kb {
                        drift += (ja.fm(i, a) - jb.fm(i, a)) * eb[a];
                    }
                }
                let mut xi = z2[i] + drift * dt;
                for c in 0..d {
                    xi += second_order_terms(js, i * d + c, z1, z2, es, bs, ks, n) * db[c];
                }
                out[i] = xi;
            }
        });
    }
    Ok(x2)
}

/// `X^{vhat} - X^u - x1 - x2` knotwise.
pub fn remainder(
    ens_vhat: &ParticlePathEnsemble,
    ens_u: &ParticlePathEnsemble,
    x1: &KnotArray,
    x2: &KnotArray,
) -> Result<KnotArray> {
    let knots = ens_u.grid().steps() + 1;
    let np = ens_u.particles();
    let n = ens_u.dim();
    check_dim(
        "perturbed ensemble size",
        ens_u.paths().len(),
        ens_vhat.paths().len(),
    )?;
    for a in [x1, x2] {
        check_dim("variation size", knots * np * n, a.as_slice().len())?;
    }
    let mut out = KnotArray::zeros(knots, np, n);
    for m in 0..knots {
        let (xv, xu, a, b) = (
            ens_vhat.knot_states(m),
            ens_u.knot_states(m),
            x1.knot(m),
            x2.knot(m),
        );
        for (idx, o) in out.knot_mut(m).iter_mut().enumerate() {
            *o = xv[idx] - xu[idx] - a[idx] - b[idx];
        }
    }
    Ok(out)
}

/// Runs both variations and the remainder against a perturbed ensemble.
pub fn variation_ensemble(
    spec: &ProblemSpec,
    ens_u: &ParticlePathEnsemble,
    ens_vhat: &ParticlePathEnsemble,
    u: &ControlProcess,
    vhat: &ControlProcess,
    copies: &CopyIndex,
) -> Result<VariationEnsemble> {
    let x1 = first_variation(spec, ens_u, u, vhat, copies)?;
    let x2 = second_variation(spec, ens_u, u, vhat, &x1, copies)?;
    let xstar = remainder(ens_vhat, ens_u, &x1, &x2)?;
    Ok(VariationEnsemble { x1, x2, xstar })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(m: usize) -> TimeGrid {
        TimeGrid::new(1.0, m).unwrap()
    }

    #[test]
    fn partition_examples() {
        let g10 = grid(10);
        assert_eq!(
            partition_spike_set(&g10, 0.5, &[0, 10]).unwrap(),
            vec![0, 1, 2, 3, 4]
        );
        let centered = placed_spike_set(&g10, 0.5, &[0, 10], SpikePlacement::Centered).unwrap();
        assert_eq!(centered, vec![2, 3, 4, 5, 6]);
        let g100 = grid(100);
        let cells = uniform_partition(&g100, 10).unwrap();
        let s = partition_spike_set(&g100, 0.1, &cells).unwrap();
        assert_eq!(s, (0..100).step_by(10).collect::<Vec<_>>());
        let g64 = grid(64);
        let cells = uniform_partition(&g64, 8).unwrap();
        let s = partition_spike_set(&g64, 0.25, &cells).unwrap();
        assert_eq!(s.len(), 16);
        assert_eq!(&s[..4], &[0, 1, 8, 9]);
        assert!(partition_spike_set(&g10, 1.0, &[0, 10]).is_err());
        assert!(partition_spike_set(&g10, 0.0, &[0, 10]).is_err());
        assert!(partition_spike_set(&g10, 0.5, &[0, 5]).is_err());
    }

    #[test]
    fn distance_examples() {
        let g = grid(100);
        let u = ControlProcess::constant(vec![0.0]);
        let v = ControlProcess::constant(vec![1.0]);
        assert_eq!(control_distance(&u, &u, &g, 4).unwrap(), 0.0);
        assert!((control_distance(&u, &v, &g, 4).unwrap() - 1.0).abs() < 1e-12);
        let s = spike_control(&u, &v, &(0..25).collect::<Vec<_>>(), &g).unwrap();
        assert!((control_distance(&u, &s, &g, 4).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn spike_control_selects_pointwise() {
        let g = grid(100);
        let u = ControlProcess::constant(vec![0.0]);
        let v = ControlProcess::constant(vec![1.0]);
        let s = spike_control(&u, &v, &(0..10).collect::<Vec<_>>(), &g).unwrap();
        for m in 0..100 {
            assert_eq!(s.value(m, 3)[0], if m < 10 { 1.0 } else { 0.0 });
        }
        assert!(spike_control(&u, &v, &[100], &g).is_err());
        let none = spike_control(&u, &v, &[], &g).unwrap();
        assert_eq!(control_distance(&u, &none, &g, 2).unwrap(), 0.0);
    }

    #[test]
    fn leading_set_rounds_to_grid() {
        let g = grid(100);
        assert_eq!(leading_spike_set(&g, 0.05).unwrap().len(), 5);
        assert_eq!(leading_spike_set(&g, 0.4).unwrap().len(), 40);
    }
}
