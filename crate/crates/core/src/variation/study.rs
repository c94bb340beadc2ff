//! Monte Carlo order studies for the variation processes.

use super::{
    first_variation, leading_spike_set, partition_spike_set, remainder, second_variation,
    spike_control, transition_matrix, uniform_partition,
};
use crate::copy::{CopyIndex, CopyMode};
use crate::error::{invalid, Result};
use crate::forward::{
    simulate_with_noise, ControlProcess, NoiseField, ParticlePathEnsemble, TimeGrid,
};
use crate::linalg::{linear_fit, matvec, mean_se, norm_sq};
use crate::paths::KnotArray;
use crate::problem::ProblemSpec;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::sync::Arc;

/// Relative level below which a second moment is treated as exact zero.
pub(crate) const ROUNDOFF_FLOOR: f64 = 1e-20;

/// Minimum log-log slope of `E sup |x1|^2` against `d`.
pub const X1_SLOPE_THRESHOLD: f64 = 1.8;
/// Minimum log-log slope of `E sup |x2|^2` against `d`.
pub const X2_SLOPE_THRESHOLD: f64 = 3.6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderStudyConfig {
    /// Spike lengths as fractions of `T`, strictly decreasing.
    pub ladder: Vec<f64>,
    pub particles: usize,
    pub steps: usize,
    pub seed: u64,
    pub copies: CopyMode,
    /// Adds `c d^3` to the `x2` estimate; negative control for the slope test.
    pub x2_injection: Option<f64>,
}

impl Default for OrderStudyConfig {
    fn default() -> Self {
        OrderStudyConfig {
            ladder: vec![0.4, 0.2, 0.1, 0.05],
            particles: 10_000,
            steps: 100,
            seed: 42,
            copies: CopyMode::Full,
            x2_injection: None,
        }
    }
}

/// One line of the convergence table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderRow {
    pub fixture: String,
    pub quantity: String,
    pub d: f64,
    pub estimate: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderStudy {
    pub fixture: String,
    pub rows: Vec<OrderRow>,
    /// `None` when the quantity vanishes identically on every rung.
    pub slope_x1: Option<f64>,
    pub slope_x2: Option<f64>,
    pub remainder_ratios: Vec<f64>,
    pub remainder_ratio_stderr: Vec<f64>,
    pub remainder_decreasing: bool,
    pub pass_x1: bool,
    pub pass_x2: bool,
    pub pass: bool,
}

fn check_ladder(ladder: &[f64], min_len: usize, upper: f64) -> Result<()> {
    if ladder.len() < min_len {
        return invalid(format!("ladder needs at least {min_len} values"));
    }
    if ladder.iter().any(|&x| !(x > 0.0 && x < upper)) {
        return invalid("ladder values must lie in (0, 1)");
    }
    if ladder.windows(2).any(|w| w[1] >= w[0]) {
        return invalid("ladder must be strictly decreasing");
    }
    Ok(())
}

/// Particle values of `sup_t |z_t|^2`.
fn sup_sq(a: &KnotArray) -> Vec<f64> {
    a.pathwise_sup(norm_sq)
}

/// `r_{k+1} <= r_k + sqrt(se_k^2 + se_{k+1}^2)` for every rung.
pub(crate) fn decreasing_within_se(values: &[f64], se: &[f64]) -> bool {
    values
        .windows(2)
        .zip(se.windows(2))
        .all(|(v, s)| v[1] <= v[0] + (s[0] * s[0] + s[1] * s[1]).sqrt())
}

fn log_slope(d: &[f64], est: &[f64]) -> Option<f64> {
    if est.iter().any(|&e| e <= 0.0) {
        return None;
    }
    let lx: Vec<f64> = d.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = est.iter().map(|x| x.ln()).collect();
    Some(linear_fit(&lx, &ly).0)
}

/// Order study of the variations: spikes on `[0, d)` with `d` along the ladder.
pub fn order_study(
    spec: &ProblemSpec,
    fixture: &str,
    u: &ControlProcess,
    v: &ControlProcess,
    cfg: &OrderStudyConfig,
) -> Result<OrderStudy> {
    check_ladder(&cfg.ladder, 2, 1.0 + f64::EPSILON)?;
    let grid = TimeGrid::new(spec.horizon, cfg.steps)?;
    let noise = Arc::new(NoiseField::generate(
        cfg.seed,
        &grid,
        cfg.particles,
        spec.dims.noise,
    ));
    let ens_u = simulate_with_noise(spec, u, &grid, noise.clone())?;
    let copies = CopyIndex::new(cfg.copies, cfg.particles)?;
    let scale = 1.0 + mean_se(&sup_sq_states(&ens_u)).0;
    let floor = ROUNDOFF_FLOOR * scale;

    let mut rows = Vec::new();
    let mut ds = Vec::new();
    let (mut e1, mut e2) = (Vec::new(), Vec::new());
    let (mut ratios, mut ratio_se) = (Vec::new(), Vec::new());
    for &frac in &cfg.ladder {
        let steps = leading_spike_set(&grid, frac * spec.horizon)?;
        let d = steps.len() as f64 * grid.dt();
        let vhat = spike_control(u, v, &steps, &grid)?;
        let ens_v = simulate_with_noise(spec, &vhat, &grid, noise.clone())?;
        let x1 = first_variation(spec, &ens_u, u, &vhat, &copies)?;
        let x2 = second_variation(spec, &ens_u, u, &vhat, &x1, &copies)?;
        let xs = remainder(&ens_v, &ens_u, &x1, &x2)?;
        let (m1, s1) = mean_se(&sup_sq(&x1));
        let (mut m2, s2) = mean_se(&sup_sq(&x2));
        if let Some(c) = cfg.x2_injection {
            m2 += c * d.powi(3);
        }
        let (mut ms, mut ss) = mean_se(&sup_sq(&xs));
        if ms <= floor {
            ms = 0.0;
            ss = 0.0;
        }
        let d4 = d.powi(4);
        for (q, e, s) in [
            ("x1_sup_sq", m1, s1),
            ("x2_sup_sq", m2, s2),
            ("remainder_sup_sq", ms, ss),
            ("remainder_ratio", ms / d4, ss / d4),
        ] {
            rows.push(OrderRow {
                fixture: fixture.to_string(),
                quantity: q.to_string(),
                d,
                estimate: e,
                stderr: s,
            });
        }
        ds.push(d);
        e1.push(if m1 <= floor { 0.0 } else { m1 });
        e2.push(if m2 <= floor { 0.0 } else { m2 });
        ratios.push(ms / d4);
        ratio_se.push(ss / d4);
    }
    let all_zero = |e: &[f64]| e.iter().all(|&x| x == 0.0);
    let slope_x1 = if all_zero(&e1) {
        None
    } else {
        log_slope(&ds, &e1)
    };
    let slope_x2 = if all_zero(&e2) {
        None
    } else {
        log_slope(&ds, &e2)
    };
    let pass_x1 = all_zero(&e1) || slope_x1.is_some_and(|s| s >= X1_SLOPE_THRESHOLD);
    let pass_x2 = all_zero(&e2) || slope_x2.is_some_and(|s| s >= X2_SLOPE_THRESHOLD);
    let remainder_decreasing = decreasing_within_se(&ratios, &ratio_se);
    Ok(OrderStudy {
        fixture: fixture.to_string(),
        rows,
        slope_x1,
        slope_x2,
        remainder_ratios: ratios,
        remainder_ratio_stderr: ratio_se,
        remainder_decreasing,
        pass_x1,
        pass_x2,
        pass: pass_x1 && pass_x2 && remainder_decreasing,
    })
}

fn sup_sq_states(ens: &ParticlePathEnsemble) -> Vec<f64> {
    (0..ens.particles())
        .map(|j| {
            (0..=ens.grid().steps())
                .map(|m| norm_sq(ens.state(m, j)))
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Writes `fixture,quantity,d,estimate,stderr`.
pub fn write_convergence_csv<W: Write>(rows: &[OrderRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_convergence_csv<R: std::io::Read>(input: R) -> Result<Vec<OrderRow>> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikeLimitConfig {
    /// Spike densities `rho`, strictly decreasing in (0, 1).
    pub ladder: Vec<f64>,
    pub particles: usize,
    pub steps: usize,
    pub seed: u64,
    /// Steps per partition cell for each rung; defaults to cells shrinking
    /// proportionally to `rho`.
    pub cell_steps: Option<Vec<usize>>,
    pub copies: CopyMode,
}

impl Default for SpikeLimitConfig {
    fn default() -> Self {
        SpikeLimitConfig {
            ladder: vec![0.4, 0.2, 0.1, 0.05],
            particles: 10_000,
            steps: 480,
            seed: 42,
            cell_steps: None,
            copies: CopyMode::Full,
        }
    }
}

/// Cells of `rho / rho_min * ceil(1 / rho_min)` steps: the smallest rung gets
/// one spike step per cell and cells shrink in proportion to `rho`.
pub fn proportional_cells(ladder: &[f64]) -> Vec<usize> {
    let rho_min = ladder.iter().cloned().fold(f64::INFINITY, f64::min);
    let base = (1.0 / rho_min).ceil();
    ladder
        .iter()
        .map(|r| ((r / rho_min) * base).round().max(1.0) as usize)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikeLimitRung {
    pub rho: f64,
    pub realized_rho: f64,
    pub cell_steps: usize,
    /// `sup_t E |x1^{vhat} - rho x1^v|^2 / rho^2`
    pub limit_ratio: f64,
    pub limit_stderr: f64,
    /// `sup_t E |x1^{vhat} - Phi int Psi Delta b(vhat)|^2 / rho^2`
    pub representation_ratio: f64,
    pub representation_stderr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikeLimitStudy {
    pub rungs: Vec<SpikeLimitRung>,
    /// Inverse-consistency of the transition matrices used.
    pub transition_defect: f64,
    /// Last rung below 10% of the first, for each ratio.
    pub limit_vanishes: bool,
    pub representation_vanishes: bool,
}

/// `sup_m` of the particle mean of `f`, with the standard error at the
/// maximizing knot.
fn sup_of_mean(knots: usize, particles: usize, f: impl Fn(usize, usize) -> f64) -> (f64, f64) {
    let mut best = (0.0, 0.0);
    let mut vals = vec![0.0; particles];
    for m in 0..knots {
        for (j, v) in vals.iter_mut().enumerate() {
            *v = f(m, j);
        }
        let (mean, se) = mean_se(&vals);
        if mean > best.0 {
            best = (mean, se);
        }
    }
    best
}

/// `b(X^j, vhat^j) - b(X^j, u^j)` per step and particle.
fn drift_difference(
    spec: &ProblemSpec,
    ens: &ParticlePathEnsemble,
    u: &ControlProcess,
    vhat: &ControlProcess,
) -> KnotArray {
    let n = spec.dims.state;
    let grid = ens.grid();
    let mut out = KnotArray::zeros(grid.steps(), ens.particles(), n);
    let mut bu = vec![0.0; n];
    let mut bv = vec![0.0; n];
    for m in 0..grid.steps() {
        let states = ens.knot_states(m);
        let mom = spec.drift.moments(states);
        let t = grid.knot(m);
        for j in 0..ens.particles() {
            let x = ens.state(m, j);
            spec.drift.eval_at(t, x, &mom, u.value(m, j), &mut bu);
            spec.drift.eval_at(t, x, &mom, vhat.value(m, j), &mut bv);
            for (o, (a, b)) in out.get_mut(m, j).iter_mut().zip(bv.iter().zip(&bu)) {
                *o = a - b;
            }
        }
    }
    out
}

/// Partition-spike study of `x1^{vhat} / rho` and of its transition-matrix
/// representation as `rho` shrinks.
pub fn spike_limit_study(
    spec: &ProblemSpec,
    u: &ControlProcess,
    v: &ControlProcess,
    cfg: &SpikeLimitConfig,
) -> Result<SpikeLimitStudy> {
    check_ladder(&cfg.ladder, 2, 1.0)?;
    let cells = match &cfg.cell_steps {
        Some(c) if c.len() == cfg.ladder.len() => c.clone(),
        Some(_) => return invalid("one cell size per ladder rung is required"),
        None => proportional_cells(&cfg.ladder),
    };
    let n = spec.dims.state;
    let grid = TimeGrid::new(spec.horizon, cfg.steps)?;
    let noise = Arc::new(NoiseField::generate(
        cfg.seed,
        &grid,
        cfg.particles,
        spec.dims.noise,
    ));
    let ens_u = simulate_with_noise(spec, u, &grid, noise)?;
    let copies = CopyIndex::new(cfg.copies, cfg.particles)?;
    let x1_full = first_variation(spec, &ens_u, u, v, &copies)?;
    let tr = transition_matrix(spec, &ens_u, u, &copies)?;
    let np = cfg.particles;
    let dt = grid.dt();

    let mut rungs = Vec::new();
    for (&rho, &cell) in cfg.ladder.iter().zip(&cells) {
        let partition = uniform_partition(&grid, cell)?;
        let steps = partition_spike_set(&grid, rho, &partition)?;
        let realized = steps.len() as f64 * dt / spec.horizon;
        let vhat = spike_control(u, v, &steps, &grid)?;
        let x1 = first_variation(spec, &ens_u, u, &vhat, &copies)?;
        let (limit, limit_se) = sup_of_mean(grid.steps() + 1, np, |m, j| {
            let a = x1.get(m, j);
            let b = x1_full.get(m, j);
            (0..n).map(|i| (a[i] - realized * b[i]).powi(2)).sum()
        });

        // R_m = Phi_m sum_{i<m} Psi_{i+1} Delta b_i dt
        let db = drift_difference(spec, &ens_u, u, &vhat);
        let mut rep = KnotArray::zeros(grid.steps() + 1, np, n);
        let mut acc = vec![0.0; np * n];
        let mut tmp = vec![0.0; n];
        for m in 0..grid.steps() {
            for j in 0..np {
                matvec(tr.psi.get(m + 1, j), db.get(m, j), n, n, &mut tmp);
                for i in 0..n {
                    acc[j * n + i] += tmp[i] * dt;
                }
                matvec(
                    tr.phi.get(m + 1, j),
                    &acc[j * n..(j + 1) * n],
                    n,
                    n,
                    &mut tmp,
                );
                rep.get_mut(m + 1, j).copy_from_slice(&tmp);
            }
        }
        let (repr, repr_se) = sup_of_mean(grid.steps() + 1, np, |m, j| {
            let a = x1.get(m, j);
            let b = rep.get(m, j);
            (0..n).map(|i| (a[i] - b[i]).powi(2)).sum()
        });
        let r2 = realized * realized;
        rungs.push(SpikeLimitRung {
            rho,
            realized_rho: realized,
            cell_steps: cell,
            limit_ratio: limit / r2,
            limit_stderr: limit_se / r2,
            representation_ratio: repr / r2,
            representation_stderr: repr_se / r2,
        });
    }
    let first = &rungs[0];
    let last = rungs.last().unwrap();
    Ok(SpikeLimitStudy {
        transition_defect: tr.defect,
        limit_vanishes: last.limit_ratio <= 0.1 * first.limit_ratio,
        representation_vanishes: last.representation_ratio <= 0.1 * first.representation_ratio,
        rungs,
    })
}
