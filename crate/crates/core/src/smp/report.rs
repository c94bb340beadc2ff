//! Full first- and second-order check of a candidate control.

use super::{
    detect_singular_region, first_order_residual, hamiltonian_gap, pairing_samples, Direction,
    ExpansionAudit, FirstOrderResult, GapTable, KnotSeries, SingularRegion, Witness, ROUNDOFF,
};
use crate::adjoint::{
    solve_first_order, solve_second_order, AdjointSolution, QPairing, RegressionBasis,
};
use crate::copy::{CopyIndex, CopyMode};
use crate::error::{Error, Result};
use crate::forward::{simulate, ControlProcess, ParticlePathEnsemble, TimeGrid};
use crate::linalg::{mean_se, norm_sq};
use crate::linearize::control_differs;
use crate::problem::ProblemSpec;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckConfig {
    pub particles: usize,
    pub steps: usize,
    pub seed: u64,
    /// Replaces the control set's grid; points must lie in the control set.
    pub control_grid: Option<Vec<Vec<f64>>>,
    /// Absolute singularity tolerance; `None` uses three standard errors.
    pub tol_sing: Option<f64>,
    /// Extra points for the second-order table only, e.g. off-grid values
    /// for the quadratic-shape check. Not required to lie in the control set.
    pub extra_points: Vec<Vec<f64>>,
    pub copies: CopyMode,
    pub basis: RegressionBasis,
    pub pairing: QPairing,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            particles: 10_000,
            steps: 100,
            seed: 42,
            control_grid: None,
            tol_sing: None,
            extra_points: Vec::new(),
            copies: CopyMode::Full,
            basis: RegressionBasis::default(),
            pairing: QPairing::Symmetric,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub fixture: String,
    pub particles: usize,
    pub steps: usize,
    pub seed: u64,
    pub horizon: f64,
    pub spec_hash: String,
    pub control_grid: Vec<Vec<f64>>,
    pub candidate: Option<Vec<f64>>,
    pub tol_sing: Option<f64>,
    pub copies: CopyMode,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjointSummary {
    /// `max_t E|p_t|`
    pub max_mean_abs_p: f64,
    /// `max_t E|q_t|` (Frobenius)
    pub max_mean_abs_q: f64,
    /// Particle mean of `P` per knot (first entry for matrices).
    pub mean_p: Vec<f64>,
    pub mean_big_p: Vec<f64>,
    pub max_mean_abs_big_q: f64,
    pub max_asymmetry: f64,
    /// Steps whose mean regression residual exceeds three standard errors.
    pub martingale_exceedances: usize,
}

impl AdjointSummary {
    pub fn new(sol: &AdjointSolution) -> Self {
        let mean_norm = |a: &crate::paths::KnotArray, m: usize| -> f64 {
            (0..a.particles())
                .map(|j| norm_sq(a.get(m, j)).sqrt())
                .sum::<f64>()
                / a.particles() as f64
        };
        let first_mean = |a: &crate::paths::KnotArray, m: usize| -> f64 {
            (0..a.particles()).map(|j| a.get(m, j)[0]).sum::<f64>() / a.particles() as f64
        };
        let p = &sol.first.p;
        let q = &sol.first.q;
        let bp = &sol.second.big_p;
        let bq = &sol.second.big_q;
        let maxk = |a: &crate::paths::KnotArray| {
            (0..a.knots()).map(|m| mean_norm(a, m)).fold(0.0, f64::max)
        };
        AdjointSummary {
            max_mean_abs_p: maxk(p),
            max_mean_abs_q: maxk(q),
            mean_p: (0..p.knots()).map(|m| first_mean(p, m)).collect(),
            mean_big_p: (0..bp.knots()).map(|m| first_mean(bp, m)).collect(),
            max_mean_abs_big_q: maxk(bq),
            max_asymmetry: sol.second.max_asymmetry,
            martingale_exceedances: sol
                .first
                .diagnostics
                .iter()
                .chain(&sol.second.diagnostics)
                .filter(|d| !d.martingale_ok(3.0))
                .count(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderSection {
    pub tables: Vec<GapTable>,
    pub result: FirstOrderResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionTable {
    pub v: Vec<f64>,
    /// Part of the checked control grid (extra points are diagnostic).
    pub on_grid: bool,
    pub series: KnotSeries,
    /// `E int value dt`
    pub integral: f64,
    pub integral_stderr: f64,
    /// Share of particle-level values below zero, over all knots.
    pub negative_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticShape {
    /// Control offsets `v - u` and time-integrated condition values.
    pub offsets: Vec<f64>,
    pub values: Vec<f64>,
    /// Least-squares `c` in `value = c (v - u)^2`.
    pub c: f64,
    pub r_squared: f64,
    /// Largest `|value(-w) - value(w)| / |value(w)|` over mirrored pairs.
    pub asymmetry: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderSection {
    pub tables: Vec<ConditionTable>,
    /// `max (-value)_+` over the singular region.
    pub violation: f64,
    pub witness: Option<Witness>,
    /// Every knot and point, not only the singular region, is `>= -3 se`.
    pub nonnegative_everywhere: bool,
    pub shape: Option<QuadraticShape>,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SMPReport {
    pub meta: ReportMeta,
    pub adjoint: AdjointSummary,
    pub first_order: FirstOrderSection,
    pub singular_region: SingularRegion,
    pub second_order: SecondOrderSection,
    pub expansion_audit: Option<ExpansionAudit>,
}

impl SMPReport {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

/// Everything produced by [`check_candidate`].
pub struct CheckRun {
    pub report: SMPReport,
    pub ensemble: ParticlePathEnsemble,
    pub adjoint: AdjointSolution,
}

fn quadratic_shape(tables: &[ConditionTable], u: &[f64]) -> Option<QuadraticShape> {
    if u.len() != 1 {
        return None;
    }
    let mut pts: Vec<(f64, f64)> = tables
        .iter()
        .filter(|t| t.v.len() == 1 && t.v[0] != u[0])
        .map(|t| (t.v[0] - u[0], t.integral))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let offsets: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let values: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let sxx: f64 = offsets.iter().map(|w| w.powi(4)).sum();
    let sxy: f64 = offsets.iter().zip(&values).map(|(w, y)| w * w * y).sum();
    let c = sxy / sxx;
    let ybar = values.iter().sum::<f64>() / values.len() as f64;
    let ss_res: f64 = offsets
        .iter()
        .zip(&values)
        .map(|(w, y)| (y - c * w * w).powi(2))
        .sum();
    let ss_tot: f64 = values.iter().map(|y| (y - ybar).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res <= 1e-24 {
        1.0
    } else {
        0.0
    };
    let mut asymmetry: f64 = 0.0;
    for (w, y) in &pts {
        if *w > 0.0 {
            if let Some((_, z)) = pts.iter().find(|(x, _)| (x + w).abs() < 1e-12) {
                let scale = y.abs().max(z.abs());
                if scale > 0.0 {
                    asymmetry = asymmetry.max((y - z).abs() / scale);
                }
            }
        }
    }
    Some(QuadraticShape {
        pass: r_squared >= 0.99 && asymmetry <= 0.1 && c >= 0.0,
        offsets,
        values,
        c,
        r_squared,
        asymmetry,
    })
}

/// Simulates under `u`, solves both adjoints and evaluates the first- and
/// second-order conditions on the control grid.
pub fn check_candidate(
    spec: &ProblemSpec,
    fixture: &str,
    u: &ControlProcess,
    cfg: &CheckConfig,
) -> Result<CheckRun> {
    let controls = match &cfg.control_grid {
        Some(points) => spec.controls.with_grid(points.clone())?,
        None => spec.controls.clone(),
    };
    let grid_points = controls.points().to_vec();
    if grid_points.is_empty() {
        return Err(Error::InvalidInput("empty control grid".into()));
    }
    let grid = TimeGrid::new(spec.horizon, cfg.steps)?;
    let ens = simulate(spec, u, &grid, cfg.particles, cfg.seed)?;
    let copies = CopyIndex::new(cfg.copies, cfg.particles)?;
    let first = solve_first_order(spec, &ens, u, &cfg.basis, &copies)?;
    let second = solve_second_order(spec, &ens, u, &first, &cfg.basis, &copies, cfg.pairing)?;
    let adjoint = AdjointSolution { first, second };
    let dt = grid.dt();

    let mut gaps = Vec::new();
    let mut is_candidate = Vec::new();
    for v in &grid_points {
        let vp = ControlProcess::constant(v.clone());
        gaps.push(GapTable {
            v: v.clone(),
            gap: hamiltonian_gap(spec, &ens, u, &adjoint.first, &vp)?,
        });
        is_candidate.push((0..grid.steps()).all(|m| !control_differs(u, &vp, m, cfg.particles)));
    }
    let first_result = first_order_residual(&gaps)?;
    let region = detect_singular_region(&gaps, cfg.tol_sing, &is_candidate);

    let mut tables = Vec::new();
    let mut points: Vec<(Vec<f64>, bool)> = grid_points.iter().map(|v| (v.clone(), true)).collect();
    points.extend(cfg.extra_points.iter().map(|v| (v.clone(), false)));
    for (v, on_grid) in points {
        if v.len() != spec.dims.control {
            return Err(Error::DimensionMismatch {
                what: "second-order control point".into(),
                expected: spec.dims.control,
                got: v.len(),
            });
        }
        let vp = ControlProcess::constant(v.clone());
        let mut negative = 0usize;
        let samples: Vec<Vec<f64>> = (0..grid.steps())
            .map(|m| {
                let s = pairing_samples(spec, &ens, u, &vp, &adjoint, Direction::Drift, &copies, m);
                negative += s.iter().filter(|&&x| x < 0.0).count();
                s
            })
            .collect();
        if samples.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("second-order condition".into()));
        }
        let (mean, stderr): (Vec<f64>, Vec<f64>) = samples.iter().map(|s| mean_se(s)).unzip();
        let series = KnotSeries {
            times: (0..grid.steps()).map(|m| grid.knot(m)).collect(),
            mean,
            stderr,
        };
        let (integral, integral_stderr) = series.integral(dt);
        tables.push(ConditionTable {
            v,
            on_grid,
            series,
            integral,
            integral_stderr,
            negative_fraction: negative as f64 / (grid.steps() * cfg.particles) as f64,
        });
    }

    let mut violation: f64 = 0.0;
    let mut witness: Option<(f64, Witness)> = None;
    let mut nonnegative_everywhere = true;
    for (i, tab) in tables.iter().enumerate() {
        for (k, (&val, &se)) in tab.series.mean.iter().zip(&tab.series.stderr).enumerate() {
            let excess = -val - 3.0 * se;
            if excess > ROUNDOFF {
                nonnegative_everywhere = false;
            }
            if !(tab.on_grid && region.contains(k, i)) {
                continue;
            }
            violation = violation.max(-val);
            if excess > ROUNDOFF && witness.as_ref().is_none_or(|w| excess > w.0) {
                witness = Some((
                    excess,
                    Witness {
                        knot: k,
                        time: tab.series.times[k],
                        v: tab.v.clone(),
                        value: val,
                        stderr: se,
                    },
                ));
            }
        }
    }
    let candidate = match u {
        ControlProcess::Constant(c) => Some(c.clone()),
        _ => None,
    };
    let shape = candidate.as_ref().and_then(|c| quadratic_shape(&tables, c));
    let witness = witness.map(|w| w.1);
    let report = SMPReport {
        meta: ReportMeta {
            fixture: fixture.to_string(),
            particles: cfg.particles,
            steps: cfg.steps,
            seed: cfg.seed,
            horizon: spec.horizon,
            spec_hash: spec.spec_hash(),
            control_grid: grid_points,
            candidate,
            tol_sing: cfg.tol_sing,
            copies: cfg.copies,
            note: "conditions are checked on the finite control grid only".into(),
        },
        adjoint: AdjointSummary::new(&adjoint),
        first_order: FirstOrderSection {
            tables: gaps,
            result: first_result,
        },
        singular_region: region,
        second_order: SecondOrderSection {
            pass: witness.is_none(),
            tables,
            violation: violation + 0.0,
            witness,
            nonnegative_everywhere,
            shape,
        },
        expansion_audit: None,
    };
    Ok(CheckRun {
        report,
        ensemble: ens,
        adjoint,
    })
}
