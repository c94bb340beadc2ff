//! Control problem definition: coefficients, control set and horizon.

mod coefficient;
mod config;
mod validate;

pub use coefficient::{
    eval_coefficient, eval_derivatives, DerivativeBundle, FunctionJet, MomentCoupledFunction, Role,
    ShapedValue, VarLayout, MAX_BODY_DEGREE,
};
pub use config::{load_fixture, parse_fixture, Fixture};
pub use validate::{validate_problem, ProbeBox, Thresholds, ValidationEntry, ValidationReport};

use crate::error::{check_dim, invalid, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// State, noise and control dimensions `(n, d, k)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub state: usize,
    pub noise: usize,
    pub control: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlKind {
    Finite,
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
        grid: Vec<usize>,
    },
}

/// Control set `U` together with the finite grid on which "for all v in U"
/// is checked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSet {
    dim: usize,
    kind: ControlKind,
    points: Vec<Vec<f64>>,
}

impl ControlSet {
    pub fn finite(points: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = points.first() else {
            return invalid("control set is empty");
        };
        let dim = first.len();
        for p in &points {
            check_dim("control point", dim, p.len())?;
            if p.iter().any(|x| !x.is_finite()) {
                return invalid("control point is not finite");
            }
        }
        Ok(ControlSet {
            dim,
            kind: ControlKind::Finite,
            points,
        })
    }

    /// Box `[lo, hi]` evaluated on a tensor grid with `grid[i]` points per axis.
    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>, grid: Vec<usize>) -> Result<Self> {
        let dim = lo.len();
        check_dim("box upper corner", dim, hi.len())?;
        check_dim("box grid", dim, grid.len())?;
        if dim == 0 {
            return invalid("control box has no axes");
        }
        for i in 0..dim {
            if !(lo[i].is_finite() && hi[i].is_finite()) || lo[i] > hi[i] {
                return invalid("control box bounds are invalid");
            }
            if grid[i] == 0 {
                return invalid("control box grid is empty");
            }
        }
        let axes: Vec<Vec<f64>> = (0..dim)
            .map(|i| {
                let g = grid[i];
                (0..g)
                    .map(|j| {
                        if g == 1 {
                            0.5 * (lo[i] + hi[i])
                        } else {
                            lo[i] + (hi[i] - lo[i]) * j as f64 / (g - 1) as f64
                        }
                    })
                    .collect()
            })
            .collect();
        let mut points = vec![Vec::new()];
        for axis in &axes {
            let mut next = Vec::with_capacity(points.len() * axis.len());
            for p in &points {
                for &a in axis {
                    let mut q = p.clone();
                    q.push(a);
                    next.push(q);
                }
            }
            points = next;
        }
        Ok(ControlSet {
            dim,
            kind: ControlKind::Box { lo, hi, grid },
            points,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &ControlKind {
        &self.kind
    }

    /// Evaluation grid.
    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        if v.len() != self.dim {
            return false;
        }
        match &self.kind {
            ControlKind::Finite => self
                .points
                .iter()
                .any(|p| p.iter().zip(v).all(|(a, b)| (a - b).abs() <= 1e-12)),
            ControlKind::Box { lo, hi, .. } => {
                (0..self.dim).all(|i| v[i] >= lo[i] - 1e-12 && v[i] <= hi[i] + 1e-12)
            }
        }
    }

    /// Same set, different evaluation grid; every point must lie in `U`.
    pub fn with_grid(&self, points: Vec<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return invalid("control grid override is empty");
        }
        for p in &points {
            if !self.contains(p) {
                return invalid(format!("control grid point {p:?} is outside U"));
            }
        }
        Ok(ControlSet {
            dim: self.dim,
            kind: self.kind.clone(),
            points,
        })
    }
}

/// The tuple `(b, sigma, h, Phi, U, x0, T)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    pub dims: Dims,
    pub drift: MomentCoupledFunction,
    pub diffusion: MomentCoupledFunction,
    pub running_cost: MomentCoupledFunction,
    pub terminal_cost: MomentCoupledFunction,
    pub controls: ControlSet,
    pub x0: Vec<f64>,
    pub horizon: f64,
}

impl ProblemSpec {
    pub fn new(
        drift: MomentCoupledFunction,
        diffusion: MomentCoupledFunction,
        running_cost: MomentCoupledFunction,
        terminal_cost: MomentCoupledFunction,
        controls: ControlSet,
        x0: Vec<f64>,
        horizon: f64,
    ) -> Result<Self> {
        let n = x0.len();
        let k = controls.dim();
        let (dr, dc) = drift.shape();
        check_dim("drift rows", n, dr)?;
        check_dim("drift columns", 1, dc)?;
        let (sr, d) = diffusion.shape();
        check_dim("diffusion rows", n, sr)?;
        if d == 0 {
            return invalid("noise dimension must be positive");
        }
        check_dim("running cost shape", 1, running_cost.components())?;
        check_dim("terminal cost shape", 1, terminal_cost.components())?;
        for (name, f, role) in [
            ("drift", &drift, Role::Drift),
            ("diffusion", &diffusion, Role::Diffusion),
            ("running cost", &running_cost, Role::RunningCost),
            ("terminal cost", &terminal_cost, Role::TerminalCost),
        ] {
            if f.role() != role {
                return invalid(format!("{name} has role {:?}", f.role()));
            }
            check_dim(&format!("{name} state dimension"), n, f.layout().state)?;
        }
        check_dim("drift control dimension", k, drift.layout().controls)?;
        check_dim(
            "diffusion control dimension",
            k,
            diffusion.layout().controls,
        )?;
        check_dim(
            "running cost control dimension",
            k,
            running_cost.layout().controls,
        )?;
        if !(horizon.is_finite() && horizon > 0.0) {
            return invalid("horizon must be positive");
        }
        if x0.iter().any(|x| !x.is_finite()) {
            return invalid("initial state is not finite");
        }
        Ok(ProblemSpec {
            dims: Dims {
                state: n,
                noise: d,
                control: k,
            },
            drift,
            diffusion,
            running_cost,
            terminal_cost,
            controls,
            x0,
            horizon,
        })
    }

    /// Stable content hash used in output metadata.
    pub fn spec_hash(&self) -> String {
        let digest = Sha256::digest(format!("{self:?}").as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
