//! Randomized spot checks of the regularity assumptions on the coefficients.

use super::{eval_coefficient, eval_derivatives, ControlKind, MomentCoupledFunction, ProblemSpec};
use crate::error::{invalid, Result};
use crate::linalg::norm_sq;
use crate::measure::EmpiricalMeasure;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Region sampled by the probes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeBox {
    pub x_lo: f64,
    pub x_hi: f64,
    /// Atoms in each probe measure.
    pub atoms: usize,
    /// Step used for the local Lipschitz quotient.
    pub delta: f64,
    pub seed: u64,
}

impl Default for ProbeBox {
    fn default() -> Self {
        ProbeBox {
            x_lo: -3.0,
            x_hi: 3.0,
            atoms: 8,
            delta: 1e-3,
            seed: 0,
        }
    }
}

/// Warn levels for the observed maxima.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub lipschitz: f64,
    pub derivative: f64,
    pub growth: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            lipschitz: 10.0,
            derivative: 10.0,
            growth: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationEntry {
    pub name: String,
    pub observed: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Always true: probes can reveal violations but never certify the bounds.
    pub spot_check_only: bool,
    pub disclaimer: String,
    pub probes: usize,
    pub entries: Vec<ValidationEntry>,
    pub pass: bool,
}

impl ValidationReport {
    pub fn entry(&self, name: &str) -> Option<&ValidationEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Spot-checks the coefficients with default probe box and thresholds.
pub fn validate_problem(spec: &ProblemSpec, probe_count: usize) -> Result<ValidationReport> {
    validate_problem_with(
        spec,
        probe_count,
        &ProbeBox::default(),
        &Thresholds::default(),
    )
}

#[derive(Default)]
struct Maxima {
    lipschitz: f64,
    d_x: f64,
    d_mu: f64,
    second: f64,
    growth: f64,
}

pub fn validate_problem_with(
    spec: &ProblemSpec,
    probe_count: usize,
    probe: &ProbeBox,
    thresholds: &Thresholds,
) -> Result<ValidationReport> {
    if probe_count == 0 {
        return invalid("probe_count must be at least 1");
    }
    if probe.atoms == 0
        || probe.x_hi.partial_cmp(&probe.x_lo) != Some(std::cmp::Ordering::Greater)
        || probe.delta.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)
    {
        return invalid("degenerate probe box");
    }
    let n = spec.dims.state;
    let mut rng = ChaCha8Rng::seed_from_u64(probe.seed);
    let coeffs: [(&str, &MomentCoupledFunction, bool); 4] = [
        ("drift", &spec.drift, true),
        ("diffusion", &spec.diffusion, true),
        ("running_cost", &spec.running_cost, false),
        ("terminal_cost", &spec.terminal_cost, false),
    ];
    let mut maxima: Vec<Maxima> = (0..4).map(|_| Maxima::default()).collect();

    for _ in 0..probe_count {
        let t = rng.random::<f64>() * spec.horizon;
        let mut draw = || probe.x_lo + (probe.x_hi - probe.x_lo) * rng.random::<f64>();
        let x: Vec<f64> = (0..n).map(|_| draw()).collect();
        let atoms: Vec<f64> = (0..n * probe.atoms).map(|_| draw()).collect();
        let v = random_control(spec, &mut rng);
        let mut dir: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
        let norm = norm_sq(&dir).sqrt().max(1e-12);
        dir.iter_mut().for_each(|e| *e /= norm);

        let mu = EmpiricalMeasure::from_flat(n, atoms.clone(), None)?;
        // shifting x and every atom by delta*dir moves both arguments by delta
        let x_sh: Vec<f64> = x
            .iter()
            .zip(&dir)
            .map(|(a, e)| a + probe.delta * e)
            .collect();
        let mu_sh = mu.map(|y| {
            y.iter()
                .zip(&dir)
                .map(|(a, e)| a + probe.delta * e)
                .collect()
        })?;

        for (slot, (_, f, _)) in coeffs.iter().enumerate() {
            let vv: &[f64] = if f.layout().controls == 0 { &[] } else { &v };
            let a = eval_coefficient(f, t, &x, &mu, vv)?;
            let b = eval_coefficient(f, t, &x_sh, &mu_sh, vv)?;
            let diff: f64 = a
                .data
                .iter()
                .zip(&b.data)
                .map(|(p, q)| (p - q).powi(2))
                .sum();
            let m = &mut maxima[slot];
            m.lipschitz = m.lipschitz.max(diff.sqrt() / probe.delta);

            for j in 0..probe.atoms {
                let y = mu.sample(j);
                let ybar = mu.sample((j + 1) % probe.atoms);
                let bundles = eval_derivatives(f, t, &x, &mu, vv, y, ybar)?;
                let mut dx = 0.0;
                let mut dmu = 0.0;
                let mut second = 0.0;
                for d in &bundles {
                    dx += norm_sq(&d.f_x);
                    dmu += norm_sq(&d.f_mu);
                    second = f64::max(
                        second,
                        [&d.f_xx, &d.f_xmu, &d.f_ymu, &d.f_mumu]
                            .iter()
                            .map(|m| norm_sq(m).sqrt())
                            .fold(0.0, f64::max),
                    );
                }
                m.d_x = m.d_x.max(dx.sqrt());
                m.d_mu = m.d_mu.max(dmu.sqrt());
                m.second = m.second.max(second);
                let scale = 1.0 + norm_sq(&x).sqrt() + norm_sq(y).sqrt() + norm_sq(vv).sqrt();
                m.growth = m.growth.max((dx + dmu).sqrt() / scale);
            }
        }
    }

    let mut entries = Vec::new();
    let mut push = |name: String, observed: f64, threshold: f64| {
        entries.push(ValidationEntry {
            name,
            observed,
            threshold,
            pass: observed <= threshold,
        });
    };
    for ((name, _, dynamics), m) in coeffs.iter().zip(&maxima) {
        if *dynamics {
            push(
                format!("{name}.lipschitz"),
                m.lipschitz,
                thresholds.lipschitz,
            );
            push(format!("{name}.d_x"), m.d_x, thresholds.derivative);
            push(format!("{name}.d_mu"), m.d_mu, thresholds.derivative);
        } else {
            push(format!("{name}.growth"), m.growth, thresholds.growth);
        }
        push(format!("{name}.second"), m.second, thresholds.derivative);
    }
    let pass = entries.iter().all(|e| e.pass);
    Ok(ValidationReport {
        spot_check_only: true,
        disclaimer: "randomized spot check inside the probe box; not a proof of the \
                     Lipschitz and growth assumptions"
            .to_string(),
        probes: probe_count,
        entries,
        pass,
    })
}

fn random_control(spec: &ProblemSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match spec.controls.kind() {
        ControlKind::Finite => {
            let pts = spec.controls.points();
            pts[rng.random_range(0..pts.len())].clone()
        }
        ControlKind::Box { lo, hi, .. } => lo
            .iter()
            .zip(hi)
            .map(|(l, h)| l + (h - l) * rng.random::<f64>())
            .collect(),
    }
}
