//! Interacting-particle Euler-Maruyama simulation of the state equation.

use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg::norm_sq;
use crate::measure::EmpiricalMeasure;
use crate::problem::{ControlSet, ProblemSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::sync::Arc;

/// Uniform grid `t_m = m T / M`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return invalid("horizon must be positive");
        }
        if steps == 0 {
            return invalid("time grid needs at least one step");
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn knot(&self, m: usize) -> f64 {
        if m == self.steps {
            self.horizon
        } else {
            self.horizon * m as f64 / self.steps as f64
        }
    }
}

/// Stored Brownian increments `dB[m][j][c] ~ N(0, dt)`.
///
/// Draws come from a ChaCha stream keyed by `(seed, step, particle)`; the
/// coordinate is the position within the stream, so any subset of increments
/// can be regenerated independently of evaluation order.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseField {
    steps: usize,
    particles: usize,
    dim: usize,
    seed: u64,
    data: Vec<f64>,
}

impl NoiseField {
    pub fn generate(seed: u64, grid: &TimeGrid, particles: usize, dim: usize) -> Self {
        let steps = grid.steps();
        let scale = grid.dt().sqrt();
        let base = ChaCha8Rng::seed_from_u64(seed);
        let mut data = vec![0.0; steps * particles * dim];
        if dim > 0 {
            data.par_chunks_mut(dim).enumerate().for_each(|(idx, out)| {
                let (m, j) = (idx / particles, idx % particles);
                let mut rng = base.clone();
                rng.set_stream(((m as u64) << 32) | j as u64);
                rng.set_word_pos(0);
                for o in out.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *o = scale * z;
                }
            });
        }
        NoiseField {
            steps,
            particles,
            dim,
            seed,
            data,
        }
    }

    /// Wraps explicit increments, `steps x particles x dim` row-major.
    pub fn from_increments(
        steps: usize,
        particles: usize,
        dim: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        check_dim("noise buffer", steps * particles * dim, data.len())?;
        Ok(NoiseField {
            steps,
            particles,
            dim,
            seed: 0,
            data,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn increment(&self, m: usize, j: usize) -> &[f64] {
        let o = (m * self.particles + j) * self.dim;
        &self.data[o..o + self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// New field whose particle `j` carries the increments of `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        check_dim("permutation", self.particles, perm.len())?;
        let mut data = Vec::with_capacity(self.data.len());
        for m in 0..self.steps {
            for &p in perm {
                data.extend_from_slice(self.increment(m, p));
            }
        }
        Ok(NoiseField {
            data,
            ..self.clone()
        })
    }
}

/// Control values `v[m][j]`, one per step and particle.
#[derive(Clone, Debug, PartialEq)]
pub enum ControlProcess {
    Constant(Vec<f64>),
    /// `steps x particles x dim` row-major.
    Table {
        steps: usize,
        particles: usize,
        dim: usize,
        values: Arc<Vec<f64>>,
    },
    /// `alternative` on flagged steps, `base` elsewhere.
    Switched {
        base: Arc<ControlProcess>,
        alternative: Arc<ControlProcess>,
        mask: Arc<Vec<bool>>,
    },
}

impl ControlProcess {
    pub fn constant(v: Vec<f64>) -> Self {
        ControlProcess::Constant(v)
    }

    pub fn table(steps: usize, particles: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        check_dim("control table", steps * particles * dim, values.len())?;
        Ok(ControlProcess::Table {
            steps,
            particles,
            dim,
            values: Arc::new(values),
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            ControlProcess::Constant(v) => v.len(),
            ControlProcess::Table { dim, .. } => *dim,
            ControlProcess::Switched { base, .. } => base.dim(),
        }
    }

    pub fn value(&self, m: usize, j: usize) -> &[f64] {
        match self {
            ControlProcess::Constant(v) => v,
            ControlProcess::Table {
                particles,
                dim,
                values,
                ..
            } => {
                let o = (m * particles + j) * dim;
                &values[o..o + dim]
            }
            ControlProcess::Switched {
                base,
                alternative,
                mask,
            } => {
                if mask[m] {
                    alternative.value(m, j)
                } else {
                    base.value(m, j)
                }
            }
        }
    }

    /// Checks shape against a grid and ensemble size, and values against `U`.
    pub fn validate(
        &self,
        grid: &TimeGrid,
        particles: usize,
        set: Option<&ControlSet>,
    ) -> Result<()> {
        match self {
            ControlProcess::Constant(_) => {}
            ControlProcess::Table {
                steps,
                particles: p,
                ..
            } => {
                check_dim("control steps", grid.steps(), *steps)?;
                check_dim("control particles", particles, *p)?;
            }
            ControlProcess::Switched {
                base,
                alternative,
                mask,
            } => {
                check_dim("switch mask", grid.steps(), mask.len())?;
                check_dim(
                    "alternative control dimension",
                    base.dim(),
                    alternative.dim(),
                )?;
                base.validate(grid, particles, None)?;
                alternative.validate(grid, particles, None)?;
            }
        }
        if let Some(set) = set {
            check_dim("control dimension", set.dim(), self.dim())?;
            let particle_range = if self.is_particle_uniform() {
                1
            } else {
                particles
            };
            for m in 0..grid.steps() {
                for j in 0..particle_range {
                    let v = self.value(m, j);
                    if !set.contains(v) {
                        return invalid(format!(
                            "control value {v:?} at step {m}, particle {j} is outside U"
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    fn is_particle_uniform(&self) -> bool {
        match self {
            ControlProcess::Constant(_) => true,
            ControlProcess::Table { .. } => false,
            ControlProcess::Switched {
                base, alternative, ..
            } => base.is_particle_uniform() && alternative.is_particle_uniform(),
        }
    }
}

/// `N` particle trajectories on a grid, with the noise that drove them.
#[derive(Clone, Debug)]
pub struct ParticlePathEnsemble {
    grid: TimeGrid,
    particles: usize,
    dim: usize,
    paths: Vec<f64>,
    noise: Arc<NoiseField>,
}

impl ParticlePathEnsemble {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.noise.seed()
    }

    pub fn noise(&self) -> &Arc<NoiseField> {
        &self.noise
    }

    /// Row-major states of every particle at knot `m`.
    pub fn knot_states(&self, m: usize) -> &[f64] {
        let w = self.particles * self.dim;
        &self.paths[m * w..(m + 1) * w]
    }

    pub fn state(&self, m: usize, j: usize) -> &[f64] {
        let o = (m * self.particles + j) * self.dim;
        &self.paths[o..o + self.dim]
    }

    pub fn paths(&self) -> &[f64] {
        &self.paths
    }

    /// Uniform empirical measure of the cloud at knot `m`.
    pub fn measure(&self, m: usize) -> EmpiricalMeasure {
        EmpiricalMeasure::from_flat(self.dim, self.knot_states(m).to_vec(), None)
            .expect("simulated states are finite")
    }
}

/// Simulates the particle system with fresh noise drawn from `seed`.
pub fn simulate(
    spec: &ProblemSpec,
    control: &ControlProcess,
    grid: &TimeGrid,
    particles: usize,
    seed: u64,
) -> Result<ParticlePathEnsemble> {
    let noise = Arc::new(NoiseField::generate(seed, grid, particles, spec.dims.noise));
    simulate_with_noise(spec, control, grid, noise)
}

/// Simulates with stored increments (common random numbers).
pub fn simulate_with_noise(
    spec: &ProblemSpec,
    control: &ControlProcess,
    grid: &TimeGrid,
    noise: Arc<NoiseField>,
) -> Result<ParticlePathEnsemble> {
    let n = spec.dims.state;
    let d = spec.dims.noise;
    let particles = noise.particles();
    if particles < 2 {
        return invalid("simulation needs at least two particles");
    }
    check_dim("noise steps", grid.steps(), noise.steps())?;
    check_dim("noise dimension", d, noise.dim())?;
    check_dim("control dimension", spec.dims.control, control.dim())?;
    control.validate(grid, particles, None)?;

    let dt = grid.dt();
    let w = particles * n;
    let mut paths = vec![0.0; (grid.steps() + 1) * w];
    for j in 0..particles {
        paths[j * n..(j + 1) * n].copy_from_slice(&spec.x0);
    }
    let lay_b = spec.drift.layout();
    let lay_s = spec.diffusion.layout();
    for m in 0..grid.steps() {
        let t = grid.knot(m);
        let (done, rest) = paths.split_at_mut((m + 1) * w);
        let cur = &done[m * w..];
        let next = &mut rest[..w];
        let mb = spec.drift.moments(cur);
        let ms = spec.diffusion.moments(cur);
        let bad = next
            .par_chunks_mut(n)
            .enumerate()
            .map(|(j, out)| {
                let x = &cur[j * n..(j + 1) * n];
                let v = control.value(m, j);
                let mut z = vec![0.0; lay_b.nvars().max(lay_s.nvars())];
                let mut b = vec![0.0; n];
                let mut s = vec![0.0; n * d];
                lay_b.pack(t, x, &mb, v, &mut z);
                spec.drift.eval_packed(&z[..lay_b.nvars()], &mut b);
                lay_s.pack(t, x, &ms, v, &mut z);
                spec.diffusion.eval_packed(&z[..lay_s.nvars()], &mut s);
                let db = noise.increment(m, j);
                let mut ok = true;
                for i in 0..n {
                    let mut xi = x[i] + b[i] * dt;
                    for c in 0..d {
                        xi += s[i * d + c] * db[c];
                    }
                    out[i] = xi;
                    ok &= xi.is_finite();
                }
                if ok {
                    usize::MAX
                } else {
                    j
                }
            })
            .min()
            .unwrap_or(usize::MAX);
        if bad != usize::MAX {
            return Err(Error::BlowUp {
                step: m + 1,
                particle: bad,
            });
        }
    }
    Ok(ParticlePathEnsemble {
        grid: *grid,
        particles,
        dim: n,
        paths,
        noise,
    })
}

/// Empirical check of the eighth-moment bound on the state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    /// `E sup_t |X_t|^8 / (1 + E|X_0|^8 + E |int |v_s| ds|^8)`
    pub ratio: f64,
    pub sup_moment: f64,
    pub initial_moment: f64,
    pub control_moment: f64,
    pub finite: bool,
}

pub fn moment_bound_check(
    ensemble: &ParticlePathEnsemble,
    control: &ControlProcess,
) -> Result<MomentReport> {
    let grid = ensemble.grid();
    let np = ensemble.particles();
    control.validate(grid, np, None)?;
    let dt = grid.dt();
    let mut sup_acc = 0.0;
    let mut ctl_acc = 0.0;
    let mut init_acc = 0.0;
    for j in 0..np {
        init_acc += norm_sq(ensemble.state(0, j)).powi(4);
        let mut sup: f64 = 0.0;
        for m in 0..=grid.steps() {
            sup = sup.max(norm_sq(ensemble.state(m, j)));
        }
        sup_acc += sup.powi(4);
        let int: f64 = (0..grid.steps())
            .map(|m| norm_sq(control.value(m, j)).sqrt() * dt)
            .sum();
        ctl_acc += int.powi(8);
    }
    let sup_moment = sup_acc / np as f64;
    let control_moment = ctl_acc / np as f64;
    let initial_moment = init_acc / np as f64;
    let ratio = sup_moment / (1.0 + initial_moment + control_moment);
    if !ratio.is_finite() {
        return Err(Error::NonFinite("moment report".into()));
    }
    Ok(MomentReport {
        ratio,
        sup_moment,
        initial_moment,
        control_moment,
        finite: true,
    })
}

/// Sidecar metadata written next to a path dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathMetadata {
    pub seed: u64,
    pub particles: usize,
    pub steps: usize,
    pub horizon: f64,
    pub spec_hash: String,
}

impl PathMetadata {
    pub fn new(spec: &ProblemSpec, ensemble: &ParticlePathEnsemble) -> Self {
        PathMetadata {
            seed: ensemble.seed(),
            particles: ensemble.particles(),
            steps: ensemble.grid().steps(),
            horizon: ensemble.grid().horizon(),
            spec_hash: spec.spec_hash(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRow {
    pub step: usize,
    pub time: f64,
    pub particle: usize,
    pub coord: usize,
    pub value: f64,
}

/// Writes `step,time,particle,coord,value` rows.
pub fn write_paths_csv<W: Write>(ensemble: &ParticlePathEnsemble, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let grid = ensemble.grid();
    for m in 0..=grid.steps() {
        let time = grid.knot(m);
        for j in 0..ensemble.particles() {
            for (coord, &value) in ensemble.state(m, j).iter().enumerate() {
                w.serialize(PathRow {
                    step: m,
                    time,
                    particle: j,
                    coord,
                    value,
                })?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_paths_csv<R: std::io::Read>(input: R) -> Result<Vec<PathRow>> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}
