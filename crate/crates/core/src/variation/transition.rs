use crate::copy::CopyIndex;
use crate::error::{check_dim, Error, Result};
use crate::forward::{ControlProcess, ParticlePathEnsemble};
use crate::linalg::{det, identity, matmul};
use crate::linearize::{mean_field_jacobians, LinearStep};
use crate::paths::KnotArray;
use crate::problem::ProblemSpec;
use rayon::prelude::*;

/// Smallest accepted `|det Phi|` before the transition is declared singular.
pub const MIN_DETERMINANT: f64 = 1e-10;

/// Fundamental matrix `Phi` of the linearized mean-field dynamics and its
/// inverse dynamics `Psi`, per particle (`n x n` row-major).
#[derive(Clone, Debug)]
pub struct TransitionEnsemble {
    pub phi: KnotArray,
    pub psi: KnotArray,
    /// `max_m || mean_j Psi_m Phi_m - I ||_max`.
    pub defect: f64,
    /// `max_m sqrt(mean_j || Psi_m Phi_m - I ||_F^2)`.
    pub pathwise_defect: f64,
}

/// Euler schemes for `dPhi = A Phi dt + C Phi dB` and
/// `dPsi = Psi (-A + C^2) dt - Psi C dB` with `A = b_x + E~[b_mu]` and
/// `C = sigma_x + E~[sigma_mu]`.
pub fn transition_matrix(
    spec: &ProblemSpec,
    ens: &ParticlePathEnsemble,
    u: &ControlProcess,
    copies: &CopyIndex,
) -> Result<TransitionEnsemble> {
    check_dim("ensemble state dimension", spec.dims.state, ens.dim())?;
    check_dim("control dimension", spec.dims.control, u.dim())?;
    u.validate(ens.grid(), ens.particles(), None)?;
    let (n, d) = (spec.dims.state, spec.dims.noise);
    let nn = n * n;
    let np = ens.particles();
    let grid = *ens.grid();
    let dt = grid.dt();
    let mut phi = KnotArray::zeros(grid.steps() + 1, np, nn);
    let mut psi = KnotArray::zeros(grid.steps() + 1, np, nn);
    let eye = identity(n);
    for j in 0..np {
        phi.get_mut(0, j).copy_from_slice(&eye);
        psi.get_mut(0, j).copy_from_slice(&eye);
    }
    for m in 0..grid.steps() {
        let step = LinearStep::new(spec, ens, u, None, m);
        let jac = mean_field_jacobians(&step, copies, n, d);
        let noise = ens.noise();
        let (phi_prev, phi_next) = phi.split_at_knot(m + 1);
        let (psi_prev, psi_next) = psi.split_at_knot(m + 1);
        let phi_cur = &phi_prev[m * np * nn..];
        let psi_cur = &psi_prev[m * np * nn..];
        let bad = phi_next
            .par_chunks_mut(nn)
            .zip(psi_next.par_chunks_mut(nn))
            .enumerate()
            .map(|(j, (phi_out, psi_out))| {
                let (a, c) = &jac[j];
                let f = &phi_cur[j * nn..(j + 1) * nn];
                let p = &psi_cur[j * nn..(j + 1) * nn];
                let db = noise.increment(m, j);
                // generator for Phi: I + A dt + sum_c C_c dB_c
                let mut g = eye.clone();
                // generator for Psi: I + (-A + sum_c C_c^2) dt - sum_c C_c dB_c
                let mut h = eye.clone();
                let mut c2 = vec![0.0; nn];
                for k in 0..nn {
                    g[k] += a[k] * dt;
                    h[k] -= a[k] * dt;
                }
                for cc in 0..d {
                    let cm = &c[cc * nn..(cc + 1) * nn];
                    matmul(cm, cm, n, n, n, &mut c2);
                    for k in 0..nn {
                        g[k] += cm[k] * db[cc];
                        h[k] += c2[k] * dt - cm[k] * db[cc];
                    }
                }
                matmul(&g, f, n, n, n, phi_out);
                matmul(p, &h, n, n, n, psi_out);
                let dv = det(phi_out, n);
                dv.abs() >= MIN_DETERMINANT && dv.is_finite()
            })
            .collect::<Vec<bool>>();
        if let Some(j) = bad.iter().position(|ok| !ok) {
            return Err(Error::IllConditioned {
                step: m + 1,
                det: det(phi.get(m + 1, j), n),
            });
        }
    }
    let (defect, pathwise_defect) = inverse_defect(&phi, &psi, n);
    Ok(TransitionEnsemble {
        phi,
        psi,
        defect,
        pathwise_defect,
    })
}

fn inverse_defect(phi: &KnotArray, psi: &KnotArray, n: usize) -> (f64, f64) {
    let nn = n * n;
    let np = phi.particles();
    let eye = identity(n);
    let mut worst_mean: f64 = 0.0;
    let mut worst_rms: f64 = 0.0;
    let mut prod = vec![0.0; nn];
    for m in 0..phi.knots() {
        let mut mean = vec![0.0; nn];
        let mut sq = 0.0;
        for j in 0..np {
            matmul(psi.get(m, j), phi.get(m, j), n, n, n, &mut prod);
            for k in 0..nn {
                mean[k] += prod[k] / np as f64;
                sq += (prod[k] - eye[k]).powi(2);
            }
        }
        let dev = mean
            .iter()
            .zip(&eye)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst_mean = worst_mean.max(dev);
        worst_rms = worst_rms.max((sq / np as f64).sqrt());
    }
    (worst_mean, worst_rms)
}
