//! Deterministic reference for the adjoints along a stationary state.

use super::{
    first_order_driver, first_order_terminal, second_order_driver, second_order_terminal,
    terminal_step, Frame, QPairing,
};
use crate::copy::CopyIndex;
use crate::error::{check_dim, invalid, Result};
use crate::problem::ProblemSpec;
use serde::{Deserialize, Serialize};

/// `p` and `P` on a uniform grid of `[0, T]`, index 0 at `t = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCurve {
    pub times: Vec<f64>,
    pub p: Vec<Vec<f64>>,
    pub big_p: Vec<Vec<f64>>,
}

impl OracleCurve {
    /// Linear interpolation of `P` at `t`.
    pub fn big_p_at(&self, t: f64) -> Vec<f64> {
        interpolate(&self.times, &self.big_p, t)
    }

    pub fn p_at(&self, t: f64) -> Vec<f64> {
        interpolate(&self.times, &self.p, t)
    }
}

fn interpolate(times: &[f64], values: &[Vec<f64>], t: f64) -> Vec<f64> {
    let last = times.len() - 1;
    let h = times[last] / last as f64;
    let k = ((t / h).floor() as usize).min(last - 1);
    let w = ((t - times[k]) / h).clamp(0.0, 1.0);
    values[k]
        .iter()
        .zip(&values[k + 1])
        .map(|(a, b)| a + w * (b - a))
        .collect()
}

/// Classical Runge–Kutta integration of the adjoint equations backward from
/// `T` along the state `x` held fixed under the constant control `v`.
///
/// With the forward state frozen the law is a point mass, the martingale
/// integrands vanish and both adjoints solve ordinary differential
/// equations. Fails unless drift and diffusion vanish at `x`.
pub fn constant_path_oracle(
    spec: &ProblemSpec,
    x: &[f64],
    v: &[f64],
    substeps: usize,
    pairing: QPairing,
) -> Result<OracleCurve> {
    let (n, d) = (spec.dims.state, spec.dims.noise);
    check_dim("oracle state", n, x.len())?;
    check_dim("oracle control", spec.dims.control, v.len())?;
    if substeps < 2 {
        return invalid("oracle needs at least two substeps");
    }
    let horizon = spec.horizon;
    let vc = |_: usize| v;
    let copies = CopyIndex::full();
    for k in 0..=4 {
        let t = horizon * k as f64 / 4.0;
        let mom_b = spec.drift.moments(x);
        let mom_s = spec.diffusion.moments(x);
        let mut b = vec![0.0; n];
        let mut s = vec![0.0; n * d];
        spec.drift.eval_at(t, x, &mom_b, v, &mut b);
        spec.diffusion.eval_at(t, x, &mom_s, v, &mut s);
        if b.iter().chain(&s).any(|z| z.abs() > 1e-12) {
            return invalid("the state is not stationary under the given control");
        }
    }

    let zeros_q = vec![0.0; n * d];
    let zeros_bq = vec![0.0; d * n * n];
    let rhs = |t: f64, p: &[f64], bp: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let frame = Frame::new(spec, t, x, &vc);
        let fp = first_order_driver(&frame, p, &zeros_q, &copies, n, d);
        let fbp = second_order_driver(&frame, p, &zeros_q, bp, &zeros_bq, &copies, n, d, pairing);
        (fp, fbp)
    };
    let phi = terminal_step(spec, horizon, x);
    let mut p = first_order_terminal(&phi, &copies, n);
    let mut bp = second_order_terminal(&phi, &copies, n);
    let h = horizon / substeps as f64;
    let mut times = vec![horizon];
    let mut ps = vec![p.clone()];
    let mut bps = vec![bp.clone()];
    let axpy = |y: &[f64], k: &[f64], c: f64| -> Vec<f64> {
        y.iter().zip(k).map(|(a, b)| a + c * b).collect()
    };
    // dY/dt = -F, integrated with step -h.
    for i in 0..substeps {
        let t = horizon - i as f64 * h;
        let (k1p, k1b) = rhs(t, &p, &bp);
        let (k2p, k2b) = rhs(
            t - 0.5 * h,
            &axpy(&p, &k1p, 0.5 * h),
            &axpy(&bp, &k1b, 0.5 * h),
        );
        let (k3p, k3b) = rhs(
            t - 0.5 * h,
            &axpy(&p, &k2p, 0.5 * h),
            &axpy(&bp, &k2b, 0.5 * h),
        );
        let (k4p, k4b) = rhs(t - h, &axpy(&p, &k3p, h), &axpy(&bp, &k3b, h));
        for r in 0..p.len() {
            p[r] += h / 6.0 * (k1p[r] + 2.0 * k2p[r] + 2.0 * k3p[r] + k4p[r]);
        }
        for r in 0..bp.len() {
            bp[r] += h / 6.0 * (k1b[r] + 2.0 * k2b[r] + 2.0 * k3b[r] + k4b[r]);
        }
        times.push(t - h);
        ps.push(p.clone());
        bps.push(bp.clone());
    }
    times.reverse();
    ps.reverse();
    bps.reverse();
    times[0] = 0.0;
    Ok(OracleCurve {
        times,
        p: ps,
        big_p: bps,
    })
}
