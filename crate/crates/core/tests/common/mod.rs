#![allow(dead_code)]

use mfsmp::forward::{ControlProcess, ParticlePathEnsemble, TimeGrid};
use mfsmp::problem::{parse_fixture, Fixture};

/// Scalar fixture with a one-point control set, assembled from coefficient
/// tables written in the fixture format.
pub fn scalar_fixture(
    x0: f64,
    drift: &str,
    diffusion: &str,
    running: &str,
    terminal: &str,
) -> Fixture {
    let mut doc = format!(
        "name = \"scratch\"\n[dims]\nstate = 1\nnoise = 1\ncontrol = 1\nx0 = [{x0:?}]\n\
         [horizon]\nT = 1.0\n[controls]\nkind = \"box\"\nlo = [-1.0]\nhi = [1.0]\ngrid = [3]\n\
         candidate = [0.0]\nalternative = [1.0]\n"
    );
    for (table, body) in [
        ("drift", drift),
        ("diffusion", diffusion),
        ("running_cost", running),
        ("terminal_cost", terminal),
    ] {
        if !body.is_empty() {
            doc.push_str(&format!("[{table}]\n{body}\n"));
        }
    }
    parse_fixture(&doc).expect("scratch fixture parses")
}

pub fn zero_control() -> ControlProcess {
    ControlProcess::constant(vec![0.0])
}

pub fn grid(steps: usize) -> TimeGrid {
    TimeGrid::new(1.0, steps).unwrap()
}

/// `max_m |mean_j a(m, j) - f(t_m)| / max_m |f(t_m)|`
pub fn relative_sup_error(values: &[f64], times: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let scale = times.iter().map(|&t| f(t).abs()).fold(0.0, f64::max);
    values
        .iter()
        .zip(times)
        .map(|(v, &t)| (v - f(t)).abs())
        .fold(0.0, f64::max)
        / scale
}

pub fn knot_times(ens: &ParticlePathEnsemble) -> Vec<f64> {
    (0..=ens.grid().steps())
        .map(|m| ens.grid().knot(m))
        .collect()
}
