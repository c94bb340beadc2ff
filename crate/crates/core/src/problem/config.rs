//! TOML fixture format.
//!
//! ```toml
//! name = "example"
//! [dims]
//! state = 1
//! noise = 1
//! control = 1
//! x0 = [1.0]
//! [horizon]
//! T = 1.0
//! [drift]
//! monomials = [ { vars = "v", coeff = 1.0 } ]
//! [diffusion]
//! basis = [ { monomials = [ { vars = "y", coeff = 1.0 } ] } ]
//! monomials = [ { vars = "x", coeff = 1.0 }, { vars = "m", coeff = 1.0 }, { vars = "", coeff = -2.0 } ]
//! [controls]
//! kind = "finite"
//! points = [[-1.0], [0.0], [1.0]]
//! candidate = [0.0]
//! alternative = [1.0]
//! ```
//!
//! Body variables are `t`, `x`/`x1..xn`, `m`/`m1..mK` (one per basis
//! function) and `v`/`v1..vk`; basis functions use `y`/`y1..yn`. A
//! coefficient with several components lists them row-major under
//! `components = [ { monomials = [...] }, ... ]`.

use super::{ControlSet, MomentCoupledFunction, ProblemSpec, Role, VarLayout};
use crate::error::{Error, Result};
use crate::measure::MomentBasis;
use crate::poly::Polynomial;
use serde::Deserialize;
use std::path::Path;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixtureDoc {
    name: Option<String>,
    dims: DimsDoc,
    horizon: HorizonDoc,
    drift: Option<CoefficientDoc>,
    diffusion: Option<CoefficientDoc>,
    running_cost: Option<CoefficientDoc>,
    terminal_cost: Option<CoefficientDoc>,
    controls: ControlsDoc,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DimsDoc {
    state: usize,
    noise: usize,
    control: usize,
    x0: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HorizonDoc {
    #[serde(rename = "T")]
    t: f64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoefficientDoc {
    #[serde(default)]
    basis: Vec<PolyDoc>,
    monomials: Option<Vec<MonomialDoc>>,
    components: Option<Vec<PolyDoc>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolyDoc {
    #[serde(default)]
    monomials: Vec<MonomialDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MonomialDoc {
    #[serde(default)]
    vars: String,
    coeff: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControlsDoc {
    kind: String,
    points: Option<Vec<Vec<f64>>>,
    lo: Option<Vec<f64>>,
    hi: Option<Vec<f64>>,
    grid: Option<Vec<usize>>,
    candidate: Option<Vec<f64>>,
    alternative: Option<Vec<f64>>,
}

/// A parsed fixture: the problem plus the controls it proposes to check.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub name: String,
    pub spec: ProblemSpec,
    /// Candidate optimal control `u` (constant in time).
    pub candidate: Option<Vec<f64>>,
    /// Default alternative control `v` for variation studies.
    pub alternative: Option<Vec<f64>>,
}

fn indexed_resolver(prefix: &str, count: usize, offset: usize, name: &str) -> Option<usize> {
    if name == prefix && count == 1 {
        return Some(offset);
    }
    let idx: usize = name.strip_prefix(prefix)?.parse().ok()?;
    (1..=count).contains(&idx).then(|| offset + idx - 1)
}

fn build_poly(
    nvars: usize,
    monos: &[MonomialDoc],
    resolve: &dyn Fn(&str) -> Option<usize>,
) -> Result<Polynomial> {
    let terms = monos
        .iter()
        .map(|m| Polynomial::parse_monomial(nvars, &m.vars, m.coeff, resolve))
        .collect::<Result<Vec<_>>>()?;
    Polynomial::from_terms(nvars, terms)
}

fn build_coefficient(
    what: &str,
    doc: Option<CoefficientDoc>,
    role: Role,
    rows: usize,
    cols: usize,
    n: usize,
    k: usize,
) -> Result<MomentCoupledFunction> {
    let ctx = |e: Error| Error::Config(format!("[{what}]: {e}"));
    let Some(doc) = doc else {
        return Ok(MomentCoupledFunction::zero(role, rows, cols, n, k));
    };
    let basis_resolve = |s: &str| indexed_resolver("y", n, 0, s);
    let basis_polys = doc
        .basis
        .iter()
        .map(|p| build_poly(n, &p.monomials, &basis_resolve))
        .collect::<Result<Vec<_>>>()
        .map_err(ctx)?;
    let basis = MomentBasis::new(n, basis_polys).map_err(ctx)?;
    let lay = VarLayout::new(n, basis.len(), k);
    let resolve = |s: &str| {
        if s == "t" {
            return Some(lay.t());
        }
        indexed_resolver("x", n, lay.x(0), s)
            .or_else(|| indexed_resolver("m", lay.moments, lay.m(0), s))
            .or_else(|| indexed_resolver("v", k, lay.v(0), s))
    };
    let bodies: Vec<Polynomial> = match (doc.monomials, doc.components) {
        (Some(m), None) => vec![build_poly(lay.nvars(), &m, &resolve).map_err(ctx)?],
        (None, Some(cs)) => cs
            .iter()
            .map(|p| build_poly(lay.nvars(), &p.monomials, &resolve))
            .collect::<Result<Vec<_>>>()
            .map_err(ctx)?,
        (None, None) => vec![Polynomial::zero(lay.nvars()); rows * cols],
        (Some(_), Some(_)) => {
            return Err(Error::Config(format!(
                "[{what}]: give either `monomials` or `components`, not both"
            )))
        }
    };
    MomentCoupledFunction::new(role, rows, cols, n, k, basis, bodies).map_err(ctx)
}

/// Parses a fixture document.
pub fn parse_fixture(text: &str) -> Result<Fixture> {
    let doc: FixtureDoc = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let n = doc.dims.state;
    let d = doc.dims.noise;
    let k = doc.dims.control;
    if n == 0 || d == 0 {
        return Err(Error::Config(
            "state and noise dimensions must be positive".into(),
        ));
    }
    if doc.dims.x0.len() != n {
        return Err(Error::Config(format!(
            "x0 has {} entries for state dimension {n}",
            doc.dims.x0.len()
        )));
    }
    let drift = build_coefficient("drift", doc.drift, Role::Drift, n, 1, n, k)?;
    let diffusion = build_coefficient("diffusion", doc.diffusion, Role::Diffusion, n, d, n, k)?;
    let running = build_coefficient(
        "running_cost",
        doc.running_cost,
        Role::RunningCost,
        1,
        1,
        n,
        k,
    )?;
    let terminal = build_coefficient(
        "terminal_cost",
        doc.terminal_cost,
        Role::TerminalCost,
        1,
        1,
        n,
        0,
    )?;

    let c = doc.controls;
    let controls = match c.kind.as_str() {
        "finite" => ControlSet::finite(
            c.points
                .ok_or_else(|| Error::Config("[controls]: finite set needs `points`".into()))?,
        ),
        "box" => {
            let missing = |f: &str| Error::Config(format!("[controls]: box needs `{f}`"));
            ControlSet::boxed(
                c.lo.ok_or_else(|| missing("lo"))?,
                c.hi.ok_or_else(|| missing("hi"))?,
                c.grid.ok_or_else(|| missing("grid"))?,
            )
        }
        other => return Err(Error::Config(format!("[controls]: unknown kind `{other}`"))),
    }
    .map_err(|e| Error::Config(format!("[controls]: {e}")))?;
    if controls.dim() != k {
        return Err(Error::Config(format!(
            "[controls]: points have dimension {}, dims.control = {k}",
            controls.dim()
        )));
    }
    for (label, v) in [("candidate", &c.candidate), ("alternative", &c.alternative)] {
        if let Some(v) = v {
            if !controls.contains(v) {
                return Err(Error::Config(format!(
                    "[controls]: {label} {v:?} is outside U"
                )));
            }
        }
    }
    let spec = ProblemSpec::new(
        drift,
        diffusion,
        running,
        terminal,
        controls,
        doc.dims.x0,
        doc.horizon.t,
    )
    .map_err(|e| Error::Config(e.to_string()))?;
    Ok(Fixture {
        name: doc.name.unwrap_or_else(|| "fixture".to_string()),
        spec,
        candidate: c.candidate,
        alternative: c.alternative,
    })
}

pub fn load_fixture(path: impl AsRef<Path>) -> Result<Fixture> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_fixture(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
name = "small"
[dims]
state = 1
noise = 1
control = 1
x0 = [0.5]
[horizon]
T = 2.0
[drift]
monomials = [ { vars = "x^2", coeff = 0.5 }, { vars = "v", coeff = 1.0 } ]
[controls]
kind = "box"
lo = [-1.0]
hi = [1.0]
grid = [5]
candidate = [0.0]
"#;

    #[test]
    fn parses_box_fixture() {
        let f = parse_fixture(SMALL).unwrap();
        assert_eq!(f.name, "small");
        assert_eq!(f.spec.horizon, 2.0);
        assert_eq!(f.spec.controls.points().len(), 5);
        assert_eq!(f.spec.controls.points()[1], vec![-0.5]);
        assert!(f.spec.diffusion.is_zero());
        let mut out = [0.0];
        f.spec.drift.eval_at(0.0, &[2.0], &[], &[1.0], &mut out);
        assert_eq!(out[0], 3.0);
    }

    #[test]
    fn rejects_unknown_variable() {
        let bad = SMALL.replace("x^2", "z^2");
        assert!(matches!(parse_fixture(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_candidate_outside_set() {
        let bad = SMALL.replace("candidate = [0.0]", "candidate = [3.0]");
        assert!(parse_fixture(&bad).is_err());
    }

    #[test]
    fn rejects_control_in_diffusion() {
        let bad =
            format!("{SMALL}\n[diffusion]\nmonomials = [ {{ vars = \"v\", coeff = 1.0 }} ]\n");
        assert!(parse_fixture(&bad).is_err());
    }
}
