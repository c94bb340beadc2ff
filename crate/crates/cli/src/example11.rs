//! One-shot reproduction of the singular example: every stated property of
//! its solution is checked and written to a single summary document.

use crate::commands::{self, candidate};
use crate::output::{self, sci, verdict, Summary};
use crate::{exit, Failure, RunConfig, SMOKE_PARTICLES};
use mfsmp::adjoint::{constant_path_oracle, QPairing};
use mfsmp::fixtures;
use mfsmp::forward::{moment_bound_check, MomentReport, PathMetadata};
use mfsmp::smp::{check_candidate, cost, CheckRun, ExpansionAudit};
use mfsmp::variation::OrderStudy;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// RK4 steps for the deterministic second-order adjoint reference.
pub const ORACLE_SUBSTEPS: usize = 10_000;

/// Off-grid controls added to sharpen the quadratic-shape fit.
pub const SHAPE_POINTS: [f64; 2] = [-0.5, 0.5];

/// Value the closed-form argument gives for the second-order adjoint.
pub const STATED_BIG_P: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Claim {
    pub name: String,
    pub statement: String,
    /// Measured quantity compared against `tolerance`.
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Exit code reported when this claim fails.
    pub code: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub time: f64,
    pub big_p_regression: f64,
    pub big_p_oracle: f64,
    pub big_p_stated: f64,
}

/// How the deterministic reference compares with the closed-form `P = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatedComparison {
    pub statement: String,
    pub oracle_terminal: f64,
    pub oracle_initial: f64,
    pub sup_abs_deviation_oracle: f64,
    pub sup_abs_deviation_regression: f64,
    pub agrees: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub adjoint: f64,
    pub gap: f64,
    pub r_squared: f64,
    pub oracle_relative: f64,
}

impl Tolerances {
    pub fn for_particles(particles: usize) -> Self {
        if particles <= SMOKE_PARTICLES {
            Tolerances {
                adjoint: 0.25,
                gap: 0.25,
                r_squared: 0.9,
                oracle_relative: 0.25,
            }
        } else {
            Tolerances {
                adjoint: 5e-2,
                gap: 5e-2,
                r_squared: 0.99,
                oracle_relative: 0.10,
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example11Summary {
    pub particles: usize,
    pub steps: usize,
    pub seed: u64,
    pub spec_hash: String,
    pub tolerances: Tolerances,
    pub claims: Vec<Claim>,
    pub all_pass: bool,
    pub paths: PathMetadata,
    pub moments: MomentReport,
    pub cost: f64,
    pub cost_stderr: f64,
    pub oracle: Vec<OracleRow>,
    pub oracle_sup_relative_error: f64,
    pub stated_big_p: StatedComparison,
    pub orders: OrderStudy,
    pub expansion: ExpansionAudit,
}

impl Example11Summary {
    /// Exit code of the first failing claim, or 0.
    pub fn code(&self) -> i32 {
        self.claims
            .iter()
            .find(|c| !c.pass)
            .map_or(exit::OK, |c| c.code)
    }

    pub fn render(&self) -> String {
        let mut s = Summary::new("example11 reproduction");
        s.line("particles", self.particles)
            .line("steps", self.steps)
            .line("seed", self.seed)
            .line("spec hash", &self.spec_hash);
        for c in &self.claims {
            s.line(
                &c.name,
                format!(
                    "{}  value={} tol={}  ({})",
                    verdict(c.pass),
                    sci(c.value),
                    sci(c.tolerance),
                    c.statement
                ),
            );
        }
        s.line(
            "P oracle at t=0",
            format!("{:.6}", self.stated_big_p.oracle_initial),
        )
        .line(
            "P oracle at t=T",
            format!("{:.6}", self.stated_big_p.oracle_terminal),
        )
        .line(
            "P regression at t=0",
            format!(
                "{:.6}",
                self.oracle.first().map_or(0.0, |r| r.big_p_regression)
            ),
        )
        .line(
            "stated value P = 1",
            format!(
                "{} (sup |P_oracle - 1| = {})",
                if self.stated_big_p.agrees {
                    "consistent"
                } else {
                    "DISCREPANCY"
                },
                sci(self.stated_big_p.sup_abs_deviation_oracle)
            ),
        )
        .line(
            "expansion c2 fitted / predicted",
            format!(
                "{} / {}",
                sci(self.expansion.c2),
                sci(self.expansion.c2_predicted)
            ),
        )
        .line(
            "expansion c2 consistent",
            self.expansion
                .c2_consistent
                .map_or("not judged".to_string(), |c| c.to_string()),
        )
        .line("all claims", verdict(self.all_pass));
        s.render()
    }
}

fn claim(name: &str, statement: &str, value: f64, tolerance: f64, pass: bool, code: i32) -> Claim {
    Claim {
        name: name.into(),
        statement: statement.into(),
        value,
        tolerance,
        pass,
        code,
    }
}

/// Runs every stage and evaluates the claims. Artifacts are not written.
pub fn reproduce(cfg: &RunConfig) -> Result<(Example11Summary, CheckRun), Failure> {
    let fx = fixtures::example11();
    let spec = &fx.spec;
    let u = candidate(&fx);
    let tol = Tolerances::for_particles(cfg.particles);

    let mut check_cfg = commands::check_config(cfg);
    check_cfg.extra_points = SHAPE_POINTS.iter().map(|&v| vec![v]).collect();
    let run = check_candidate(spec, &fx.name, &u, &check_cfg)?;
    let ens = &run.ensemble;
    let report = &run.report;
    let moments = moment_bound_check(ens, &u)?;
    let max_dev = ens
        .paths()
        .iter()
        .map(|x| (x - 1.0).abs())
        .fold(0.0, f64::max);
    let (j, j_se) = cost(spec, ens, &u)?;

    let max_gap = report
        .first_order
        .tables
        .iter()
        .flat_map(|t| t.gap.mean.iter())
        .map(|g| g.abs())
        .fold(0.0, f64::max);
    let shape = report.second_order.shape.as_ref();
    let min_condition = report
        .second_order
        .tables
        .iter()
        .flat_map(|t| {
            t.series
                .mean
                .iter()
                .zip(&t.series.stderr)
                .map(|(m, s)| m + 3.0 * s)
        })
        .fold(f64::INFINITY, f64::min);

    let grid = ens.grid();
    let curve = constant_path_oracle(spec, &[1.0], &[0.0], ORACLE_SUBSTEPS, QPairing::Symmetric)?;
    let oracle: Vec<OracleRow> = (0..=grid.steps())
        .map(|m| OracleRow {
            time: grid.knot(m),
            big_p_regression: report.adjoint.mean_big_p[m],
            big_p_oracle: curve.big_p_at(grid.knot(m))[0],
            big_p_stated: STATED_BIG_P,
        })
        .collect();
    let oracle_scale = oracle
        .iter()
        .map(|r| r.big_p_oracle.abs())
        .fold(0.0, f64::max);
    let oracle_err = oracle
        .iter()
        .map(|r| (r.big_p_regression - r.big_p_oracle).abs())
        .fold(0.0, f64::max)
        / oracle_scale.max(f64::MIN_POSITIVE);
    let dev_oracle = oracle
        .iter()
        .map(|r| (r.big_p_oracle - STATED_BIG_P).abs())
        .fold(0.0, f64::max);
    let dev_regression = oracle
        .iter()
        .map(|r| (r.big_p_regression - STATED_BIG_P).abs())
        .fold(0.0, f64::max);
    let stated_big_p = StatedComparison {
        statement: "second-order adjoint (P, Q) = (1, 0)".into(),
        oracle_terminal: oracle.last().map_or(0.0, |r| r.big_p_oracle),
        oracle_initial: oracle[0].big_p_oracle,
        sup_abs_deviation_oracle: dev_oracle,
        sup_abs_deviation_regression: dev_regression,
        agrees: dev_oracle <= tol.oracle_relative * STATED_BIG_P,
    };

    let orders = commands::run_orders(cfg, &fx)?;
    let expansion = commands::run_expansion(cfg, &fx)?;

    let claims = vec![
        claim(
            "forward paths",
            "X = 1 for all particles and times",
            max_dev,
            0.0,
            max_dev == 0.0,
            exit::SOLVER,
        ),
        claim(
            "cost",
            "J(u) = 0",
            j.abs(),
            0.0,
            j == 0.0 && j_se == 0.0,
            exit::SOLVER,
        ),
        claim(
            "first-order adjoint p",
            "max_t E|p_t| small (p = 0)",
            report.adjoint.max_mean_abs_p,
            tol.adjoint,
            report.adjoint.max_mean_abs_p <= tol.adjoint,
            exit::SOLVER,
        ),
        claim(
            "first-order adjoint q",
            "max_t E|q_t| small (q = 0)",
            report.adjoint.max_mean_abs_q,
            tol.adjoint,
            report.adjoint.max_mean_abs_q <= tol.adjoint,
            exit::SOLVER,
        ),
        claim(
            "hamiltonian gap",
            "E[H(v) - H(u)] = 0 on U = {-1, 0, 1} at every knot",
            max_gap,
            tol.gap,
            max_gap <= tol.gap && report.first_order.result.pass,
            exit::FIRST_ORDER,
        ),
        claim(
            "singular region",
            "the Hamiltonian is flat on the full grid",
            report.singular_region.cells.len() as f64,
            (grid.steps() * report.first_order.tables.len()) as f64,
            report.singular_region.covers_grid,
            exit::SECOND_ORDER,
        ),
        claim(
            "second-order sign",
            "second-order condition >= 0 within 3 standard errors",
            min_condition,
            0.0,
            report.second_order.nonnegative_everywhere && report.second_order.pass,
            exit::SECOND_ORDER,
        ),
        claim(
            "second-order shape",
            "second-order condition proportional to v^2",
            shape.map_or(0.0, |s| s.r_squared),
            tol.r_squared,
            shape.is_some_and(|s| s.r_squared >= tol.r_squared && s.c >= 0.0 && s.asymmetry <= 0.1),
            exit::SECOND_ORDER,
        ),
        claim(
            "second-order adjoint oracle",
            "regression P matches the deterministic reference (relative sup-norm)",
            oracle_err,
            tol.oracle_relative,
            oracle_err <= tol.oracle_relative,
            exit::SOLVER,
        ),
        claim(
            "variation orders",
            "E sup|x1|^2 ~ d^2 and E sup|x2|^2 ~ d^4",
            orders.slope_x1.unwrap_or(f64::NAN),
            mfsmp::variation::X1_SLOPE_THRESHOLD,
            orders.pass,
            exit::ORDERS,
        ),
        claim(
            "expansion first order",
            "fitted c1 matches E int Delta H dt (= 0)",
            expansion.c1,
            (3.0 * expansion.c1_stderr).max(1e-12),
            expansion.c1_consistent && expansion.taylor_decreasing,
            exit::EXPANSION,
        ),
    ];
    let all_pass = claims.iter().all(|c| c.pass);
    let summary = Example11Summary {
        particles: cfg.particles,
        steps: cfg.steps,
        seed: cfg.seed,
        spec_hash: spec.spec_hash(),
        tolerances: tol,
        claims,
        all_pass,
        paths: PathMetadata::new(spec, ens),
        moments,
        cost: j,
        cost_stderr: j_se,
        oracle,
        oracle_sup_relative_error: oracle_err,
        stated_big_p,
        orders,
        expansion,
    };
    Ok((summary, run))
}

pub fn run(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let (summary, check) = reproduce(cfg)?;
    commands::write_check_artifacts(cfg, &check)?;
    if cfg.csv {
        output::write_rows(&cfg.out, "claims.csv", &summary.claims)?;
        output::write_rows(&cfg.out, "p_oracle.csv", &summary.oracle)?;
        let (_, file) = output::create(&cfg.out, "convergence.csv")?;
        mfsmp::variation::write_convergence_csv(&summary.orders.rows, file)?;
        output::write_rows(&cfg.out, "expansion.csv", &summary.expansion.rungs)?;
    }
    let text = summary.render();
    if cfg.doc {
        output::write_json(&cfg.out, "example11.json", &summary)?;
        output::write_text(&cfg.out, "example11.txt", &text)?;
    }
    stdout.write_all(text.as_bytes())?;
    Ok(summary.code())
}
