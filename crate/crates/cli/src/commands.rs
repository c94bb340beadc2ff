//! The simulate, check, orders and expansion subcommands.

use crate::output::{self, sci, verdict, Summary};
use crate::{exit, Failure, RunConfig};
use mfsmp::adjoint::write_adjoint_csv;
use mfsmp::forward::{
    moment_bound_check, simulate as simulate_paths, write_paths_csv, ControlProcess, MomentReport,
    PathMetadata, TimeGrid,
};
use mfsmp::problem::Fixture;
use mfsmp::smp::{
    check_candidate, expansion_audit, CheckConfig, CheckRun, ExpansionAudit, ExpansionConfig,
};
use mfsmp::variation::{order_study, write_convergence_csv, OrderStudy, OrderStudyConfig};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Particles written to the adjoint CSV (plot data, not the full ensemble).
pub const ADJOINT_CSV_PARTICLES: usize = 16;

pub fn candidate(fx: &Fixture) -> ControlProcess {
    ControlProcess::constant(
        fx.candidate
            .clone()
            .unwrap_or_else(|| vec![0.0; fx.spec.dims.control]),
    )
}

fn alternative(fx: &Fixture) -> Result<ControlProcess, Failure> {
    fx.alternative
        .clone()
        .map(ControlProcess::constant)
        .ok_or_else(|| {
            Failure::usage(format!(
                "fixture `{}` declares no alternative control",
                fx.name
            ))
        })
}

fn emit(stdout: &mut dyn Write, text: &str) -> Result<(), Failure> {
    stdout.write_all(text.as_bytes())?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulateDocument {
    pub fixture: String,
    pub metadata: PathMetadata,
    pub moments: MomentReport,
    pub min_value: f64,
    pub max_value: f64,
}

pub fn simulate(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let fx = cfg.load_fixture()?;
    let u = candidate(&fx);
    let grid = TimeGrid::new(fx.spec.horizon, cfg.steps)?;
    let ens = simulate_paths(&fx.spec, &u, &grid, cfg.particles, cfg.seed)?;
    let moments = moment_bound_check(&ens, &u)?;
    let (min_value, max_value) = ens
        .paths()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let doc = SimulateDocument {
        fixture: fx.name.clone(),
        metadata: PathMetadata::new(&fx.spec, &ens),
        moments,
        min_value,
        max_value,
    };
    output::ensure_dir(&cfg.out)?;
    if cfg.csv {
        let (_, file) = output::create(&cfg.out, "paths.csv")?;
        write_paths_csv(&ens, file)?;
    }
    if cfg.doc {
        output::write_json(&cfg.out, "paths.meta.json", &doc)?;
    }
    let mut s = Summary::new(&format!("simulate {}", fx.name));
    s.line("particles", cfg.particles)
        .line("steps", cfg.steps)
        .line("seed", cfg.seed)
        .line("spec hash", &doc.metadata.spec_hash)
        .line("moment ratio r", sci(doc.moments.ratio))
        .line("E sup|X|^8", sci(doc.moments.sup_moment))
        .line(
            "path range",
            format!("[{}, {}]", doc.min_value, doc.max_value),
        );
    emit(stdout, &s.render())?;
    Ok(exit::OK)
}

pub fn check_config(cfg: &RunConfig) -> CheckConfig {
    CheckConfig {
        particles: cfg.particles,
        steps: cfg.steps,
        seed: cfg.seed,
        control_grid: cfg.control_grid.clone(),
        tol_sing: cfg.tol_sing,
        ..CheckConfig::default()
    }
}

/// Exit code implied by a check report.
pub fn check_code(run: &CheckRun) -> i32 {
    if !run.report.first_order.result.pass {
        exit::FIRST_ORDER
    } else if !run.report.second_order.pass {
        exit::SECOND_ORDER
    } else {
        exit::OK
    }
}

pub fn write_check_artifacts(cfg: &RunConfig, run: &CheckRun) -> Result<(), Failure> {
    output::ensure_dir(&cfg.out)?;
    let report = &run.report;
    if cfg.csv {
        output::write_rows(
            &cfg.out,
            "gaps.csv",
            &output::gap_rows(&report.first_order.tables),
        )?;
        output::write_rows(
            &cfg.out,
            "second_order.csv",
            &output::condition_rows(&report.second_order.tables),
        )?;
        output::write_rows(
            &cfg.out,
            "singular_region.csv",
            &output::region_rows(&report.singular_region),
        )?;
        let (_, file) = output::create(&cfg.out, "adjoint.csv")?;
        let spec_dims = (run.ensemble.dim(), run.ensemble.noise().dim());
        write_adjoint_csv(
            &run.adjoint,
            run.ensemble.grid(),
            spec_dims.0,
            spec_dims.1,
            ADJOINT_CSV_PARTICLES,
            file,
        )?;
    }
    if cfg.doc {
        let (_, file) = output::create(&cfg.out, "report.json")?;
        report.write_json(file)?;
    }
    Ok(())
}

pub fn check_summary(run: &CheckRun) -> String {
    let r = &run.report;
    let mut s = Summary::new(&format!("check {}", r.meta.fixture));
    s.line("particles", r.meta.particles)
        .line("steps", r.meta.steps)
        .line("seed", r.meta.seed)
        .line("max E|p|", sci(r.adjoint.max_mean_abs_p))
        .line("max E|q|", sci(r.adjoint.max_mean_abs_q))
        .line(
            "E P(0)",
            sci(r.adjoint.mean_big_p.first().copied().unwrap_or(0.0)),
        )
        .line("first-order violation", sci(r.first_order.result.violation))
        .line("first-order", verdict(r.first_order.result.pass));
    if let Some(w) = &r.first_order.result.witness {
        s.line(
            "first-order witness",
            format!(
                "t={} v={} gap={} se={}",
                w.time,
                output::point_label(&w.v),
                sci(w.value),
                sci(w.stderr)
            ),
        );
    }
    s.line("singular cells", r.singular_region.cells.len())
        .line("singular region covers grid", r.singular_region.covers_grid);
    for t in &r.second_order.tables {
        s.line(
            &format!("second-order integral v={}", output::point_label(&t.v)),
            format!("{} +- {}", sci(t.integral), sci(t.integral_stderr)),
        );
    }
    if let Some(shape) = &r.second_order.shape {
        s.line("quadratic shape c", sci(shape.c))
            .line("quadratic shape R^2", format!("{:.6}", shape.r_squared));
    }
    s.line("second-order", verdict(r.second_order.pass));
    if let Some(w) = &r.second_order.witness {
        s.line(
            "second-order witness",
            format!(
                "t={} v={} value={} se={}",
                w.time,
                output::point_label(&w.v),
                sci(w.value),
                sci(w.stderr)
            ),
        );
    }
    s.render()
}

pub fn check(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let fx = cfg.load_fixture()?;
    if fx.candidate.is_none() {
        return Err(Failure::usage(format!(
            "fixture `{}` declares no candidate control",
            fx.name
        )));
    }
    let run = check_candidate(&fx.spec, &fx.name, &candidate(&fx), &check_config(cfg))?;
    write_check_artifacts(cfg, &run)?;
    emit(stdout, &check_summary(&run))?;
    Ok(check_code(&run))
}

pub fn run_orders(cfg: &RunConfig, fx: &Fixture) -> Result<OrderStudy, Failure> {
    if cfg.ladder.len() < 4 {
        return Err(Failure::usage(
            "the order study needs at least four ladder values",
        ));
    }
    let study_cfg = OrderStudyConfig {
        ladder: cfg.ladder.clone(),
        particles: cfg.particles,
        steps: cfg.steps,
        seed: cfg.seed,
        x2_injection: cfg.x2_injection,
        ..OrderStudyConfig::default()
    };
    Ok(order_study(
        &fx.spec,
        &fx.name,
        &candidate(fx),
        &alternative(fx)?,
        &study_cfg,
    )?)
}

pub fn orders_summary(study: &OrderStudy) -> String {
    let slope =
        |s: Option<f64>| s.map_or("n/a (identically zero)".to_string(), |x| format!("{x:.4}"));
    let mut s = Summary::new(&format!("orders {}", study.fixture));
    s.line("slope E sup|x1|^2", slope(study.slope_x1))
        .line("slope E sup|x2|^2", slope(study.slope_x2))
        .line(
            "remainder ratios",
            study
                .remainder_ratios
                .iter()
                .map(|r| sci(*r))
                .collect::<Vec<_>>()
                .join(" "),
        )
        .line("remainder decreasing", study.remainder_decreasing)
        .line("x1 order", verdict(study.pass_x1))
        .line("x2 order", verdict(study.pass_x2))
        .line("orders", verdict(study.pass));
    s.render()
}

pub fn orders(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let fx = cfg.load_fixture()?;
    let study = run_orders(cfg, &fx)?;
    output::ensure_dir(&cfg.out)?;
    if cfg.csv {
        let (_, file) = output::create(&cfg.out, "convergence.csv")?;
        write_convergence_csv(&study.rows, file)?;
    }
    if cfg.doc {
        output::write_json(&cfg.out, "orders.json", &study)?;
    }
    emit(stdout, &orders_summary(&study))?;
    Ok(if study.pass { exit::OK } else { exit::ORDERS })
}

pub fn run_expansion(cfg: &RunConfig, fx: &Fixture) -> Result<ExpansionAudit, Failure> {
    if cfg.ladder.len() < 3 {
        return Err(Failure::usage(
            "the expansion audit needs at least three ladder values",
        ));
    }
    let audit_cfg = ExpansionConfig {
        ladder: cfg.ladder.clone(),
        particles: cfg.particles,
        steps: cfg.steps,
        seed: cfg.seed,
        ..ExpansionConfig::default()
    };
    Ok(expansion_audit(
        &fx.spec,
        &candidate(fx),
        &alternative(fx)?,
        &audit_cfg,
    )?)
}

pub fn expansion_summary(fixture: &str, a: &ExpansionAudit) -> String {
    let mut s = Summary::new(&format!("expansion {fixture}"));
    s.line(
        "c1 fitted",
        format!("{} +- {}", sci(a.c1), sci(a.c1_stderr)),
    )
    .line(
        "c1 predicted",
        format!("{} +- {}", sci(a.c1_predicted), sci(a.c1_predicted_stderr)),
    )
    .line(
        "c2 fitted",
        format!("{} +- {}", sci(a.c2), sci(a.c2_stderr)),
    )
    .line(
        "c2 predicted",
        format!("{} +- {}", sci(a.c2_predicted), sci(a.c2_predicted_stderr)),
    )
    .line("singular", a.singular)
    .line("c1 consistent", a.c1_consistent)
    .line(
        "c2 consistent",
        a.c2_consistent
            .map_or("not judged (nonsingular)".to_string(), |c| c.to_string()),
    )
    .line(
        "taylor residual / rho^2",
        a.rungs
            .iter()
            .map(|r| sci(r.taylor_residual_ratio))
            .collect::<Vec<_>>()
            .join(" "),
    )
    .line("taylor residual decreasing", a.taylor_decreasing)
    .line("expansion", verdict(a.consistent));
    s.render()
}

pub fn expansion(cfg: &RunConfig, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let fx = cfg.load_fixture()?;
    let audit = run_expansion(cfg, &fx)?;
    output::ensure_dir(&cfg.out)?;
    if cfg.csv {
        output::write_rows(&cfg.out, "expansion.csv", &audit.rungs)?;
    }
    if cfg.doc {
        output::write_json(&cfg.out, "expansion.json", &audit)?;
    }
    emit(stdout, &expansion_summary(&fx.name, &audit))?;
    Ok(if audit.consistent {
        exit::OK
    } else {
        exit::EXPANSION
    })
}
