use mfsmp::forward::read_paths_csv;
use mfsmp_cli::example11::Claim;
use mfsmp_cli::exit;
use mfsmp_cli::output::{read_rows, GapRow, RegionRow};
use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

fn mfsmp(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfsmp"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("MFSMP_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn simulate_writes_constant_example11_paths() {
    let dir = tempfile::tempdir().unwrap();
    let o = mfsmp(
        &["simulate", "--particles", "20", "--steps", "10"],
        dir.path(),
    );
    assert_eq!(code(&o), exit::OK, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_paths_csv(fs::File::open(dir.path().join("paths.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 11 * 20);
    assert!(rows.iter().all(|r| r.value == 1.0));
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("paths.meta.json")).unwrap())
            .unwrap();
    assert_eq!(meta["metadata"]["seed"], 42);
}

#[test]
fn blow_up_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = mfsmp(
        &["simulate", "--fixture", "cubic_blowup", "--particles", "4"],
        dir.path(),
    );
    assert_eq!(code(&o), exit::BLOW_UP);
}

#[test]
fn usage_errors_exit_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["check", "--fixture", "no_such_fixture"],
        vec!["orders", "--rho-ladder", "0.1,0.2,0.05,0.01"],
        vec!["check", "--particles", "1"],
        vec!["check", "--control-grid", "5"],
        vec!["simulate", "--bogus"],
    ] {
        assert_eq!(code(&mfsmp(&args, dir.path())), exit::USAGE, "{args:?}");
    }
}

#[test]
fn check_exit_codes_follow_the_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let o = mfsmp(
        &["check", "--fixture", "suboptimal", "--particles", "500"],
        dir.path(),
    );
    assert_eq!(code(&o), exit::FIRST_ORDER);
    let o = mfsmp(
        &["check", "--fixture", "zero", "--particles", "100"],
        dir.path(),
    );
    assert_eq!(code(&o), exit::OK);
}

#[test]
fn check_artifacts_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let o = mfsmp(
        &["check", "--particles", "500", "--steps", "20"],
        dir.path(),
    );
    assert_eq!(code(&o), exit::OK, "{}", String::from_utf8_lossy(&o.stdout));
    let gaps: Vec<GapRow> = read_rows(&dir.path().join("gaps.csv")).unwrap();
    // three grid points, twenty steps
    assert_eq!(gaps.len(), 3 * 20);
    assert!(gaps.iter().all(|g| g.mean.abs() <= 5e-2));
    let region: Vec<RegionRow> = read_rows(&dir.path().join("singular_region.csv")).unwrap();
    assert_eq!(region.len(), 3 * 20);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    for key in ["meta", "first_order", "singular_region", "second_order"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    assert!(dir.path().join("adjoint.csv").exists());
}

#[test]
fn format_selects_the_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = mfsmp(
        &[
            "check",
            "--particles",
            "200",
            "--steps",
            "10",
            "--format",
            "doc",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), exit::OK);
    assert!(dir.path().join("report.json").exists());
    assert!(!dir.path().join("gaps.csv").exists());
}

#[test]
fn fixture_files_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("convex.toml");
    fs::write(&path, mfsmp::fixtures::source("convex").unwrap()).unwrap();
    let o = mfsmp(
        &[
            "check",
            "--fixture",
            path.to_str().unwrap(),
            "--particles",
            "200",
        ],
        &dir.path().join("out"),
    );
    assert_eq!(code(&o), exit::OK, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn injected_second_variation_fails_the_order_check() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["orders", "--fixture", "quadratic", "--particles", "300"];
    assert_eq!(code(&mfsmp(&args, dir.path())), exit::OK);
    let mut injected = args.to_vec();
    injected.extend(["--x2-injection", "1.0"]);
    assert_eq!(code(&mfsmp(&injected, dir.path())), exit::ORDERS);
}

#[test]
fn nonsingular_expansion_is_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let o = mfsmp(
        &[
            "expansion",
            "--fixture",
            "nonsingular",
            "--particles",
            "500",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), exit::OK, "{}", String::from_utf8_lossy(&o.stdout));
    let doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("expansion.json")).unwrap())
            .unwrap();
    let c1 = doc["c1"].as_f64().unwrap();
    assert!((c1 - 1.5).abs() <= 0.15, "c1 {c1}");
}

#[test]
fn smoke_example11_is_fast_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let o = mfsmp(&["example11", "--smoke"], dir.path());
    assert!(start.elapsed().as_secs_f64() < 5.0);
    assert_eq!(code(&o), exit::OK, "{}", String::from_utf8_lossy(&o.stdout));
    let claims: Vec<Claim> = read_rows(&dir.path().join("claims.csv")).unwrap();
    assert_eq!(claims.len(), 11);
    assert!(claims.iter().all(|c| c.pass));
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn outputs_do_not_depend_on_the_thread_count() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let run = |dir: &Path, threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_mfsmp"))
            .args(["example11", "--smoke", "--out"])
            .arg(dir)
            .env("MFSMP_THREADS", threads)
            .output()
            .unwrap()
    };
    let (oa, ob) = (run(a.path(), "1"), run(b.path(), "3"));
    assert_eq!(oa.stdout, ob.stdout);
    assert_eq!(artifacts(a.path()), artifacts(b.path()));
}
