use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gameflow_cli::csvio::{self, parse, strings, Table};
use gameflow_cli::{EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gameflow"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn gameflow(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("experiment.toml");
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn analyze_example2_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = gameflow(&["analyze", "--game", "example2"], dir.path());
    assert_eq!(code(&o), EXIT_OK);
    let text = read(dir.path(), "analyze.txt");
    let value = |key: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(&format!("{key}: "))).unwrap();
        line[key.len() + 2..].parse().unwrap()
    };
    assert!(text.contains("verdict: strict local NE"));
    assert!(text.contains("eigenvalue_0: -2e0+0e0i"));
    assert!(text.contains("hurwitz_stable: true"));
    assert!((value("gd_eta_bound") - 6.0 / 9787.0).abs() < 1e-12);
    assert!((value("euler_threshold_closed_form") - 6.0 / 9805.0).abs() < 1e-12);
    assert!((value("threshold_euler") - 6.0 / 9805.0).abs() < 1e-12);
    for key in ["threshold_rk2", "threshold_rk4", "threshold_eg"] {
        assert!(value(key) > value("threshold_euler"), "{key}");
    }
    assert!(String::from_utf8(o.stdout).unwrap().contains("strict local NE"));
}

#[test]
fn analyze_flags_missing_equilibrium() {
    let dir = tempfile::tempdir().unwrap();
    let o = gameflow(&["analyze", "--game", "example1-2p"], dir.path());
    assert_eq!(code(&o), EXIT_OK);
    assert!(read(dir.path(), "analyze.txt").contains("no NE at origin (necessary condition fails)"));
}

#[test]
fn config_errors_exit_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let missing = dir.path().join("nope.toml");
    let cases: Vec<Vec<String>> = vec![
        vec!["run".into(), "--config".into(), missing.display().to_string()],
        vec!["analyze".into(), "--game".into(), "example9".into()],
        vec!["run".into()],
        vec!["sweep".into(), "--game".into(), "example2".into()],
        vec!["run".into(), "--game".into(), "example2".into(), "--jobs".into(), "0".into()],
    ];
    for args in cases {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = gameflow(&refs, &out);
        assert_eq!(code(&o), EXIT_CONFIG, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!out.exists(), "{args:?} created output");
    }
    let bad = write_config(dir.path(), "[game]\nkind = \"named\"\nname = \"example2\"\nunknown_key = 1\n");
    let o = gameflow(&["run", "--config", bad.to_str().unwrap()], &out);
    assert_eq!(code(&o), EXIT_CONFIG);
    assert!(!out.exists());
}

#[test]
fn numerical_failure_exits_3_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        "[game]\nkind = \"named\"\nname = \"example2\"\n[analyze]\npoint = [1e308, 1e308, 1e308]\n",
    );
    let o = gameflow(&["analyze", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(code(&o), EXIT_NUMERICAL);
    assert!(!out.exists());
}

#[test]
fn existing_outputs_need_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gameflow(&["analyze", "--game", "example2"], dir.path())), EXIT_OK);
    let path = dir.path().join("analyze.txt");
    std::fs::write(&path, "keep me").unwrap();
    let o = gameflow(&["analyze", "--game", "example2"], dir.path());
    assert_eq!(code(&o), EXIT_CONFIG);
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "keep me");
    let o = gameflow(&["analyze", "--game", "example2", "--overwrite"], dir.path());
    assert_eq!(code(&o), EXIT_OK);
    assert!(std::fs::read_to_string(&path).unwrap().starts_with("game: example2"));
}

#[test]
fn run_statuses_and_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("example2_run.toml");
    let o = gameflow(&["run", "--config", cfg.to_str().unwrap()], dir.path());
    // a diverged arm is a result, not a failure
    assert_eq!(code(&o), EXIT_OK);
    let summary = parse(
        &read(dir.path(), "run_summary.csv"),
        csvio::RUN_SUMMARY_SCHEMA,
        Some(&strings(&csvio::RUN_SUMMARY_COLUMNS)),
    )
    .unwrap();
    let status: Vec<&str> = summary.rows.iter().map(|r| r[4].as_str()).collect();
    assert_eq!(status, ["converged", "diverged", "converged"]);
    let cols = csvio::trajectory_columns(3, &[]);
    for name in ["run_00_euler.csv", "run_01_euler.csv", "run_02_rk2.csv"] {
        let t = parse(&read(dir.path(), name), csvio::TRAJECTORY_SCHEMA, Some(&cols)).unwrap();
        // all arms share the starting point
        assert_eq!(t.rows[0], first_trajectory_row(dir.path()));
        assert!(t.numbers("iter").is_ok());
    }
    let text = read(dir.path(), "run_00_euler.csv").replace("trajectory.v1", "trajectory.v2");
    assert!(parse(&text, csvio::TRAJECTORY_SCHEMA, Some(&cols)).is_err());
}

fn first_trajectory_row(dir: &Path) -> Vec<String> {
    let cols = csvio::trajectory_columns(3, &[]);
    parse(&read(dir, "run_00_euler.csv"), csvio::TRAJECTORY_SCHEMA, Some(&cols)).unwrap().rows[0].clone()
}

fn sweep_table(dir: &Path) -> Table {
    let cfg = config("example2_sweep.toml");
    let o = gameflow(&["sweep", "--config", cfg.to_str().unwrap()], dir);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    parse(&read(dir, "sweep.csv"), csvio::SWEEP_SCHEMA, Some(&strings(&csvio::SWEEP_COLUMNS))).unwrap()
}

#[test]
fn sweep_matches_spectral_radius_and_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let t = sweep_table(dir.path());
    let etas = t.numbers("eta").unwrap();
    let radius = t.numbers("spectral_radius").unwrap();
    let iters = t.numbers("iters_to_converge").unwrap();
    let mut euler = Vec::new();
    for (i, row) in t.rows.iter().enumerate() {
        let converged = row[4] == "converged";
        let rho = radius[i].unwrap();
        assert_eq!(converged, rho < 1.0, "row {row:?}");
        assert_eq!(iters[i].is_some(), converged);
        if row[0] == "euler" {
            euler.push((etas[i].unwrap(), converged));
        }
        if row[0] == "rk4" && (etas[i].unwrap() - 1e-2).abs() < 1e-12 {
            assert!(converged);
        }
    }
    // largest converging and smallest failing grid points bracket the threshold
    let thr = 6.0 / 9805.0;
    let last_ok = euler.iter().filter(|e| e.1).map(|e| e.0).fold(0.0, f64::max);
    let first_bad = euler.iter().filter(|e| !e.1).map(|e| e.0).fold(f64::INFINITY, f64::min);
    assert!(last_ok < thr && thr < first_bad);
    let pos = euler.iter().position(|e| e.0 == last_ok).unwrap();
    assert_eq!(euler[pos + 1].0, first_bad);
}

#[test]
fn rk4_converges_at_2e_minus_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[game]\nkind = \"named\"\nname = \"example2\"\n\
         [sweep]\nmethods = [{ method = \"rk4\" }, { method = \"euler\" }]\netas = [2e-2]\nmax_iters = 200000\n",
    );
    let out = dir.path().join("o");
    assert_eq!(code(&gameflow(&["sweep", "--config", cfg.to_str().unwrap()], &out)), EXIT_OK);
    let t = parse(&read(&out, "sweep.csv"), csvio::SWEEP_SCHEMA, Some(&strings(&csvio::SWEEP_COLUMNS))).unwrap();
    assert_eq!(t.rows[0][0], "rk4");
    assert_eq!(t.rows[0][4], "converged");
    assert_eq!(t.rows[1][4], "diverged");
}

#[test]
fn dal_outputs_and_lambda_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "seed = 0\nrecord_every = 20\n[game]\nkind = \"dal\"\nlambda = 0.0\n[game.task]\nn_per_domain = 60\n\
         [[arms]]\nmethod = \"euler\"\neta = 0.5\nmax_iters = 200\n\
         [[arms]]\nmethod = \"rk2\"\neta = 0.5\nmax_iters = 200\n",
    );
    let out = dir.path().join("o");
    let o = gameflow(&["dal", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(code(&o), EXIT_OK, "{}", String::from_utf8_lossy(&o.stderr));
    let cols = csvio::trajectory_columns(3, &strings(&["source_acc", "target_acc"]));
    for name in ["dal_00_euler.csv", "dal_01_rk2.csv"] {
        let t = parse(&read(&out, name), csvio::TRAJECTORY_SCHEMA, Some(&cols)).unwrap();
        let src = t.numbers("source_acc").unwrap();
        assert!(src.last().unwrap().unwrap() > src[0].unwrap(), "{name}");
        // with lambda = 0 the extractor cost is the source risk alone
        let j2 = t.numbers("J2").unwrap();
        assert!(j2.iter().all(|x| x.unwrap() > 0.0));
    }
    let s = parse(
        &read(&out, "dal_summary.csv"),
        csvio::DAL_SUMMARY_SCHEMA,
        Some(&strings(&csvio::DAL_SUMMARY_COLUMNS)),
    )
    .unwrap();
    assert_eq!(s.rows.len(), 2);
    assert!(s.numbers("best_target_acc").unwrap().iter().all(|a| (0.0..=1.0).contains(&a.unwrap())));
}

#[test]
fn seed_flag_changes_dal_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[game]\nkind = \"dal\"\n[game.task]\nn_per_domain = 40\n[[arms]]\nmethod = \"euler\"\neta = 0.5\nmax_iters = 5\n",
    );
    let run = |seed: &str, sub: &str| {
        let out = dir.path().join(sub);
        assert_eq!(code(&gameflow(&["dal", "--config", cfg.to_str().unwrap(), "--seed", seed], &out)), EXIT_OK);
        read(&out, "dal_00_euler.csv")
    };
    assert_eq!(run("1", "a"), run("1", "b"));
    assert_ne!(run("1", "c"), run("2", "d"));
}
