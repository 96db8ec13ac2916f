use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cvar-reach"))
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).env_remove("CVAR_REACH_OUT").output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn solve_affine(dir: &Path) {
    let out = run(&["solve", "--config", config("affine-1d.json").to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn solve_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    solve_affine(&dir);
    let manifest = std::fs::read(dir.join("manifest.json")).unwrap();
    let out = run(&["solve", "--config", config("affine-1d.json").to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("grids computed: 0 of 21"));
    assert_eq!(std::fs::read(dir.join("manifest.json")).unwrap(), manifest);
}

#[test]
fn iteration_cap_exits_partial() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let cfg = config("affine-1d.json");
    let out = run(&["solve", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap(), "--max-iter", "1"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unconverged"));
    let out = run(&["solve", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
}

#[test]
fn invalid_config_exits_3_with_path() {
    let tmp = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config("affine-1d.json")).unwrap().replace("\"prob\": 0.5", "\"prob\": -0.5");
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, text).unwrap();
    let out = run(&["solve", "--config", bad.to_str().unwrap(), "--out", tmp.path().join("run").to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("disturbance.atoms[0].prob"));
}

#[test]
fn missing_and_corrupt_artifacts_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["safesets", "--out", tmp.path().join("nothing").to_str().unwrap()]);
    assert_eq!(code(&out), 4);

    let dir = tmp.path().join("run");
    solve_affine(&dir);
    let grid = dir.join("grids").join("s0.4.value.bin");
    let mut bytes = std::fs::read(&grid).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    std::fs::write(&grid, bytes).unwrap();
    let out = run(&["safesets", "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("s0.4.value.bin"));
}

#[test]
fn safe_set_at_cost_bound_is_everything() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    solve_affine(&dir);
    let out = run(&["safesets", "--out", dir.to_str().unwrap(), "--alpha", "0.05", "--r", "0.8"]);
    assert_eq!(code(&out), 0);
    let mask = std::fs::read_to_string(dir.join("risk/alpha0.05.r0.8.csv")).unwrap();
    let rows: Vec<&str> = mask.lines().skip(1).collect();
    assert_eq!(rows.len(), 41);
    assert!(rows.iter().all(|r| r.ends_with(",1")));
}

#[test]
fn simulate_is_deterministic_and_rejects_off_box_x0() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    solve_affine(&dir);
    let args = ["simulate", "--out", dir.to_str().unwrap(), "--alpha", "0.05", "--x0", "1.3", "--n", "500", "--seed", "7"];
    let first = run(&args);
    assert_eq!(code(&first), 0);
    let report = dir.join("simulate/alpha0.05.x1.3.seed7.json");
    let a = std::fs::read(&report).unwrap();
    let second = run(&["--jobs", "1"].iter().chain(&args).copied().collect::<Vec<_>>());
    assert_eq!(code(&second), 0);
    assert_eq!(std::fs::read(&report).unwrap(), a);
    assert_eq!(first.stdout, second.stdout);

    let out = run(&["simulate", "--out", dir.to_str().unwrap(), "--alpha", "0.05", "--x0", "2.5"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn policy_and_export_write_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    solve_affine(&dir);
    let out = run(&["policy", "--out", dir.to_str().unwrap(), "--alpha", "0.5", "--x0", "1.0"]);
    assert_eq!(code(&out), 0);
    assert!(dir.join("policy/alpha0.5.x1.selector.bin").exists());
    let out = run(&["export", "--out", dir.to_str().unwrap(), "--s", "0.12"]);
    assert_eq!(code(&out), 0);
    let table = std::fs::read_to_string(dir.join("export/s0.12.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "x1,z,v,u");
    assert_eq!(table.lines().count(), 1 + 41 * 11);
}

#[test]
fn default_output_root_comes_from_env() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["solve", "--config", config("affine-1d.json").to_str().unwrap()])
        .env("CVAR_REACH_OUT", tmp.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(tmp.path().join("affine-1d/manifest.json").exists());
}

#[test]
fn oracle_suite_passes() {
    let out = run(&["oracle"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 5);
}
