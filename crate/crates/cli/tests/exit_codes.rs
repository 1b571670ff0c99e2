use std::path::Path;
use std::process::{Command, Output};

fn sepopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sepopt")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_solve(out: &Path) -> Output {
    sepopt(&[
        "solve",
        "--config",
        "bundled:earth_67p_one_mode",
        "--nodes",
        "20",
        "--schedule",
        "0.1:5e-3",
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn too_few_nodes_exits_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let o = sepopt(&["solve", "--config", "bundled:earth_67p_one_mode", "--nodes", "2", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("n_nodes"), "{}", stderr(&o));
}

#[test]
fn unknown_mode_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = sepopt(&["compare", "--config", "bundled:earth_67p_one_mode", "--subset", "99", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("mode index 99"), "{}", stderr(&o));
}

#[test]
fn missing_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("absent.toml");
    let o = sepopt(&["solve", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn bad_schedule_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = sepopt(&["solve", "--config", "bundled:earth_67p_one_mode", "--schedule", "0.1:x", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn output_over_a_file_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    std::fs::write(&file, "").unwrap();
    let o = sepopt(&["emit-guess", "--config", "bundled:earth_67p_one_mode", "--out", file.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn failed_first_step_exits_3_and_keeps_the_trace() {
    let dir = tempfile::tempdir().unwrap();
    let o = sepopt(&[
        "solve",
        "--config",
        "bundled:earth_67p_two_mode",
        "--nodes",
        "20",
        "--schedule",
        "0.1:0.1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(dir.path().join("trace.csv").is_file());
    assert!(!dir.path().join("solution.json").exists());
}

#[test]
fn solve_then_validate_agree() {
    let dir = tempfile::tempdir().unwrap();
    let o = small_solve(dir.path());
    // coarse grid: the piecewise power audit fails
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("m_u"));
    for f in ["config.toml", "solution.json", "trace.csv", "validation.json", "trajectory.csv", "thrust.csv", "power.csv", "activation.csv", "mass.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let again = tempfile::tempdir().unwrap();
    let v = sepopt(&[
        "validate",
        "--config",
        dir.path().join("config.toml").to_str().unwrap(),
        "--solution",
        dir.path().join("solution.json").to_str().unwrap(),
        "--out",
        again.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&v), 4);
    let a = std::fs::read_to_string(dir.path().join("validation.json")).unwrap();
    let b = std::fs::read_to_string(again.path().join("validation.json")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn emit_guess_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let o = sepopt(&["emit-guess", "--config", "bundled:earth_67p_three_mode", "--nodes", "15", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("guess.json").is_file());
    let power = std::fs::read_to_string(dir.path().join("power.csv")).unwrap();
    assert_eq!(power.lines().count(), 16);
}
