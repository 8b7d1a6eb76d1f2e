use std::fs;
use std::process::{Command, Output};

fn vpfft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vpfft"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn synth_emits_ascii_grid() {
    let o = vpfft(&[
        "synth", "--nx", "5", "--ny", "3", "--vf", "0.2", "--shape", "square",
    ]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("5 3"));
    let ones: usize = text
        .lines()
        .skip(1)
        .flat_map(|l| l.split_whitespace())
        .filter(|v| *v == "1")
        .count();
    assert_eq!(ones, 3);
}

#[test]
fn solve_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let micro = dir.path().join("g.txt");
    let o = vpfft(&[
        "synth",
        "--nx",
        "7",
        "--ny",
        "7",
        "--out",
        micro.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let out = dir.path().join("run");
    let o = vpfft(&[
        "solve",
        "--micro",
        micro.to_str().unwrap(),
        "--format",
        "ascii-grid",
        "--preset",
        "perfect",
        "--steps",
        "3",
        "--eps-final",
        "0.003",
        "--ig",
        "improved",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("steps.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().skip(1).all(|l| l.contains(",improved,")));
    assert!(stdout(&o).contains("complete = true"));
}

#[test]
fn config_file_with_cli_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "nx = 6\nny = 6\npreset = hardening\nsteps = 5\neps_final = 0.002\nscheme = trapz\ntheta = 0.5\n").unwrap();
    let o = vpfft(&["compare", "--config", cfg.to_str().unwrap(), "--steps", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout(&o);
    assert!(s.contains("config.steps = 2"));
    assert!(s.contains("config.scheme = trapz"));
    assert!(s.contains("iteration_reduction = "));
}

#[test]
fn exit_codes_follow_error_kind() {
    let o = vpfft(&["solve", "--preset", "brittle"]);
    assert_eq!(o.status.code(), Some(2));
    let o = vpfft(&["solve", "--scheme", "trapz", "--theta", "2"]);
    assert_eq!(o.status.code(), Some(2));
    let o = vpfft(&["solve", "--micro", "/nonexistent/grid.txt"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/grid.txt"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "2 2\n0 1\n").unwrap();
    let o = vpfft(&["solve", "--micro", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    // one step straight to 100% strain drives the Newton loop past its limit
    let o = vpfft(&[
        "solve",
        "--nx",
        "5",
        "--steps",
        "1",
        "--eps-final",
        "1",
        "--newton-max",
        "1",
    ]);
    assert_eq!(
        o.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn verify_suite_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("verify.csv");
    let o = vpfft(&["verify", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out).unwrap();
    assert!(csv.starts_with("check,value,limit,passed,detail"));
    assert!(csv.lines().skip(1).all(|l| l.contains(",true,")));
}
