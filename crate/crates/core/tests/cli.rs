use std::fs;
use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_extended-electron");

const BASE: &str = "\
[params]
alpha = ALPHA
tau = 0.1
[ics]
v_o = 1
[run]
t_end = 1.0
t_samples = 0, 0.5, 1.0
[run.grid]
x_min = -8
x_max = 10
n = 451
";

fn scenario(dir: &Path, alpha: f64, extra: &str) -> std::path::PathBuf {
    let path = dir.join("scenario.ini");
    let text = format!("{}{}", BASE.replace("ALPHA", &alpha.to_string()), extra);
    fs::write(&path, text).unwrap();
    path
}

fn run(config: &Path, out: &Path, tasks: &[&str]) -> (i32, String) {
    let mut cmd = Command::new(BIN);
    cmd.arg("run").arg(config).arg("--output-dir").arg(out);
    for t in tasks {
        cmd.arg("--task").arg(t);
    }
    let o = cmd.output().unwrap();
    let text = format!(
        "{}{}",
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    (o.status.code().unwrap(), text)
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn free_packet_all_tasks_pass() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), 0.0, "");
    let out = dir.path().join("out");
    let (code, text) = run(
        &cfg,
        &out,
        &["solve", "fields", "verify", "propagator", "reproduce"],
    );
    assert_eq!(code, 0, "{text}");
    assert!(!text.contains("[FAIL]"), "{text}");
    assert_eq!(
        listing(&out),
        [
            "fields.csv",
            "propagator.csv",
            "report.txt",
            "residuals.csv",
            "trajectory.csv"
        ]
    );
    let fields = fs::read_to_string(out.join("fields.csv")).unwrap();
    assert_eq!(
        fields.lines().next().unwrap(),
        "x,t,rho,S,re_psi,im_psi,v_qu,V_qu,V_ee"
    );
    assert_eq!(fields.lines().count(), 1 + 3 * 451);
}

#[test]
fn coupled_verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), 0.5, "");
    let (code, text) = run(&cfg, &dir.path().join("out"), &["verify"]);
    assert_eq!(code, 0, "{text}");
}

#[test]
fn inflated_width_fails_checks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), 0.5, "[debug]\ninflate_width = 1.01\n");
    let out = dir.path().join("out");
    let (code, text) = run(&cfg, &out, &["verify"]);
    assert_eq!(code, 1, "{text}");
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("[FAIL] pde"), "{report}");
}

#[test]
fn shifted_velocity_fails_continuity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), 0.5, "[debug]\nvelocity_offset = 0.1\n");
    let out = dir.path().join("out");
    let (code, _) = run(&cfg, &out, &["verify"]);
    assert_eq!(code, 1);
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("[FAIL] continuity"), "{report}");
}

#[test]
fn solve_only_writes_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), 0.5, "");
    let out = dir.path().join("out");
    let (code, text) = run(&cfg, &out, &[]);
    assert_eq!(code, 0, "{text}");
    assert_eq!(listing(&out), ["report.txt", "trajectory.csv"]);
}

#[test]
fn output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path(), 0.5, "");
    let tasks = ["solve", "fields", "verify", "propagator"];
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run(&cfg, &a, &tasks).0, 0);
    assert_eq!(run(&cfg, &b, &tasks).0, 0);
    for name in listing(&a) {
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn bad_config_exits_with_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.ini");
    fs::write(&cfg, "[params]\nalpha = 0.5\ntau = 0.1\nbogus = 3\n[ics]\n").unwrap();
    let (code, text) = run(&cfg, &dir.path().join("out"), &[]);
    assert_eq!(code, 2);
    assert!(text.contains("bogus"), "{text}");

    let (code, _) = run(
        &dir.path().join("missing.ini"),
        &dir.path().join("out"),
        &[],
    );
    assert_eq!(code, 2);
}

#[test]
fn acausal_constants_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("acausal.ini");
    fs::write(&cfg, "[constants]\ne = 1\nm = 1\nc = 1\nL = 0.5\n[ics]\n").unwrap();
    let (code, text) = run(&cfg, &dir.path().join("out"), &[]);
    assert_eq!(code, 2);
    assert!(text.contains("acausal"), "{text}");
}
