use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn drive(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scvx-drive")).args(args).output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn plan(name: &str, dir: &Path) -> Output {
    drive(&["plan", name, "--out", dir.to_str().unwrap()])
}

#[test]
fn plan_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = plan("stop-50m", dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let trajectory = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    let mut lines = trajectory.lines();
    assert_eq!(
        lines.next().unwrap(),
        "k,s_m,t_s,e_y_m,e_psi_rad,psi_rad,v_mps,delta_rad,u0_mps2,u1_radps,a_y_mps2,a_norm_mps2,kappa_1pm"
    );
    let rows: Vec<Vec<f64>> =
        lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 40);
    assert!((rows[39][6] - 0.5).abs() <= 0.1);
    assert!(rows.iter().all(|r| r[11] <= 0.6 * 9.81 + 1e-3));
    assert!(rows.windows(2).all(|w| w[1][2] > w[0][2]));

    let diagnostics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diagnostics["converged"], true);
    assert_eq!(diagnostics["reason"], "converged");
    assert_eq!(diagnostics["trigger_active"], false);
    assert!(diagnostics["max_violations"]["friction"].as_f64().unwrap() <= 1e-3);

    let history = fs::read_to_string(dir.path().join("history.csv")).unwrap();
    let mut lines = history.lines();
    assert_eq!(lines.next().unwrap(), "iter,cost,predicted,ratio,rho_tr,nu_norm,accepted,status");
    assert_eq!(lines.count() as u64, diagnostics["iterations"].as_u64().unwrap());
}

#[test]
fn outputs_are_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert_eq!(plan("stop-obstacle", a.path()).status.code(), Some(0));
    assert_eq!(plan("stop-obstacle", b.path()).status.code(), Some(0));
    for file in ["trajectory.csv", "history.csv"] {
        assert_eq!(fs::read(a.path().join(file)).unwrap(), fs::read(b.path().join(file)).unwrap(), "{file}");
    }
}

#[test]
fn evasion_records_the_trigger() {
    let dir = tempfile::tempdir().unwrap();
    let out = plan("evasion-trigger", dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let diagnostics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diagnostics["trigger_active"], true);
}

#[test]
fn iteration_limit_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = drive(&["plan", "stop-50m", "--max-iter", "1", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let history = fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2);
}

#[test]
fn errors_exit_with_one() {
    let out = drive(&["plan", "no-such-scenario"]);
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr(&out);
    assert!(msg.contains("stop-50m") && msg.contains("stop-obstacle") && msg.contains("evasion-trigger"), "{msg}");

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let preset = drive(&["presets", "--show", "stop-50m"]);
    let mut json: serde_json::Value = serde_json::from_slice(&preset.stdout).unwrap();
    json["nodes"] = 4.into();
    fs::write(&bad, json.to_string()).unwrap();
    let out = drive(&["plan", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("at least 10 nodes"), "{}", stderr(&out));

    let out = drive(&["plan", "stop-50m", "--substeps", "0"]);
    assert_eq!(out.status.code(), Some(1));
    let out = drive(&["plan"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn check_discretization_passes_on_presets() {
    let out = drive(&["check-discretization", "stop-50m"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("max scaled error"));
}

#[test]
fn presets_are_listed() {
    let out = drive(&["presets"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.lines().count(), 3);
    assert!(text.contains("evasion trigger"));
}

#[test]
fn subproblem_dump() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sub.txt");
    let out = drive(&[
        "plan",
        "stop-50m",
        "--max-iter",
        "1",
        "--out",
        dir.path().to_str().unwrap(),
        "--dump-subproblem",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let text = fs::read_to_string(path).unwrap();
    assert!(text.starts_with("# variables "));
    assert!(text.contains("# cone second_order"));
}
