use std::process::Command;

fn sphmmd(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_sphmmd"))
        .args(args)
        .output()
        .expect("binary runs");
    (out.status.code().unwrap_or(-1), String::from_utf8(out.stdout).unwrap())
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn expand_rbf() {
    let (code, out) = sphmmd(&["expand", "--kernel", "rbf", "--sigma", "1", "--q", "3", "--order", "20"]);
    assert_eq!(code, 0);
    assert!(out.starts_with("l,b_l,closed_form_b_l,bound\n"));
    let rows = rows(&out);
    assert_eq!(rows.len(), 21);
    for r in &rows {
        let b: f64 = r[1].parse().unwrap();
        let bound: f64 = r[3].parse().unwrap();
        assert!(b > 0.0 && b <= bound, "{r:?}");
    }
}

#[test]
fn expand_gendist() {
    let (code, out) = sphmmd(&["expand", "--kernel", "gendist", "--s", "1.5", "--q", "3", "--order", "4"]);
    assert_eq!(code, 0);
    let rows = rows(&out);
    assert_eq!(rows[0][0], "0");
    let b0: f64 = rows[0][1].parse().unwrap();
    let closed: f64 = rows[0][2].parse().unwrap();
    assert!((b0 - 4.0 / 3.0).abs() < 1e-12 && (closed - 4.0 / 3.0).abs() < 1e-15);
}

#[test]
fn expand_truncated_echoes_input() {
    let (code, out) = sphmmd(&["expand", "--kernel", "truncated", "--coeffs", "1:1,2:40,3:40", "--q", "8192"]);
    assert_eq!(code, 0);
    let got: Vec<(String, f64)> = rows(&out)
        .into_iter()
        .map(|r| (r[0].clone(), r[1].parse().unwrap()))
        .collect();
    assert_eq!(
        got,
        vec![("1".into(), 1.0), ("2".into(), 40.0), ("3".into(), 40.0)]
    );
}

#[test]
fn usage_and_config_errors_exit_2() {
    assert_eq!(sphmmd(&["nonsense"]).0, 2);
    assert_eq!(sphmmd(&["expand", "--kernel", "gendist", "--q", "3"]).0, 2);
    assert_eq!(sphmmd(&["expand", "--kernel", "gendist", "--s", "9", "--q", "3"]).0, 2);
    assert_eq!(sphmmd(&["--config", "/nonexistent.toml", "minimize"]).0, 2);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[optim]\nloss = \"sfrik\"\nsteps = 3\nwobble = 1\n[data]\nq = 4\nn = 4\n").unwrap();
    assert_eq!(sphmmd(&["--config", path.to_str().unwrap(), "minimize"]).0, 2);
}

#[test]
fn verify_reports_json() {
    let (code, out) = sphmmd(&["verify", "--suite", "feature-map"]);
    assert_eq!(code, 0);
    let checks: serde_json::Value = serde_json::from_str(&out).unwrap();
    for c in checks.as_array().unwrap() {
        for key in ["name", "status", "measured", "tolerance"] {
            assert!(c.get(key).is_some());
        }
        assert_eq!(c["status"], "pass");
    }
}

#[test]
fn failing_check_exits_1() {
    // The order-40 GenDist reconstruction check does not meet its tolerance.
    let (code, out) = sphmmd(&["verify", "--suite", "kernels-psd"]);
    assert_eq!(code, 1);
    assert!(out.contains("\"fail\""));
}

#[test]
fn minimize_writes_outputs_and_stats_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        r#"
seed = 4
[kernel]
q = 6
family = "truncated"
coefficients = [[1, 1.0], [2, 10.0]]
centered = true
[optim]
loss = "sfrik"
steps = 40
eval_every = 10
[data]
q = 6
n = 16
clusters = 2
"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let (code, _) = sphmmd(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", "2", "minimize"]);
    assert_eq!(code, 0);
    let traj = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("step,total,align,unif,mean_norm,autocorr_dev,mc_mmd,mc_mmd_se\n"));
    assert_eq!(traj.lines().count(), 6);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["steps"], 40);

    let z1 = out.join("final_z1.csv");
    let exports = dir.path().join("exports");
    let (code, stats) = sphmmd(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        exports.to_str().unwrap(),
        "stats",
        "--z1",
        z1.to_str().unwrap(),
        "--export-samples",
        "12",
        "--export-harmonics",
    ]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&stats).unwrap();
    assert!(v["report"]["value"].is_number() && v["mc_mmd_se"].as_f64().unwrap() > 0.0);
    let samples = std::fs::read_to_string(exports.join("uniform_samples.csv")).unwrap();
    assert_eq!(samples.lines().filter(|l| !l.starts_with('#')).count(), 12);
    let m2 = std::fs::read_to_string(exports.join("m2.csv")).unwrap();
    assert_eq!(m2.lines().count(), 6 * 7 / 2 - 1);
}
