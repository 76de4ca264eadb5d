use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_avgsketch"))
}

#[test]
fn nonexpansion_run_passes_and_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.json");
    let status = bin()
        .args([
            "sketch",
            "nonexpansion",
            "--trials",
            "200",
            "--seed",
            "3",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(report["trials"], 200);
    assert!(report["params"]["theory"].is_object());
}

#[test]
fn failing_gates_give_a_nonzero_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"kind": "nonexpansion", "trials": 50, "threshold": -1.0}"#,
    )
    .unwrap();
    let status = bin().args(["run", "--config"]).arg(&cfg).output().unwrap().status;
    assert_eq!(status.code(), Some(1));
}

#[test]
fn bad_configs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"kind": "oracle", "bogus": 1}"#).unwrap();
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn index_build_and_query() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let idx = dir.path().join("idx");
    let ok = bin()
        .args([
            "generate",
            "gaussian-grid",
            "--n",
            "100",
            "--dim",
            "8",
            "--scale",
            "40",
            "--range",
            "200",
            "--out",
        ])
        .arg(&data)
        .status()
        .unwrap();
    assert!(ok.success());
    let ok = bin()
        .args(["ann", "build", "--r", "10", "--c", "3", "--reps", "16", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(&idx)
        .status()
        .unwrap();
    assert!(ok.success());
    let row = std::fs::read_to_string(&data)
        .unwrap()
        .lines()
        .nth(1)
        .unwrap()
        .to_string();
    let out = bin()
        .args(["ann", "query", "--index"])
        .arg(&idx)
        .arg(&row)
        .output()
        .unwrap();
    assert!(out.status.success());
    let answer: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(answer["distance"], 0.0);
}
