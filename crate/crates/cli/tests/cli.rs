use std::path::Path;
use std::process::{Command, Output};

fn stringfit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stringfit"))
        .args(args)
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn simulate_scalar(dir: &Path, sigma: f64) -> String {
    let config = dir.join("sim.json");
    std::fs::write(
        &config,
        format!(r#"{{"kind":"scalar","function":"f3","samples":50,"sigma":{sigma},"seed":1}}"#),
    )
    .unwrap();
    let out = dir.join("sim");
    let res = stringfit(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    out.join("samples.csv").to_string_lossy().into_owned()
}

#[test]
fn fit_writes_estimate_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_scalar(dir.path(), 0.0);
    let out = dir.path().join("fit");
    let res = stringfit(&[
        "fit",
        "--data",
        &data,
        "--out",
        out.to_str().unwrap(),
        "--burn-in",
        "100",
        "--steps",
        "1000",
        "--thin",
        "5",
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let theta = std::fs::read_to_string(out.join("theta.csv")).unwrap();
    assert!(theta.starts_with("group,index,theta\n"));
    assert_eq!(theta.lines().count(), 21);
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.starts_with("iter,lambda_f,z_0\n"));
    assert_eq!(trace.lines().count(), 1 + 200);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["estimator"], "posterior-mean");
    assert!(summary["sigma2_hat"][0].as_f64().unwrap() < 1e-3);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "fit");
    assert_eq!(manifest["seed"], 0);
}

#[test]
fn diagnose_writes_profile() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate_scalar(dir.path(), 0.5);
    let out = dir.path().join("diag");
    let res = stringfit(&[
        "diagnose",
        "--data",
        &data,
        "--out",
        out.to_str().unwrap(),
        "--alpha-grid",
        "1e-3:1e3:13",
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let profile = std::fs::read_to_string(out.join("alpha_profile.csv")).unwrap();
    assert!(profile.starts_with("alpha,eps2_f,eps2_q,log_marginal,gcv,aic,trace_h\n"));
    assert_eq!(profile.lines().count(), 14);
}

#[test]
fn exit_codes_classify_failures() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out = out.to_str().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "r,y\n0.5,1.0\nnot-a-number,2\n").unwrap();
    assert_eq!(
        code(&stringfit(&[
            "fit",
            "--data",
            bad.to_str().unwrap(),
            "--out",
            out
        ])),
        3
    );

    let data = simulate_scalar(dir.path(), 0.5);
    assert_eq!(
        code(&stringfit(&[
            "fit", "--data", &data, "--out", out, "--prior", "Q"
        ])),
        2
    );
    assert_eq!(
        code(&stringfit(&[
            "fit", "--data", &data, "--out", out, "--steps", "7", "--thin", "5"
        ])),
        2
    );
    assert_eq!(code(&stringfit(&["bench", "--out", out])), 2);
    assert_eq!(code(&stringfit(&["bench", "--study", "fig9", "--out", out])), 2);
    let missing = dir.path().join("missing.csv");
    assert_eq!(
        code(&stringfit(&[
            "fit",
            "--data",
            missing.to_str().unwrap(),
            "--out",
            out
        ])),
        5
    );
}
