use std::process::Command;

fn magflow(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_magflow")).args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

#[test]
fn mane_prints_the_critical_value() {
    let (code, out, _) = magflow(&["mane", "--k", "-1", "--lambda", "1"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!((v["s0"].as_f64().unwrap() - 1.0).abs() < 1e-3);
    assert!(v["lower_witness_r"].as_f64().is_some());
    // sup of ‖θ‖ = ‖z‖ over the radial grid bounds s0 from above
    assert!(v["upper_bound_sup_theta"].as_f64().unwrap() >= v["s0"].as_f64().unwrap());
}

#[test]
fn flow_prints_csv() {
    let (code, out, _) = magflow(&["flow", "--model", "torus", "--b", "1", "--t-span", "3.14159", "--rows", "2"]);
    assert_eq!(code, 0);
    let mut lines = out.lines();
    assert_eq!(lines.next().unwrap(), "t,x1,x2,v1,v2,speed_drift");
    let last: Vec<f64> = out.lines().last().unwrap().split(',').map(|c| c.parse().unwrap()).collect();
    assert!((last[2] - 2.0).abs() < 1e-5, "{last:?}");
}

#[test]
fn hopf_integral_schema() {
    let (code, out, _) = magflow(&["hopf-integral", "--model", "torus", "--b", "0.5", "--samples", "2000"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    for key in ["mean", "stderr", "n"] {
        assert!(v[key].is_number(), "{key}");
    }
    assert_eq!(v["normalization"], "probability");
}

#[test]
fn exit_codes() {
    assert_eq!(magflow(&["--no-such-flag"]).0, 1);
    assert_eq!(magflow(&["flow"]).0, 1);
    assert_eq!(magflow(&["flow", "--model", "klein"]).0, 1);
    assert_eq!(magflow(&["--help"]).0, 0);
    // the equatorial geodesic of the round sphere is conjugate at π
    let (code, _, err) = magflow(&["green", "--model", "sphere"]);
    assert_eq!(code, 2);
    assert!(err.contains("3.14159"), "{err}");
}

#[test]
fn model_file_and_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("disk.toml");
    std::fs::write(&model, "model = \"disk\"\ncurvature_k = -1.0\nb_expr = \"0.6\"\n").unwrap();
    let out = dir.path().join("out");
    let (code, _, err) = magflow(&[
        "green",
        "--model-file",
        model.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let csv = std::fs::read_to_string(out.join("green.csv")).unwrap();
    assert!(csv.starts_with("S_plus_11,S_minus_11\n"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("green.json")).unwrap()).unwrap();
    assert!((json["outputs"]["S_plus"][0][0].as_f64().unwrap() + 0.8).abs() < 1e-5);
    assert!(out.join("green.meta.json").exists());
}

#[test]
fn suite_failures_are_per_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let suite = dir.path().join("s.toml");
    std::fs::write(
        &suite,
        "[[experiment]]\nid = \"bad\"\nkind = \"flow\"\nmodel = { model = \"klein\" }\n\n[[experiment]]\nid = \"m\"\nkind = \"mane\"\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let (code, stdout, _) = magflow(&["suite", suite.to_str().unwrap(), "--out-dir", out.to_str().unwrap(), "--workers", "2"]);
    assert_eq!(code, 0);
    assert!(stdout.contains("bad") && stdout.contains("error"));
    let bad: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("bad.json")).unwrap()).unwrap();
    assert_eq!(bad["status"], "error");
    let good: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("m.json")).unwrap()).unwrap();
    assert_eq!(good["status"], "ok");

    std::fs::write(&suite, "seed = 1\n[[experiment]\n").unwrap();
    let (code, _, err) = magflow(&["suite", suite.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("line 2"), "{err}");
}
