//! End-to-end CLI behavior: parse/validation errors, exit-code protocol,
//! report schema, artifacts, and the custom-section hypersurface kind.

use std::process::Command;

fn run(config: &str, extra: &[&str]) -> (Option<i32>, String, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("scenario.json");
    std::fs::write(&config_path, config).unwrap();
    let out = dir.path().join("out");
    let output = Command::new(env!("CARGO_BIN_EXE_nullot"))
        .arg("check")
        .arg(&config_path)
        .arg("--out")
        .arg(&out)
        .args(extra)
        .output()
        .unwrap();
    let stderr = String::from_utf8_lossy(&output.stderr).into_owned();
    (output.status.code(), stderr, dir)
}

fn read_report(dir: &tempfile::TempDir) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.path().join("out/report.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn minimal_config_fills_defaults() {
    // N omitted: defaults to the metric dimension (4)
    let (code, _, dir) = run(
        r#"{
  "metric": { "name": "minkowski", "params": { "n": 4 } },
  "hypersurface": { "kind": "cone", "resolution": [8, 8], "s_min": 0.2, "s_max": 1.5 },
  "checks": ["nc1"]
}"#,
        &[],
    );
    assert_eq!(code, Some(0));
    let report = read_report(&dir);
    assert_eq!(report["config"]["n_effective"], serde_json::Value::Null);
    assert_eq!(report["results"]["nc1"]["verdict"], true);
    assert_eq!(report["seed"], 1); // default seed filled
}

#[test]
fn n_below_two_is_a_validation_error() {
    let (code, stderr, _) = run(
        r#"{
  "metric": { "name": "minkowski", "params": { "n": 4 } },
  "hypersurface": { "kind": "cone", "resolution": [8, 8], "s_min": 0.2, "s_max": 1.5 },
  "n_effective": 2.0,
  "checks": ["nc1"]
}"#,
        &[],
    );
    assert_eq!(code, Some(3));
    assert!(stderr.contains("N must exceed 2"), "{stderr}");
}

#[test]
fn unknown_keys_are_rejected_with_position() {
    let (code, stderr, _) = run(
        r#"{
  "metric": { "name": "minkowski", "params": { "n": 4 } },
  "hypersurface": { "kind": "cone", "resolution": [8, 8], "s_min": 0.2, "s_max": 1.5 },
  "checks": ["nc1"],
  "surprise": true
}"#,
        &[],
    );
    assert_eq!(code, Some(3));
    assert!(stderr.contains("line"), "{stderr}");
    assert!(stderr.contains("surprise"), "{stderr}");
}

#[test]
fn validation_collects_all_violations() {
    let (code, stderr, _) = run(
        r#"{
  "metric": { "name": "kerr" },
  "hypersurface": { "kind": "cone", "resolution": [4, 8], "s_min": 0.5, "s_max": 0.2 },
  "n_effective": 1.0,
  "checks": []
}"#,
        &[],
    );
    assert_eq!(code, Some(3));
    assert!(stderr.contains("unknown metric"), "{stderr}");
    assert!(stderr.contains("N must exceed 2"), "{stderr}");
    assert!(stderr.contains("below the minimum of 8"), "{stderr}");
    assert!(stderr.contains("s_min < s_max"), "{stderr}");
    assert!(stderr.contains("at least one check"), "{stderr}");
}

#[test]
fn hawking_scenario_passes_with_equality_flag() {
    let (code, _, dir) = run(
        r#"{
  "metric": { "name": "schwarzschild-lemaitre", "params": { "r_s": 1.0 } },
  "hypersurface": {
    "kind": "horizon",
    "resolution": [8, 16],
    "t_max": 3.0,
    "section_offsets": [0.2, 0.4],
    "t_future": 2.0
  },
  "n_effective": 4.0,
  "checks": ["nc1", "hawking", "rigidity"],
  "seed": 11
}"#,
        &[],
    );
    assert_eq!(code, Some(0));
    let report = read_report(&dir);
    assert_eq!(report["results"]["hawking"]["verdict"], true);
    assert_eq!(report["results"]["hawking"]["equality"], true);
    assert_eq!(report["exit_status"], 0);
}

#[test]
fn adversarial_weight_fails_with_serialized_location() {
    let (code, _, dir) = run(
        r#"{
  "metric": { "name": "minkowski", "params": { "n": 4 } },
  "hypersurface": { "kind": "cone", "resolution": [8, 16], "s_min": 0.1, "s_max": 3.0 },
  "weight": { "expr": "(s-1)^2", "smoothness": "c2" },
  "n_effective": 6.0,
  "checks": ["nc1"],
  "seed": 5
}"#,
        &[],
    );
    assert_eq!(code, Some(1));
    let report = read_report(&dir);
    assert_eq!(report["results"]["nc1"]["verdict"], false);
    let loc = &report["results"]["nc1"]["worst_location"];
    assert!(loc["node"].is_u64() || loc["node"].is_i64());
    assert!(loc["t"].is_f64());
    assert_eq!(report["exit_status"], 1);
}

#[test]
fn custom_section_runs_the_product_slab() {
    // the product-metric horizon written out as an explicit section
    let (code, _, dir) = run(
        r#"{
  "metric": { "name": "product-surface-m2", "params": { "curvature": 0.0 } },
  "hypersurface": {
    "kind": "custom-section",
    "embed": ["0", "0", "u", "v"],
    "l_field": ["1", "1", "0", "0"],
    "params": [
      { "period": 6.283185307179586, "count": 8 },
      { "period": 6.283185307179586, "count": 8 }
    ],
    "window": [0.0, 2.0]
  },
  "n_effective": 4.0,
  "checks": ["nc1", "riccati"],
  "seed": 3
}"#,
        &[],
    );
    assert_eq!(code, Some(0));
    let report = read_report(&dir);
    assert_eq!(report["results"]["nc1"]["verdict"], true);
    assert_eq!(report["results"]["riccati"]["verdict"], true);
}

#[test]
fn stability_check_emits_margin_table() {
    let (code, _, dir) = run(
        r#"{
  "metric": { "name": "minkowski", "params": { "n": 4 } },
  "hypersurface": { "kind": "cone", "resolution": [8, 8], "s_min": 0.2, "s_max": 1.2 },
  "n_effective": 4.0,
  "checks": ["stability"],
  "stability": { "sigma": -1.0, "epsilons": [0.0, 0.02, 0.01] },
  "seed": 2
}"#,
        &[],
    );
    assert_eq!(code, Some(0));
    let report = read_report(&dir);
    assert_eq!(report["results"]["stability"]["limit_consistent"], true);
    let csv = std::fs::read_to_string(dir.path().join("out/stability.csv")).unwrap();
    assert!(csv.starts_with("epsilon,worst_margin\n"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn weighted_dsl_curve_artifacts_roundtrip() {
    let (code, _, dir) = run(
        r#"{
  "metric": { "name": "minkowski", "params": { "n": 4 } },
  "hypersurface": { "kind": "cone", "resolution": [8, 8], "s_min": 0.2, "s_max": 2.0 },
  "weight": { "expr": "0.5*log(s)", "smoothness": "c2" },
  "n_effective": 5.0,
  "checks": ["nc1", "lightcone"],
  "dump_patch": true,
  "seed": 9
}"#,
        &[],
    );
    assert_eq!(code, Some(0));
    let lc = std::fs::read_to_string(dir.path().join("out/lightcone.csv")).unwrap();
    assert!(lc.starts_with("s,a_raw,a_normalized\n"));
    // 17-significant-digit floats round-trip losslessly
    let first_value = lc.lines().nth(1).unwrap().split(',').next().unwrap();
    let parsed: f64 = first_value.parse().unwrap();
    assert_eq!(format!("{parsed:.17e}"), first_value);
    let patch_csv = std::fs::read_to_string(dir.path().join("out/patch.csv")).unwrap();
    assert!(patch_csv.starts_with("node,t,t,x,y,z,w_l,a_z,det_jbar\n"));
}

#[test]
fn threads_env_var_fallback_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("scenario.json");
    std::fs::write(
        &config_path,
        r#"{
  "metric": { "name": "minkowski", "params": { "n": 4 } },
  "hypersurface": { "kind": "cone", "resolution": [8, 8], "s_min": 0.2, "s_max": 1.0 },
  "checks": ["nc1"]
}"#,
    )
    .unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_nullot"))
        .arg("check")
        .arg(&config_path)
        .arg("--out")
        .arg(dir.path().join("out"))
        .env("NULLOT_THREADS", "2")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
}

#[test]
fn tolerance_scale_flag_loosens_verdicts() {
    let config = r#"{
  "metric": { "name": "minkowski", "params": { "n": 4 } },
  "hypersurface": { "kind": "cone", "resolution": [8, 8], "s_min": 0.1, "s_max": 3.0 },
  "weight": { "expr": "(s-1)^2", "smoothness": "c2" },
  "n_effective": 6.0,
  "checks": ["nc1"]
}"#;
    let (code, _, _) = run(config, &[]);
    assert_eq!(code, Some(1));
    // scaling the tolerance far up turns the same run into a pass
    let (code, _, _) = run(config, &["--tolerance-scale", "1e6"]);
    assert_eq!(code, Some(0));
}
