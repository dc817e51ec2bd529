//! Orchestration behavior through the public pipeline API and the binary:
//! manifest bookkeeping, failure handling, stage subsets, and the report
//! rerun path.

use std::fs;
use std::path::Path;
use std::process::Command;

use causaltwin_cli::config::LoadedConfig;
use causaltwin_cli::pipeline::{
    load_manifest, manifest_path, rerun_report, run_pipeline, sha256_file, StageSelection,
};

const GRAPH: &str = r#"{
  "nodes": ["B1", "B2", "B3", "B4"],
  "lag_order": 1,
  "edges": [
    {"cause": "B2", "effect": "B1", "lags": [1]},
    {"cause": "B1", "effect": "B2", "lags": [1]},
    {"cause": "B3", "effect": "B2", "lags": [0]},
    {"cause": "B4", "effect": "B3", "lags": [1]}
  ]
}"#;

/// A small synthetic experiment with one scenario of each kind.
const CONFIG: &str = r#"{
  "graph": "graph.json",
  "data": {
    "kind": "synthetic",
    "blocks": 2,
    "samples_per_block": 300,
    "noise": {"kind": "laplace", "scales": [0.3, 0.3, 0.3, 1.0]},
    "couplings": [
      {"lag": 1, "cause": "B2", "effect": "B1", "value": 0.4},
      {"lag": 1, "cause": "B1", "effect": "B2", "value": 0.4},
      {"lag": 0, "cause": "B3", "effect": "B2", "value": 0.5},
      {"lag": 1, "cause": "B4", "effect": "B3", "value": 0.3}
    ]
  },
  "scenarios": [
    {
      "kind": "what_if",
      "name": "loop-boost",
      "overrides": [{"lag": 1, "cause": "B1", "effect": "B2", "value": 0.8}],
      "targets": ["B1", "B2"]
    },
    {
      "kind": "counterfactual",
      "name": "cut-b4",
      "remove": {"edge": {"cause": "B4", "effect": "B3"}}
    }
  ],
  "output_dir": "out",
  "seed": 42
}"#;

fn write_workspace(dir: &Path, config: &str) -> LoadedConfig {
    fs::write(dir.join("graph.json"), GRAPH).unwrap();
    fs::write(dir.join("config.json"), config).unwrap();
    LoadedConfig::load(&dir.join("config.json")).unwrap()
}

#[test]
fn full_synthetic_run_records_every_output_with_matching_checksums() {
    let dir = tempfile::tempdir().unwrap();
    let loaded = write_workspace(dir.path(), CONFIG);
    let manifest = run_pipeline(&loaded, &StageSelection::run_all()).unwrap();

    assert!(!manifest.incomplete);
    assert!(manifest.failed_stage.is_none());
    let names: Vec<&str> = manifest.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(
        names,
        ["validate", "data", "train", "fit", "scenarios", "tfd", "report"]
    );
    assert!(manifest.inputs.is_empty(), "synthetic runs read no inputs");

    let out = dir.path().join("out");
    for stage in &manifest.stages {
        assert!(!stage.outputs.is_empty(), "{} wrote nothing", stage.name);
        for file in &stage.outputs {
            let path = out.join(&file.path);
            assert!(path.is_file(), "{} is missing", file.path);
            assert_eq!(
                sha256_file(&path).unwrap(),
                file.sha256,
                "{} does not match its recorded checksum",
                file.path
            );
        }
    }
    // The manifest on disk round-trips to what the run returned.
    let reloaded = load_manifest(&out).unwrap();
    assert_eq!(reloaded.stages, manifest.stages);
}

#[test]
fn missing_block_file_fails_the_data_stage_and_keeps_earlier_stages() {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{
  "graph": "graph.json",
  "data": {"kind": "files", "blocks": ["no_such_block.tsv"]},
  "output_dir": "out",
  "seed": 1
}"#;
    let loaded = write_workspace(dir.path(), config);
    let err = run_pipeline(&loaded, &StageSelection::run_all()).unwrap_err();
    assert_eq!(err.exit_code(), 2, "missing data must be a data error: {err}");

    let manifest = load_manifest(&dir.path().join("out")).unwrap();
    assert!(manifest.incomplete);
    assert_eq!(manifest.failed_stage.as_deref(), Some("data"));
    assert!(manifest.error.is_some());
    let names: Vec<&str> = manifest.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["validate"], "completed stages before the failure stay recorded");
    for file in &manifest.stage("validate").unwrap().outputs {
        assert!(dir.path().join("out").join(&file.path).is_file());
    }
}

#[test]
fn report_rerun_from_manifest_is_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let loaded = write_workspace(dir.path(), CONFIG);
    run_pipeline(&loaded, &StageSelection::run_all()).unwrap();

    let out = dir.path().join("out");
    let manifest_before = fs::read(manifest_path(&out)).unwrap();
    let report_before = fs::read(out.join("report/summary.csv")).unwrap();

    rerun_report(&out).unwrap();

    assert_eq!(
        fs::read(manifest_path(&out)).unwrap(),
        manifest_before,
        "rerunning the report must not change the manifest"
    );
    assert_eq!(
        fs::read(out.join("report/summary.csv")).unwrap(),
        report_before
    );
}

#[test]
fn carried_over_training_differs_only_from_the_second_block_on() {
    let dir_fresh = tempfile::tempdir().unwrap();
    let dir_carry = tempfile::tempdir().unwrap();
    let carry_config = CONFIG.replace(
        "\"output_dir\"",
        "\"training\": {\"enabled\": true, \"carry_over\": true},\n  \"output_dir\"",
    );
    let fresh = write_workspace(dir_fresh.path(), CONFIG);
    let carry = write_workspace(dir_carry.path(), &carry_config);
    run_pipeline(&fresh, &StageSelection::train_only()).unwrap();
    run_pipeline(&carry, &StageSelection::train_only()).unwrap();

    let read = |dir: &Path, name: &str| {
        fs::read(dir.join("out/train").join(name)).unwrap()
    };
    assert_eq!(
        read(dir_fresh.path(), "block_00_couplings.tsv"),
        read(dir_carry.path(), "block_00_couplings.tsv"),
        "the first block starts from the same fresh network either way"
    );
    assert_ne!(
        read(dir_fresh.path(), "block_01_couplings.tsv"),
        read(dir_carry.path(), "block_01_couplings.tsv"),
        "carried weights must change the second block's estimates"
    );
}

#[test]
fn zero_valued_counterfactual_keeps_the_paired_simulations_identical() {
    let dir = tempfile::tempdir().unwrap();
    // The B4 -> B3 edge exists in the graph but gets no generating value,
    // and the scenario bases on ground truth, so removal changes nothing.
    let config = r#"{
  "graph": "graph.json",
  "data": {
    "kind": "synthetic",
    "blocks": 1,
    "samples_per_block": 300,
    "noise": {"kind": "gaussian", "scales": [0.3, 0.3, 0.3, 1.0]},
    "couplings": [
      {"lag": 1, "cause": "B2", "effect": "B1", "value": 0.4},
      {"lag": 0, "cause": "B3", "effect": "B2", "value": 0.5}
    ]
  },
  "scenarios": [
    {
      "kind": "counterfactual",
      "name": "cut-idle-edge",
      "base": "truth",
      "remove": {"edge": {"cause": "B4", "effect": "B3"}}
    }
  ],
  "output_dir": "out",
  "seed": 9
}"#;
    let loaded = write_workspace(dir.path(), config);
    run_pipeline(&loaded, &StageSelection::run_all()).unwrap();
    let scenario_dir = dir.path().join("out/scenarios/cut-idle-edge");
    assert_eq!(
        fs::read(scenario_dir.join("baseline.tsv")).unwrap(),
        fs::read(scenario_dir.join("modified.tsv")).unwrap(),
        "removing a zero coupling must not move a single sample"
    );
}

#[test]
fn whatif_selection_runs_only_the_stages_its_base_needs() {
    let dir = tempfile::tempdir().unwrap();
    let loaded = write_workspace(dir.path(), CONFIG);
    let manifest = run_pipeline(
        &loaded,
        &StageSelection::whatif(Some("loop-boost".to_string())),
    )
    .unwrap();
    let names: Vec<&str> = manifest.stages.iter().map(|s| s.name.as_str()).collect();
    // The default scenario base is the least-squares fit, so training and
    // spectral sweeps stay out of the run.
    assert_eq!(names, ["validate", "data", "fit", "scenarios"]);
    let outputs: Vec<&str> = manifest
        .stage("scenarios")
        .unwrap()
        .outputs
        .iter()
        .map(|f| f.path.as_str())
        .collect();
    assert!(
        outputs.iter().all(|p| p.contains("loop-boost")),
        "only the requested scenario may run: {outputs:?}"
    );
    assert!(!dir.path().join("out/train").exists());
}

#[test]
fn unknown_scenario_name_is_a_validation_error_with_exit_code_1() {
    let dir = tempfile::tempdir().unwrap();
    write_workspace(dir.path(), CONFIG);
    let output = Command::new(env!("CARGO_BIN_EXE_causaltwin"))
        .arg("whatif")
        .arg("--config")
        .arg(dir.path().join("config.json"))
        .arg("--scenario")
        .arg("no-such-thing")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("no-such-thing"),
        "stderr should name the missing scenario: {stderr}"
    );
}
