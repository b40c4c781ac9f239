//! End-to-end command flows through the CLI entry point.

use std::fs;
use std::path::Path;

use tempfile::tempdir;

fn xmodal(args: &[&str]) -> anyhow::Result<()> {
    let mut argv = vec!["xmodal"];
    argv.extend_from_slice(args);
    xmodal_cli::run(argv)
}

fn gen_tiny(dir: &Path) {
    xmodal(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "gen-synthetic",
        "--clusters",
        "4",
        "--per-cluster",
        "10",
        "--dim-img",
        "12",
        "--dim-txt",
        "9",
        "--noise-sigma",
        "0.3",
        "--seed",
        "7",
    ])
    .unwrap();
}

#[test]
fn generate_train_evaluate_completes() {
    let tmp = tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    gen_tiny(&data);
    let manifest = data.join("manifest.toml");
    xmodal(&[
        "--out-dir",
        run.to_str().unwrap(),
        "train",
        "--manifest",
        manifest.to_str().unwrap(),
        "--epochs",
        "3",
        "--batch-size",
        "8",
        "--common-dim",
        "16",
        "--encoder-dim",
        "12",
    ])
    .unwrap();
    assert!(run.join("model.gpld").exists());
    assert!(run.join("train_log.csv").exists());
    assert!(run.join("config_echo.json").exists());

    let dump = run.join("per_query_ap.csv");
    xmodal(&[
        "--out-dir",
        run.to_str().unwrap(),
        "evaluate",
        "--manifest",
        manifest.to_str().unwrap(),
        "--checkpoint",
        run.join("model.gpld").to_str().unwrap(),
        "--map-k",
        "5",
        "--dump-ap",
        dump.to_str().unwrap(),
    ])
    .unwrap();
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next().unwrap(), "task,k,map,n_queries,n_excluded");
    let tasks: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(tasks, ["Img2Txt", "Txt2Img", "Avg"]);

    let ap = fs::read_to_string(dump).unwrap();
    assert!(ap.starts_with("task,query,ap\n"));
    // Both directions over the 8-instance test split.
    assert_eq!(ap.lines().count(), 1 + 16);
}

#[test]
fn repeat_invocations_write_identical_bytes() {
    let tmp = tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_tiny(&data);
    let manifest = data.join("manifest.toml");
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let run = tmp.path().join(name);
        xmodal(&[
            "--out-dir",
            run.to_str().unwrap(),
            "train",
            "--manifest",
            manifest.to_str().unwrap(),
            "--epochs",
            "2",
            "--batch-size",
            "8",
            "--common-dim",
            "16",
            "--encoder-dim",
            "12",
            "--seed",
            "11",
        ])
        .unwrap();
        xmodal(&[
            "--out-dir",
            run.to_str().unwrap(),
            "evaluate",
            "--manifest",
            manifest.to_str().unwrap(),
            "--checkpoint",
            run.join("model.gpld").to_str().unwrap(),
            "--map-k",
            "5",
        ])
        .unwrap();
        outputs.push((
            fs::read(run.join("metrics.csv")).unwrap(),
            fs::read(run.join("train_log.csv")).unwrap(),
            fs::read(run.join("model.gpld")).unwrap(),
        ));
    }
    assert_eq!(outputs[0].0, outputs[1].0, "metrics differ");
    assert_eq!(outputs[0].1, outputs[1].1, "logs differ");
    assert_eq!(outputs[0].2, outputs[1].2, "checkpoints differ");
}

#[test]
fn baseline_flag_combination_resolves() {
    let tmp = tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    gen_tiny(&data);
    xmodal(&[
        "--out-dir",
        run.to_str().unwrap(),
        "train",
        "--manifest",
        data.join("manifest.toml").to_str().unwrap(),
        "--epochs",
        "1",
        "--batch-size",
        "8",
        "--common-dim",
        "16",
        "--encoder-dim",
        "12",
        "--alpha",
        "0",
        "--beta",
        "0",
        "--no-mc",
        "--no-da",
    ])
    .unwrap();
    let echo: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("config_echo.json")).unwrap()).unwrap();
    let cfg = &echo["train_config"];
    assert_eq!(cfg["alpha"], 0.0);
    assert_eq!(cfg["beta"], 0.0);
    assert_eq!(cfg["use_mc"], false);
    assert_eq!(cfg["use_da"], false);
    // The log confirms the objective reduced to the pairwise term.
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    for line in log.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols[2], cols[5], "l_gpl must equal l_pdl: {line}");
        assert_eq!(cols[6], "0");
    }
}

#[test]
fn grid_search_writes_expected_row_count() {
    let tmp = tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = tmp.path().join("run");
    gen_tiny(&data);
    xmodal(&[
        "--out-dir",
        run.to_str().unwrap(),
        "grid-search",
        "--manifest",
        data.join("manifest.toml").to_str().unwrap(),
        "--alphas",
        "0,0.5,1,2,5",
        "--betas",
        "0.1",
        "--epochs",
        "1",
        "--batch-size",
        "8",
        "--common-dim",
        "16",
        "--encoder-dim",
        "12",
        "--map-k",
        "5",
    ])
    .unwrap();
    let grid = fs::read_to_string(run.join("grid.csv")).unwrap();
    let lines: Vec<&str> = grid.lines().collect();
    assert_eq!(lines[0], "alpha,beta,map");
    assert_eq!(lines.len(), 1 + 5);
}

#[test]
fn unknown_flags_are_rejected() {
    let tmp = tempdir().unwrap();
    let err = xmodal(&[
        "--out-dir",
        tmp.path().to_str().unwrap(),
        "train",
        "--manifest",
        "nowhere.toml",
        "--frobnicate",
    ])
    .unwrap_err();
    assert!(err.downcast_ref::<clap::Error>().is_some(), "{err}");
}

#[test]
fn missing_manifest_is_a_clean_error() {
    let tmp = tempdir().unwrap();
    let err = xmodal(&[
        "--out-dir",
        tmp.path().to_str().unwrap(),
        "train",
        "--manifest",
        tmp.path().join("missing.toml").to_str().unwrap(),
        "--epochs",
        "1",
    ])
    .unwrap_err();
    assert!(err.downcast_ref::<clap::Error>().is_none());
    assert!(err.to_string().contains("missing.toml"), "{err}");
}
