use std::path::Path;
use std::process::{Command, Output};

fn write_inputs(dir: &Path) {
    let mut csv = String::from("x0,color,label\n");
    for i in 0..40 {
        let y = i % 2;
        let x = y as f64 * 3.0 + (i as f64 * 0.37).sin();
        let color = if (i / 2) % 3 == 0 { "red" } else { "blue" };
        csv.push_str(&format!("{x},{color},{}\n", if y == 0 { "no" } else { "yes" }));
    }
    std::fs::write(dir.join("data.csv"), csv).unwrap();
    std::fs::write(
        dir.join("manifest.json"),
        r#"{"csv_path": "data.csv", "label_column": "label", "categorical_columns": ["color"]}"#,
    )
    .unwrap();
    let config = serde_json::json!({
        "dataset": "manifest.json",
        "seeds": [0, 1],
        "cv_folds": 3,
        "alpha_grid": {"count": 3, "min": 0.2, "max": 0.6},
        "forest_grid": {"n_trees": [20], "min_samples_split": [2], "min_samples_leaf": [1]},
        "gcn": {"epochs": 10, "hidden_dims": [4], "head_hidden": 4},
        "mlp_hidden_dims": [[8, 8]]
    });
    std::fs::write(dir.join("config.json"), config.to_string()).unwrap();
}

fn rfgnn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rfgnn"))
        .args(args)
        .arg("--config")
        .arg(dir.join("config.json"))
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn ok(output: &Output) {
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
}

#[test]
fn run_writes_report_and_timings() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    ok(&rfgnn(dir.path(), &["run", "--seed", "4"]));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["seeds"].as_array().unwrap().len(), 1);
    assert_eq!(report["seeds"][0]["seed"], 4);
    assert!(dir.path().join("out/timings.json").exists());
}

#[test]
fn sweep_writes_one_row_per_alpha() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    ok(&rfgnn(dir.path(), &["sweep", "--proximity", "oob"]));
    let text = std::fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "alpha,mean_f1,std_f1,edge_count");
    assert_eq!(lines.len(), 4);
}

#[test]
fn compare_writes_six_measures() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    ok(&rfgnn(dir.path(), &["compare"]));
    let text = std::fs::read_to_string(dir.path().join("out/compare.csv")).unwrap();
    let names: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["original", "rfgap", "oob", "cosine", "jaccard", "rbf"]);
}

#[test]
fn baseline_reports_rf_and_mlp() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    ok(&rfgnn(dir.path(), &["baseline"]));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/baseline.json")).unwrap()).unwrap();
    assert_eq!(report["rf_per_seed"].as_array().unwrap().len(), 2);
    assert_eq!(report["mlp"][0]["hidden_dims"], serde_json::json!([8, 8]));
}

#[test]
fn export_graph_at_fixed_threshold() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    ok(&rfgnn(dir.path(), &["export-graph", "--proximity", "rbf", "--alpha", "0.5", "--seed", "1"]));
    let text = std::fs::read_to_string(dir.path().join("out/graph.edges")).unwrap();
    assert!(text.starts_with("# nodes=40 alpha=0.5 kind=rbf"));
    for line in text.lines().skip(1) {
        let ids: Vec<usize> = line.split_whitespace().map(|v| v.parse().unwrap()).collect();
        assert!(ids[0] < ids[1] && ids[1] < 40);
    }
}

#[test]
fn bad_input_exits_nonzero_with_stage() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path());
    std::fs::write(dir.path().join("data.csv"), "x0,color,label\n1,red,a\noops,blue,b\n").unwrap();
    let out = rfgnn(dir.path(), &["run"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("[data]"));

    std::fs::write(dir.path().join("config.json"), r#"{"dataset": "manifest.json", "cv_folds": 1}"#).unwrap();
    let out = rfgnn(dir.path(), &["run"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("[config]"));
}
