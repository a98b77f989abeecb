use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn amlcgl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amlcgl"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

const SPEC: &str = r#"
seed = 9
background_nodes = 100
background_edges = 300
attach_edges = 1
patterns = [
  { kind = "fan-out", instances = 3, size = 4 },
  { kind = "cycle", instances = 3, size = 4 },
]
"#;

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn generate_run_sweep_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("spec.toml"), SPEC).unwrap();
    let o = amlcgl(&["gen-synthetic", "spec.toml", "--out", "data"], d);
    assert!(o.status.success(), "{o:?}");
    assert!(d.join("data/transactions.csv").is_file());
    assert!(d.join("data/patterns.txt").is_file());

    fs::write(
        d.join("run.toml"),
        r#"
seeds = [0, 1]
out_dir = "runs"
[dataset]
kind = "ibm"
transactions = "data/transactions.csv"
patterns = "data/patterns.txt"
pattern_subset = ["fan-out", "cycle"]
[model]
layers = 1
hidden = 4
[strategy]
method = "mas"
epochs = 2
"#,
    )
    .unwrap();
    let o = amlcgl(&["run", "run.toml"], d);
    assert!(o.status.success(), "{o:?}");
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 2, "{out}");
    assert!(out.contains("ibm-mas-easy-to-hard-l1-h4-e2-s0"));

    fs::write(
        d.join("grid.toml"),
        r#"
out_dir = "sweep"
[dataset]
kind = "ibm"
transactions = "data/transactions.csv"
patterns = "data/patterns.txt"
pattern_subset = ["fan-out", "cycle"]
[strategy]
gem_memory = 5
[grid]
layers = [1]
widths = [4]
epochs = [1, 2]
methods = ["bare", "gem"]
orderings = ["easy-to-hard"]
seeds = [0]
"#,
    )
    .unwrap();
    let o = amlcgl(&["sweep", "grid.toml", "--dry-run"], d);
    assert_eq!(stdout(&o).lines().count(), 4);
    let o = Command::new(env!("CARGO_BIN_EXE_amlcgl"))
        .args(["sweep", "grid.toml"])
        .current_dir(d)
        .env("AMLCGL_WORKERS", "2")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).starts_with("4 completed, 0 failed"));

    let o = amlcgl(&["aggregate", "sweep", "--out", "agg"], d);
    assert!(o.status.success(), "{o:?}");
    let scatter = fs::read_to_string(d.join("agg/scatter.csv")).unwrap();
    assert_eq!(scatter.lines().count(), 5);
    assert!(d.join("agg/table_ibm_easy-to-hard_l1_h4.csv").is_file());
    let leftover = fs::read_dir(d.join("sweep/ibm-gem-easy-to-hard-l1-h4-e2-s0"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("task_"))
        .count();
    assert_eq!(leftover, 0);
}

#[test]
fn failed_runs_give_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("spec.toml"), SPEC).unwrap();
    assert!(amlcgl(&["gen-synthetic", "spec.toml", "--out", "data"], d).status.success());
    // stack attempts are absent from the generated data
    fs::write(
        d.join("grid.toml"),
        r#"
[dataset]
kind = "ibm"
transactions = "data/transactions.csv"
patterns = "data/patterns.txt"
pattern_subset = ["fan-out", "stack"]
[grid]
layers = [1]
widths = [4]
epochs = [1]
methods = ["bare"]
orderings = ["easy-to-hard"]
seeds = [0]
"#,
    )
    .unwrap();
    let o = amlcgl(&["sweep", "grid.toml"], d);
    assert!(!o.status.success());
    assert!(stdout(&o).contains("FAILED"));
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[strategy]\nmethod = \"sgd\"\n").unwrap();
    let o = amlcgl(&["run", "bad.toml"], dir.path());
    assert!(!o.status.success());
}
