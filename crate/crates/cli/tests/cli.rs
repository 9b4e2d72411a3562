use std::fs;
use std::io::Read;
use std::path::Path;
use std::process::{Command, Output};

use flate2::read::GzDecoder;

const MODEL: &str = r#"{"components":[{"family":"gaussian","loc":-1.0,"scale":1.0},
{"family":"gaussian","loc":2.0,"scale":0.5}],"weights":[0.3,0.7]}"#;

fn experiment(iterations: usize) -> String {
    format!(
        r#"{{"truth":{MODEL},"config":"all","prior":"hierarchical","sample_sizes":[40],
"replications":2,"mcmc":{{"iterations":{iterations},"burnin":200}},"master_seed":11}}"#
    )
}

fn jeffmix(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_jeffmix"))
        .current_dir(dir)
        .env("JEFFMIX_WORKERS", "2")
        .args(args)
        .output()
        .expect("binary runs")
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("model.json"), MODEL).unwrap();
    fs::write(dir.path().join("exp.json"), experiment(800)).unwrap();
    dir
}

#[test]
fn fisher_matrix_is_symmetric_with_labels() {
    let dir = setup();
    let out = jeffmix(dir.path(), &["fisher", "--model", "model.json", "--config", "all", "--out", "f"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("f/fisher.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "mu_1,mu_2,sigma_1,sigma_2,p_1");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 5);
    for (i, row) in rows.iter().enumerate() {
        assert!(row[i] > 0.0);
        for (j, v) in row.iter().enumerate() {
            assert_eq!(*v, rows[j][i]);
        }
    }
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("f/meta.json")).unwrap()).unwrap();
    assert_eq!(meta["subcommand"], "fisher");
    assert_eq!(meta["workers"], 2);
    assert_eq!(meta["outputs"], serde_json::json!(["fisher.csv", "fisher.json", "meta.json"]));
}

#[test]
fn bad_inputs_exit_with_usage_code() {
    let dir = setup();
    let missing = jeffmix(dir.path(), &["fisher", "--model", "absent.json", "--config", "all"]);
    assert_eq!(missing.status.code(), Some(2));
    let config = jeffmix(dir.path(), &["fisher", "--model", "model.json", "--config", "nonsense"]);
    assert_eq!(config.status.code(), Some(2));
    let flag = jeffmix(dir.path(), &["fisher", "--no-such-flag"]);
    assert_eq!(flag.status.code(), Some(2));
    let none = jeffmix(dir.path(), &[]);
    assert_eq!(none.status.code(), Some(2));
    let incompatible =
        jeffmix(dir.path(), &["probe", "--prior", "jeffreys", "--boxes", "1,2", "--model", "model.json"]);
    assert_eq!(incompatible.status.code(), Some(2));
}

#[test]
fn replay_reproduces_chain_bytes() {
    let dir = setup();
    let first = jeffmix(dir.path(), &["mcmc", "--spec", "exp.json", "--out", "a", "--gzip"]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let again = jeffmix(dir.path(), &["--replay", "a/meta.json", "--out", "b"]);
    assert!(again.status.success(), "{}", String::from_utf8_lossy(&again.stderr));
    for name in ["chain.csv.gz", "data.csv", "diagnostics.jsonl"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(name)).unwrap(),
            fs::read(dir.path().join("b").join(name)).unwrap(),
            "{name}"
        );
    }

    let mut text = String::new();
    GzDecoder::new(fs::File::open(dir.path().join("a/chain.csv.gz")).unwrap()).read_to_string(&mut text).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "iteration,mu_1,mu_2,sigma_1,sigma_2,w_1,w_2,mu_0,zeta_0,log_post,accepted");
    assert_eq!(lines.count(), 800);
}

#[test]
fn seed_override_changes_the_chain() {
    let dir = setup();
    jeffmix(dir.path(), &["mcmc", "--spec", "exp.json", "--out", "a"]);
    jeffmix(dir.path(), &["mcmc", "--spec", "exp.json", "--seed", "12", "--out", "b"]);
    let a = fs::read(dir.path().join("a/chain.csv")).unwrap();
    let b = fs::read(dir.path().join("b/chain.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn replicate_report_has_one_row_per_sample_size() {
    let dir = setup();
    let out = jeffmix(dir.path(), &["replicate", "--spec", "exp.json", "--out", "r"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(dir.path().join("r/report.csv")).unwrap();
    assert_eq!(report.lines().count(), 2);
    assert!(report.lines().nth(1).unwrap().starts_with("40,2,0,"));
    let diag = fs::read_to_string(dir.path().join("r/diagnostics.jsonl")).unwrap();
    assert_eq!(diag.lines().count(), 2);
    for line in diag.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
}

#[test]
fn grids_and_probe() {
    let dir = setup();
    fs::write(
        dir.path().join("grid.json"),
        r#"{"axes":[{"name":"mu_1","lo":-2,"hi":2,"steps":3},{"name":"mu_2","lo":0,"hi":1,"steps":2}]}"#,
    )
    .unwrap();
    fs::write(dir.path().join("data.csv"), "x\n-1.2\n0.4\n2.1\n1.9\n").unwrap();
    let prior = jeffmix(
        dir.path(),
        &["prior-grid", "--model", "model.json", "--config", "means-only", "--spec", "grid.json", "--out", "p"],
    );
    assert!(prior.status.success(), "{}", String::from_utf8_lossy(&prior.stderr));
    let post = jeffmix(
        dir.path(),
        &[
            "posterior-grid",
            "--model",
            "model.json",
            "--config",
            "means-only",
            "--spec",
            "grid.json",
            "--data",
            "data.csv",
            "--out",
            "q",
        ],
    );
    assert!(post.status.success(), "{}", String::from_utf8_lossy(&post.stderr));
    for d in ["p", "q"] {
        let grid = fs::read_to_string(dir.path().join(d).join("grid.csv")).unwrap();
        assert_eq!(grid.lines().next().unwrap(), "mu_1,mu_2,value");
        assert_eq!(grid.lines().count(), 7);
    }

    let probe = jeffmix(dir.path(), &["probe", "--prior", "delta-conditional", "--boxes", "1,2,4", "--out", "pr"]);
    assert!(probe.status.success(), "{}", String::from_utf8_lossy(&probe.stderr));
    let csv = fs::read_to_string(dir.path().join("pr/probe.csv")).unwrap();
    let masses: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(masses.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn integrators_table() {
    let dir = setup();
    let out = jeffmix(
        dir.path(),
        &[
            "integrators",
            "--reference-models",
            "--repeats",
            "4",
            "--draws",
            "200,400",
            "--elements",
            "0:0",
            "--out",
            "i",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("i/integrators.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
}
