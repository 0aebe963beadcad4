//! End-to-end tests of the `qrfvimp` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qrf_vimp::cli::exit;
use qrf_vimp::forest::ModelDocument;
use qrf_vimp::quantile;

const SMALL: &str = "x1,x2,y\n0.1,0.5,1.0\n0.2,0.4,2.0\n0.3,0.3,3.0\n0.4,0.2,4.0\n0.5,0.1,5.0\n";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_qrfvimp"));
    c.env_remove("QRFVIMP_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> u8 {
    o.status.code().expect("exited normally") as u8
}

fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, contents).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn demo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/demo.csv")
}

fn synthetic(n: usize) -> String {
    let mut out = String::from("x1,x2,y\n");
    for i in 0..n {
        let a = ((i * 37) % 101) as f64 / 100.0;
        let b = ((i * 61) % 97) as f64 / 96.0;
        let noise = (((i * 7919) % 1009) as f64 / 1008.0 - 0.5) * 0.4;
        out.push_str(&format!("{a},{b},{}\n", 3.0 * a + noise));
    }
    out
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn predictions(path: &Path) -> Vec<Vec<f64>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("q_hat,eta_hat,f_hat,ci_low,ci_high"));
    lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn fit_smoke_writes_model_with_two_trees_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", SMALL);
    let out = dir.path().join("out");
    let o = run(&[
        "fit",
        s(&data),
        "--trees",
        "2",
        "--subsample",
        "4",
        "--min-leaf",
        "1",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), exit::OK, "{}", String::from_utf8_lossy(&o.stderr));
    let model = json(&out.join("model.json"));
    assert_eq!(
        model["model"]["trees"].as_array().map(Vec::len),
        Some(2),
        "{model:#}"
    );
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["command"], "fit");
    assert_eq!(manifest["seeds"]["forest"], 0);
    assert_eq!(manifest["config"]["forest"]["num_trees"], 2);
    assert_eq!(manifest["inputs"][0]["rows"], 5);
    assert_eq!(manifest["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn fit_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", &synthetic(200));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, threads) in [(&a, "1"), (&b, "3")] {
        let o = run(&[
            "fit",
            s(&data),
            "--trees",
            "20",
            "--seed",
            "9",
            "--threads",
            threads,
            "--out",
            s(out),
        ]);
        assert_eq!(code(&o), exit::OK);
    }
    let ma = std::fs::read(a.join("model.json")).unwrap();
    let mb = std::fs::read(b.join("model.json")).unwrap();
    assert_eq!(ma, mb);
}

#[test]
fn missing_target_is_schema_error_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", SMALL);
    let out = dir.path().join("out");
    let o = run(&["fit", s(&data), "--target", "response", "--out", s(&out)]);
    assert_eq!(code(&o), exit::SCHEMA);
    assert!(!out.exists());
}

#[test]
fn ingestion_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let ragged = write(dir.path(), "r.csv", "x1,y\n1,2\n3\n");
    let text = write(dir.path(), "t.csv", "x1,y\n1,2\nabc,3\n");
    let out = dir.path().join("out");
    let codes: Vec<u8> = [&missing, &ragged, &text]
        .iter()
        .map(|p| code(&run(&["fit", s(p), "--out", s(&out)])))
        .collect();
    assert_eq!(
        codes,
        vec![exit::IO, exit::MALFORMED_CSV, exit::NON_NUMERIC]
    );
    assert!(!out.exists());
    assert_eq!(code(&run(&["fit"])), exit::USAGE);
    assert_eq!(
        code(&run(&[
            "fit",
            s(&ragged),
            "--beta",
            "0.5",
            "--subsample",
            "4"
        ])),
        exit::USAGE
    );
}

#[test]
fn help_documents_exit_codes() {
    let o = run(&["--help"]);
    assert_eq!(code(&o), exit::OK);
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("Exit codes"));
    assert!(text.contains("schema error"));
}

#[test]
fn constant_response_predicts_the_constant() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("a,b,y\n");
    for i in 0..60 {
        csv.push_str(&format!("{},{},4.25\n", i as f64 / 60.0, (i % 7) as f64));
    }
    let data = write(dir.path(), "d.csv", &csv);
    let out = dir.path().join("out");
    assert_eq!(
        code(&run(&["fit", s(&data), "--trees", "25", "--out", s(&out)])),
        exit::OK
    );
    let o = run(&[
        "predict",
        s(&out.join("model.json")),
        s(&data),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), exit::OK);
    let rows = predictions(&out.join("predictions.csv"));
    assert_eq!(rows.len(), 60);
    assert!(rows.iter().all(|r| r[0] == 4.25));
}

#[test]
fn higher_level_widens_intervals_around_same_centers() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", &synthetic(300));
    let out = dir.path().join("m");
    assert_eq!(
        code(&run(&["fit", s(&data), "--trees", "50", "--out", s(&out)])),
        exit::OK
    );
    let model = out.join("model.json");
    let (p95, p99) = (dir.path().join("p95"), dir.path().join("p99"));
    assert_eq!(
        code(&run(&["predict", s(&model), s(&data), "--out", s(&p95)])),
        exit::OK
    );
    assert_eq!(
        code(&run(&[
            "predict",
            s(&model),
            s(&data),
            "--level",
            "0.99",
            "--out",
            s(&p99)
        ])),
        exit::OK
    );
    let (a, b) = (
        predictions(&p95.join("predictions.csv")),
        predictions(&p99.join("predictions.csv")),
    );
    for (ra, rb) in a.iter().zip(&b) {
        assert_eq!(ra[0], rb[0]);
        assert!(rb[4] - rb[3] > ra[4] - ra[3]);
    }
}

#[test]
fn saved_model_predicts_bit_exactly_like_in_memory() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", &synthetic(250));
    let out = dir.path().join("m");
    assert_eq!(
        code(&run(&[
            "fit",
            s(&data),
            "--trees",
            "40",
            "--seed",
            "3",
            "--out",
            s(&out)
        ])),
        exit::OK
    );
    assert_eq!(
        code(&run(&[
            "predict",
            s(&out.join("model.json")),
            s(&data),
            "--out",
            s(&out)
        ])),
        exit::OK
    );
    let from_cli = predictions(&out.join("predictions.csv"));

    let table = qrf_vimp::cli::Table::read(&data).unwrap();
    let dataset = table.into_dataset("y").unwrap();
    let cfg = qrf_vimp::ForestConfig {
        num_trees: 40,
        seed: 3,
        ..Default::default()
    };
    let model = qrf_vimp::forest::fit_forest(&dataset, &cfg).unwrap();
    for (i, row) in from_cli.iter().enumerate() {
        let p = quantile::predict_with_interval(&model, &dataset, dataset.row(i), 0.95).unwrap();
        assert_eq!(row, &vec![p.q_hat, p.eta_hat, p.f_hat, p.ci_low, p.ci_high]);
    }
    let doc = ModelDocument::load(&out.join("model.json")).unwrap();
    assert_eq!(doc.model.n_train(), 250);
}

#[test]
fn predict_rejects_mismatched_queries_and_corrupt_models() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", &synthetic(100));
    let out = dir.path().join("m");
    assert_eq!(
        code(&run(&["fit", s(&data), "--trees", "10", "--out", s(&out)])),
        exit::OK
    );
    let queries = write(dir.path(), "q.csv", "x1,z\n0.5,0.5\n");
    let p = dir.path().join("p");
    assert_eq!(
        code(&run(&[
            "predict",
            s(&out.join("model.json")),
            s(&queries),
            "--out",
            s(&p)
        ])),
        exit::SCHEMA
    );
    let corrupt = write(dir.path(), "bad.json", "{\"format\": \"something else\"}");
    assert_eq!(
        code(&run(&["predict", s(&corrupt), s(&data), "--out", s(&p)])),
        exit::CORRUPT_MODEL
    );
    assert!(!p.exists());
}

#[test]
fn empty_subset_has_zero_importance() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", &synthetic(300));
    let out = dir.path().join("v");
    let o = run(&[
        "vimp",
        s(&data),
        "--subset",
        "",
        "--trees",
        "40",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), exit::OK, "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&out.join("vimp.json"));
    assert_eq!(report["v_hat"], 0.0);
    assert_eq!(report["c_hat"], 0.0);
    assert_eq!(report["subset"], serde_json::json!([]));
}

#[test]
fn noise_subset_on_demo_data_is_insignificant() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let o = run(&[
        "vimp",
        s(&demo()),
        "--subset",
        "2",
        "--beta",
        "0.7",
        "--min-leaf",
        "1",
        "--trees",
        "300",
        "--per-point",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), exit::OK, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out.join("vimp.json"));
    let v = r["v_hat"].as_f64().unwrap();
    let sd = r["sigma_s_hat"].as_f64().unwrap();
    let n = r["n_eval"].as_f64().unwrap();
    assert!(v.abs() < 3.0 * sd / n.sqrt(), "{r:#}");
    assert!(r["ci_low"].as_f64().unwrap() <= v && v <= r["ci_high"].as_f64().unwrap());
    assert_eq!(
        r["n_eval"].as_u64().unwrap() + r["n_train"].as_u64().unwrap(),
        4000
    );
    let per_point = std::fs::read_to_string(out.join("vimp_per_point.csv")).unwrap();
    assert_eq!(per_point.lines().count(), 2001);
}

#[test]
fn vimp_rejects_invalid_subsets() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "d.csv", &synthetic(100));
    let out = dir.path().join("v");
    for subset in ["1,2", "3", "0", "x"] {
        let o = run(&[
            "vimp",
            s(&data),
            "--subset",
            subset,
            "--trees",
            "5",
            "--out",
            s(&out),
        ]);
        assert_eq!(code(&o), exit::CONFIG, "subset {subset:?}");
    }
    assert!(!out.exists());
}

const MICRO: &str = r#"{
  "campaign": "phase_transition",
  "dgp": {"kind": "linear_gaussian", "coefficients": [1.0, 0.0], "noise_scale": 1.0, "p": 2},
  "tau": 0.5,
  "n_grid": [60],
  "beta_grid": [0.5, 0.7],
  "replications": 1,
  "subset": [1],
  "forest": {"num_trees": 20, "min_leaf_est": 1},
  "seed": 11
}"#;

#[test]
fn simulate_micro_config_is_fast_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "sim.json", MICRO);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["simulate", s(&cfg), "--out", s(out)]);
        assert_eq!(code(&o), exit::OK, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let csv_a = std::fs::read(a.join("sim_results.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read(b.join("sim_results.csv")).unwrap());
    let text = String::from_utf8(csv_a).unwrap();
    assert!(text.starts_with("n,beta,rep,metric,value\n"));
    let summary = json(&a.join("sim_summary.json"));
    let cells = summary["cells"].as_array().expect("cells");
    assert_eq!(cells.len(), 2);
    for cell in cells {
        assert!(cell["coverage_raw"]["estimate"].is_number(), "{cell:#}");
        assert!(cell["coverage_raw"]["std_error"].is_number(), "{cell:#}");
    }
}

#[test]
fn simulate_rejects_invalid_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "sim.json",
        &MICRO.replace("[0.5, 0.7]", "[1.5]"),
    );
    let out = dir.path().join("o");
    assert_eq!(
        code(&run(&["simulate", s(&cfg), "--out", s(&out)])),
        exit::CONFIG
    );
    assert!(!out.exists());
}
