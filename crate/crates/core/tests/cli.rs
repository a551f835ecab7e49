use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
name = "cli"
sources = ["b4", "b8"]
variants = ["phymdan", "c_cnn"]
seeds = [1]
max_samples_per_domain = 60
diagnostics = false

[motions]
count = 2

[scales]
factors = [0.5, 2.0]

[prep]
l = 100

[train]
epochs = 1
batch_size = 16

[train.arch]
leaky_slope = 0.2
extractor = [
    { out_channels = 4, kernel = 5, stride = 2 },
    { out_channels = 4, kernel = 5, stride = 2 },
    { out_channels = 4, kernel = 3, stride = 2 },
]
predictor = [
    { out_channels = 4, kernel = 3, stride = 2 },
    { out_channels = 2, kernel = 3, stride = 1 },
]
"#;

fn seismda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seismda"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_config(dir: &Path) -> String {
    let p = dir.join("small.toml");
    std::fs::write(&p, SMALL).unwrap();
    p.display().to_string()
}

#[test]
fn weights_from_a_properties_file() {
    let dir = tempfile::tempdir().unwrap();
    let props = dir.path().join("props.json");
    std::fs::write(
        &props,
        r#"[
  {"id": "a", "N": 4, "Omega_s": 2.0, "mu_T": 5.0, "T1": 0.5, "H": 10.0},
  {"id": "b", "N": 8, "Omega_s": 2.0, "mu_T": 5.0, "T1": 0.9, "H": 20.0},
  {"id": "t", "N": 8, "Omega_s": 2.0, "mu_T": 5.0, "T1": 1.0, "H": 20.0}
]"#,
    )
    .unwrap();
    let stdout = ok(&seismda(&[
        "weights",
        "--properties",
        props.to_str().unwrap(),
        "--target",
        "t",
        "--props",
        "H,N,T1",
        "--eps",
        "0.05",
    ]));
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["target"], "t");
    assert_eq!(v["sources"], serde_json::json!(["a", "b"]));
    let w: Vec<f64> = serde_json::from_value(v["combined"]["weights"].clone()).unwrap();
    // Per property: H and N tie b exactly (d = 0), T1 gives d = 0.01.
    let score = |d: f64| 1.0 / (d + 0.05);
    let soft = |da: f64, db: f64| {
        let (a, b) = (score(da).exp(), score(db).exp());
        [a / (a + b), b / (a + b)]
    };
    let parts = [soft(0.25, 0.0), soft(0.25, 0.0), soft(0.25, 0.01)];
    for k in 0..2 {
        let want = parts.iter().map(|p| p[k]).sum::<f64>() / 3.0;
        assert!((w[k] - want).abs() < 1e-12, "{w:?}");
    }
}

#[test]
fn simulate_stats_preprocess_train_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("out");
    let o = out.to_str().unwrap();
    let sim = ok(&seismda(&[
        "--config",
        &cfg,
        "--out",
        o,
        "simulate",
        "--building",
        "b4,b12",
    ]));
    let mut lines = sim.lines();
    assert_eq!(lines.next(), Some("building,records,directory"));
    assert!(lines.next().unwrap().starts_with("b4,4,"));
    assert!(out.join("b4").join("manifest.json").exists());

    let stats = ok(&seismda(&[
        "--config",
        &cfg,
        "stats",
        "--records",
        out.join("b4").to_str().unwrap(),
    ]));
    assert!(stats.starts_with("scale,"));
    assert_eq!(stats.lines().count(), 3);

    for b in ["b4", "b12"] {
        let rec = out.join(b);
        let p = ok(&seismda(&[
            "--config",
            &cfg,
            "--out",
            o,
            "preprocess",
            "--records",
            rec.to_str().unwrap(),
        ]));
        assert!(p.starts_with("domain,samples,class_counts,file\n"));
    }
    let src = out.join("b4.dataset.csv");
    let tgt = out.join("b12.dataset.csv");
    let train = ok(&seismda(&[
        "--config",
        &cfg,
        "--out",
        o,
        "--seed",
        "2",
        "train",
        "--variant",
        "mdan",
        "--sources",
        src.to_str().unwrap(),
        "--target",
        tgt.to_str().unwrap(),
    ]));
    let row: Vec<&str> = train.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "mdan");
    assert_eq!(row[3], "0");
    let log = std::fs::read_to_string(out.join("mdan.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);

    let eval = ok(&seismda(&[
        "evaluate",
        "--model",
        out.join("mdan.model").to_str().unwrap(),
        "--dataset",
        tgt.to_str().unwrap(),
    ]));
    let v: serde_json::Value = serde_json::from_str(&eval).unwrap();
    let acc = v["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn compare_report_matches_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("run");
    let csv = ok(&seismda(&[
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--threads",
        "1",
        "compare",
    ]));
    assert!(csv.starts_with("variant,"));
    assert_eq!(csv.lines().count(), 3);
    let schema: serde_json::Value =
        serde_json::from_str(include_str!("../schema/report.schema.json")).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator
        .iter_errors(&report)
        .map(|e| e.to_string())
        .collect();
    assert!(errors.is_empty(), "{errors:?}");
    let mut broken = report.clone();
    broken["runs"][0]["accuracy"] = serde_json::json!(1.5);
    assert!(!validator.is_valid(&broken));
}

#[test]
fn failures_exit_nonzero_with_a_stage_tag() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let out = seismda(&["stats", "--records", missing.to_str().unwrap()]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("stats"), "{err}");

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "story = 0\n").unwrap();
    let out = seismda(&["--config", bad.to_str().unwrap(), "weights"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("weights") && err.contains("config"), "{err}");
}
