//! Every artifact the CLI writes validates against the shipped JSON Schemas.

use std::path::{Path, PathBuf};
use std::process::Command;

use eventlab_core::io::write_panel;
use eventlab_core::sim::toy_panel;
use jsonschema::JSONSchema;
use serde_json::Value;

const BASE: &str = "https://eventlab.local/schemas/";

fn schema_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/schemas")
}

fn load(name: &str) -> Value {
    let path = schema_dir().join(name);
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn compile(name: &str) -> JSONSchema {
    let mut opts = JSONSchema::options();
    for doc in ["analysis_request.schema.json", "run_config.schema.json", "artifact.schema.json", "error.schema.json"] {
        opts.with_document(format!("{BASE}{doc}"), load(doc));
    }
    opts.compile(&load(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn check(schema: &JSONSchema, path: &Path) {
    let v: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    if let Err(errors) = schema.validate(&v) {
        let msgs: Vec<String> = errors.map(|e| format!("{} at {}", e, e.instance_path)).collect();
        panic!("{} does not match its schema:\n{}", path.display(), msgs.join("\n"));
    };
}

fn run(out: &Path, args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_eventlab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("RUST_LOG")
        .output()
        .unwrap()
}

#[test]
fn artifacts_and_run_configs_match_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy.csv");
    write_panel(std::fs::File::create(&data).unwrap(), &toy_panel()).unwrap();
    let data = data.to_str().unwrap();
    let est = ["--data", data, "--t1", "2002", "--ty", "2003", "--invariance", "strong", "--kappa", "0"];
    let runs: Vec<Vec<&str>> = vec![
        vec!["validate", "--data", data],
        [&["classify"][..], &est].concat(),
        [&["estimate", "--adjust", "x"][..], &est].concat(),
        [&["estimate", "--estimator", "ideal"][..], &est].concat(),
        [&["estimate", "--estimator", "twfe"][..], &est].concat(),
        [&["diagnose", "--adjust", "x", "--influence", "refit"][..], &est].concat(),
        [&["diagnose", "--estimator", "twfe", "--influence", "fast"][..], &est].concat(),
        vec!["twfe", "--data", data, "--decompose", "tau=1"],
        [&["bootstrap", "--reps", "20"][..], &est].concat(),
        vec!["event-study", "--data", data, "--invariance", "strong", "--kappa", "0"],
    ];
    let artifact = compile("artifact.schema.json");
    let run_config = compile("run_config.schema.json");
    let mut seen = 0;
    for (i, args) in runs.iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        let o = run(&out, args);
        assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        for entry in std::fs::read_dir(&out).unwrap() {
            let path = entry.unwrap().path();
            match path.file_name().and_then(|n| n.to_str()) {
                Some("run_config.json") => check(&run_config, &path),
                Some(n) if n.ends_with(".json") => {
                    check(&artifact, &path);
                    seen += 1;
                }
                _ => {}
            }
        }
    }
    assert!(seen >= 10, "only {seen} artifacts checked");
}

#[test]
fn infeasible_error_matches_schema() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("toy.csv");
    write_panel(std::fs::File::create(&data).unwrap(), &toy_panel()).unwrap();
    let target = dir.path().join("target.csv");
    std::fs::write(&target, "unit,weight\nu1,1\n").unwrap();
    let target = format!("file:{}", target.display());
    let args = [
        "estimate", "--data", data.to_str().unwrap(), "--t1", "2002", "--ty", "2003", "--adjust", "x", "--nonneg",
        "--delta", "0", "--target", &target,
    ];
    let o = run(&dir.path().join("out"), &args);
    assert_eq!(o.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&o.stderr);
    let start = stderr.find("\n{").expect("error JSON on stderr") + 1;
    let body: Value = serde_json::Deserializer::from_str(&stderr[start..]).into_iter().next().unwrap().unwrap();
    assert_eq!(body["kind"], "infeasible");
    let schema = compile("error.schema.json");
    assert!(schema.is_valid(&body), "{body}");
}

#[test]
fn example_request_files_match_schema() {
    let schema = compile("analysis_request.schema.json");
    for file in ["example_request.json"] {
        let v = load(file);
        assert!(schema.is_valid(&v), "{file}");
    }
    let bad = serde_json::json!({"estimand": {"t1": 1}, "assumptions": {"invariance": "sometimes"}});
    assert!(!schema.is_valid(&bad));
}
