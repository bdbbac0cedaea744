use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use eventlab_core::io::write_panel;
use eventlab_core::sim::{random_panel, toy_panel, RandomPanelSpec};
use eventlab_core::{ideal_contrast, EstimandSpec, Panel, TargetPopulation};
use http_body_util::BodyExt;
use rand::SeedableRng;
use serde_json::Value;
use tower::ServiceExt;

fn eventlab(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eventlab"))
        .args(args)
        .env("EVENTLAB_OUT", out)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = eventlab(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn code(out: &Path, args: &[&str]) -> i32 {
    eventlab(out, args).status.code().unwrap()
}

fn write_csv(dir: &Path, name: &str, panel: &Panel) -> PathBuf {
    let path = dir.join(name);
    write_panel(std::fs::File::create(&path).unwrap(), panel).unwrap();
    path
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
    data: String,
}

impl Fixture {
    fn toy() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let data = write_csv(dir.path(), "toy.csv", &toy_panel()).display().to_string();
        Fixture { dir, data }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

#[test]
fn classify_toy_keeps_the_2003_column() {
    let f = Fixture::toy();
    let out = f.out("classify");
    ok(&out, &["classify", "--data", &f.data, "--t1", "2002", "--ty", "2003"]);
    let v = read_json(out.join("classify.json"));
    let obs = v["result"]["observations"].as_array().unwrap();
    assert_eq!(obs.len(), 6);
    assert!(obs.iter().all(|o| o["time"] == 2003));
    let csv = std::fs::read_to_string(out.join("classification.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn unadjusted_estimate_is_the_difference_in_means() {
    let f = Fixture::toy();
    let out = f.out("estimate");
    ok(&out, &["estimate", "--data", &f.data, "--t1", "2002", "--ty", "2004", "--adjust", "none"]);
    let robust = read_json(out.join("estimate.json"))["result"]["estimate"].as_f64().unwrap();
    let p = toy_panel();
    let e = EstimandSpec::from_labels(&p, 2002, 2004, &[], TargetPopulation::Study).unwrap();
    let ideal = ideal_contrast(&p, &e).unwrap().estimate;
    assert!((robust - ideal).abs() <= 1e-12, "{robust} vs {ideal}");

    ok(&out, &["estimate", "--data", &f.data, "--t1", "2002", "--ty", "2004", "--estimator", "ideal"]);
    assert_eq!(read_json(out.join("estimate.json"))["result"]["estimate"].as_f64().unwrap(), ideal);
    assert!(out.join("weights.csv").exists());
}

#[test]
fn decompose_then_diagnose_from_weights() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let p = random_panel(&mut rng, RandomPanelSpec { units: 12, times: 9, covariates: 1, never_share: 0.3 });
    let data = write_csv(dir.path(), "panel.csv", &p).display().to_string();
    let out = dir.path().join("run");
    let stdout = ok(&out, &["twfe", "--data", &data, "--decompose", "tau=2"]);
    assert!(stdout.contains("tau[2]"));
    let d = read_json(out.join("decompose.json"));
    let (coef, contrast) = (d["result"]["coefficient"].as_f64().unwrap(), d["result"]["contrast_value"].as_f64().unwrap());
    assert!((coef - contrast).abs() <= 1e-10);

    let weights = out.join("weights.csv").display().to_string();
    let diag_out = dir.path().join("diag");
    ok(&diag_out, &["diagnose", "--data", &data, "--in", &weights]);
    let v = read_json(diag_out.join("diagnostics.json"));
    let shares: f64 = v["result"]["ess"].as_array().unwrap().iter().map(|r| r["info_share"].as_f64().unwrap()).sum();
    assert!((shares - 1.0).abs() <= 1e-12, "{shares}");
    assert!((v["result"]["estimate"].as_f64().unwrap() - coef).abs() <= 1e-10);
}

#[test]
fn exit_codes() {
    let f = Fixture::toy();
    let out = f.out("codes");
    // Unknown flag.
    assert_eq!(code(&out, &["classify", "--data", &f.data, "--bogus"]), 2);
    // Missing file.
    assert_eq!(code(&out, &["validate", "--data", "/nonexistent/panel.csv"]), 2);
    // Time outside the panel.
    assert_eq!(code(&out, &["classify", "--data", &f.data, "--t1", "1990", "--ty", "2003"]), 2);
    // Treatment switching off.
    let flip = f.out("flip.csv");
    std::fs::write(&flip, "unit,time,outcome,treat\na,1,1,0\na,2,1,1\na,3,1,0\nb,1,1,0\nb,2,1,0\nb,3,1,0\n").unwrap();
    let o = eventlab(&out, &["validate", "--data", flip.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unit a, time 3"));
    // Target is unit u1 (x = 0); the only control has x = 5, so exact non-negative balance is impossible.
    let target = f.out("target.csv");
    std::fs::write(&target, "unit,weight\nu1,1\n").unwrap();
    let target_arg = format!("file:{}", target.display());
    let a = [
        "estimate", "--data", &f.data, "--t1", "2002", "--ty", "2003", "--adjust", "x", "--nonneg", "--delta", "0",
        "--target", &target_arg,
    ];
    assert_eq!(code(&out, &a), 3);
    assert_eq!(code(&out, &["classify", "--data", &f.data, "--t1", "2002", "--ty", "2003"]), 0);
}

#[test]
fn bootstrap_is_seeded() {
    let f = Fixture::toy();
    let common = ["bootstrap", "--data", &f.data, "--t1", "2002", "--ty", "2003", "--invariance", "strong", "--kappa", "0", "--reps", "40"];
    let run = |seed: &str, name: &str| {
        let out = f.out(name);
        let mut args = common.to_vec();
        args.extend(["--seed", seed]);
        ok(&out, &args);
        read_json(out.join("bootstrap.json"))["result"].clone()
    };
    let (a, b, c) = (run("1", "a"), run("1", "b"), run("2", "c"));
    assert_eq!(a, b);
    assert_ne!(a["replicates"], c["replicates"]);
    assert_eq!(a["seed"], 1);
}

#[test]
fn event_study_writes_curve() {
    let f = Fixture::toy();
    let out = f.out("es");
    ok(&out, &["event-study", "--data", &f.data, "--estimator", "twfe", "--lags", "-2:3"]);
    let v = read_json(out.join("event_study.json"));
    assert_eq!(v["result"]["points"].as_array().unwrap().len(), 6);
    let csv = std::fs::read_to_string(out.join("event_study.csv")).unwrap();
    assert!(csv.starts_with("l,estimate,se,lo,hi"));
}

#[test]
fn run_config_replays_exactly() {
    let f = Fixture::toy();
    let first = f.out("first");
    ok(&first, &["estimate", "--data", &f.data, "--t1", "2002", "--ty", "2004", "--invariance", "strong", "--kappa", "0", "--adjust", "x"]);
    let second = f.out("second");
    let cfg = first.join("run_config.json").display().to_string();
    ok(&second, &["estimate", "--config", &cfg]);
    assert_eq!(
        std::fs::read(first.join("estimate.json")).unwrap(),
        std::fs::read(second.join("estimate.json")).unwrap()
    );
}

#[test]
fn out_flag_overrides_environment() {
    let f = Fixture::toy();
    let env_dir = f.out("env");
    let flag_dir = f.out("flag");
    ok(&env_dir, &["validate", "--data", &f.data, "--out", flag_dir.to_str().unwrap()]);
    assert!(flag_dir.join("panel.json").exists());
    assert!(!env_dir.join("panel.json").exists());
}

#[tokio::test]
async fn cli_artifacts_equal_api_responses() {
    let f = Fixture::toy();
    let out = f.out("parity");
    let args = ["--data", &f.data, "--t1", "2002", "--ty", "2003", "--invariance", "strong", "--kappa", "0", "--adjust", "x"];
    let mut cmd = vec!["estimate"];
    cmd.extend(args);
    ok(&out, &cmd);
    let mut cmd = vec!["classify"];
    cmd.extend(args);
    ok(&out, &cmd);
    let request = read_json(out.join("run_config.json"))["request"].to_string();

    let app = eventlab_server::app(None);
    let csv = std::fs::read(&f.data).unwrap();
    let res = app.clone().oneshot(Request::post("/sessions").body(Body::from(csv)).unwrap()).await.unwrap();
    assert_eq!(res.status(), StatusCode::CREATED);
    let created: Value = serde_json::from_slice(&res.into_body().collect().await.unwrap().to_bytes()).unwrap();
    let id = created["id"].as_str().unwrap();
    for (path, file) in [("estimate", "estimate.json"), ("classify", "classify.json")] {
        let req = Request::post(format!("/sessions/{id}/{path}")).body(Body::from(request.clone())).unwrap();
        let res = app.clone().oneshot(req).await.unwrap();
        assert_eq!(res.status(), StatusCode::OK);
        let body = res.into_body().collect().await.unwrap().to_bytes();
        assert_eq!(body.as_ref(), std::fs::read(out.join(file)).unwrap().as_slice(), "{path}");
    }
}
