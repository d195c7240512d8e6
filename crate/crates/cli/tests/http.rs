//! HTTP contract of the labeling session service.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use vaer::corpus::load_pairs;
use vaer::ir::IrMatrix;
use vaer::matcher::load_matcher;
use vaer::repr::{train_vae, VaeConfig, VaeModel};
use vaer::synth::{generate, Domain, SynthConfig};
use vaer_cli::args::{IrArgs, IrKind, TableArgs};
use vaer_cli::inputs::{load_inputs, Inputs};
use vaer_cli::server::{router, spawn_session, AppState, Lifecycle, SessionOptions, Setup};

struct Fixture {
    dir: tempfile::TempDir,
    truth: HashSet<(String, String)>,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate(&SynthConfig::standard(Domain::Restaurants, 21)).unwrap();
        ds.write_to(dir.path()).unwrap();
        let truth = ds.matches.iter().cloned().collect();
        Fixture { dir, truth }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn inputs(&self) -> Inputs {
        let tables = TableArgs {
            left: self.path("left.csv"),
            right: self.path("right.csv"),
            id_column: Some("id".into()),
            delimiter: ',',
            pad_to: None,
        };
        let ir = IrArgs {
            ir: IrKind::Lsa,
            ir_dim: 48,
            embeddings: None,
            irs: None,
        };
        load_inputs(&tables, &ir).unwrap()
    }

    /// A session setup; `matcher_epochs` sets how long each retrain takes.
    fn setup(&self, journal: &Path, matcher_epochs: usize) -> Setup {
        let inputs = self.inputs();
        let vae = small_vae(&inputs.all_irs());
        let test = load_pairs(self.path("test.csv")).unwrap();
        let options = SessionOptions {
            k: 5,
            batch: 10,
            bootstrap: 15,
            margin: 0.5,
            seed: 42,
        };
        let mut setup = Setup::prepare(
            inputs,
            vae,
            Some(&test),
            &options,
            journal.to_path_buf(),
            Some(self.path("matcher.json")),
        )
        .unwrap();
        setup.config.matcher.epochs = matcher_epochs;
        setup
    }

    fn labels_for(&self, batch: &Value) -> Value {
        let labels: Vec<Value> = batch["pairs"]
            .as_array()
            .unwrap()
            .iter()
            .map(|p| {
                let key = (
                    p["left_id"].as_str().unwrap().to_string(),
                    p["right_id"].as_str().unwrap().to_string(),
                );
                json!({ "pair_id": p["pair_id"], "label": u8::from(self.truth.contains(&key)) })
            })
            .collect();
        Value::Array(labels)
    }
}

fn small_vae(irs: &[IrMatrix]) -> VaeModel {
    let config = VaeConfig {
        hidden_dim: 32,
        latent_dim: 8,
        epochs: 3,
        seed: 42,
        ..Default::default()
    };
    train_vae(irs, &config).unwrap().0
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => builder
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

async fn awaiting(state: &AppState) {
    let status = state.wait_for(|l| l == Lifecycle::AwaitingLabels).await;
    assert!(status.error.is_none(), "{:?}", status.error);
}

fn pair_ids(batch: &Value) -> Vec<u64> {
    batch["pairs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["pair_id"].as_u64().unwrap())
        .collect()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn status_answers_while_the_model_trains() {
    let f = Fixture::new();
    let (state, _done) = spawn_session(f.setup(&f.path("journal.jsonl"), 3000)).unwrap();
    let app = router(state.clone());
    let t = Instant::now();
    let (code, status) = call(&app, "GET", "/session", None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(status["lifecycle"], "retraining");
    assert!(t.elapsed() < Duration::from_millis(500));
    let (_, batch) = call(&app, "GET", "/session/batch", None).await;
    assert!(batch["pairs"].as_array().unwrap().is_empty());

    awaiting(&state).await;
    let (_, batch) = call(&app, "GET", "/session/batch", None).await;
    let (code, status) = call(&app, "POST", "/session/labels", Some(f.labels_for(&batch))).await;
    assert_eq!(code, StatusCode::ACCEPTED);
    assert_eq!(status["lifecycle"], "retraining");
    let t = Instant::now();
    let (_, status) = call(&app, "GET", "/session", None).await;
    assert!(t.elapsed() < Duration::from_millis(500));
    assert_eq!(status["lifecycle"], "retraining");
    assert_eq!(status["oracle_labels"], 10);

    let (code, _) = call(&app, "POST", "/session/labels", Some(f.labels_for(&batch))).await;
    assert_eq!(code, StatusCode::CONFLICT);
    let (code, _) = call(&app, "POST", "/session/finish", None).await;
    assert_eq!(code, StatusCode::CONFLICT);
    awaiting(&state).await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn batch_shows_pairs_side_by_side() {
    let f = Fixture::new();
    let (state, _done) = spawn_session(f.setup(&f.path("journal.jsonl"), 30)).unwrap();
    let app = router(state.clone());
    awaiting(&state).await;
    let (code, batch) = call(&app, "GET", "/session/batch", None).await;
    assert_eq!(code, StatusCode::OK);
    let pairs = batch["pairs"].as_array().unwrap();
    assert_eq!(pairs.len(), 10);
    let ids: HashSet<u64> = pair_ids(&batch).into_iter().collect();
    assert_eq!(ids.len(), 10);
    let categories = [
        "certain_positive",
        "certain_negative",
        "uncertain_positive",
        "uncertain_negative",
    ];
    for p in pairs {
        let attrs = p["attributes"].as_array().unwrap();
        assert_eq!(attrs.len(), 6);
        for a in attrs {
            assert!(a["name"].is_string() && a["left"].is_string() && a["right"].is_string());
        }
        assert!(
            categories.contains(&p["category"].as_str().unwrap()),
            "{}",
            p["category"]
        );
        let prob = p["probability"].as_f64().unwrap();
        assert!(prob > 0.0 && prob < 1.0);
    }
    let (_, status) = call(&app, "GET", "/session", None).await;
    assert_eq!(status["lifecycle"], "awaiting_labels");
    assert_eq!(status["iteration"], 0);
    assert_eq!(status["pending"], 10);
    assert_eq!(status["pools"]["positives"], 15);
    assert_eq!(status["pools"]["negatives"], 15);
    assert!(status["metrics"]["test"]["f1"].is_number());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn labels_lead_to_a_fresh_batch() {
    let f = Fixture::new();
    let (state, _done) = spawn_session(f.setup(&f.path("journal.jsonl"), 30)).unwrap();
    let app = router(state.clone());
    awaiting(&state).await;
    let (_, first) = call(&app, "GET", "/session/batch", None).await;
    let (code, _) = call(&app, "POST", "/session/labels", Some(f.labels_for(&first))).await;
    assert_eq!(code, StatusCode::ACCEPTED);
    awaiting(&state).await;
    let (_, status) = call(&app, "GET", "/session", None).await;
    assert_eq!(status["iteration"], 1);
    assert_eq!(status["oracle_labels"], 10);
    assert_eq!(status["history"].as_array().unwrap().len(), 2);
    let labeled = status["pools"]["positives"].as_u64().unwrap() + status["pools"]["negatives"].as_u64().unwrap();
    assert_eq!(labeled, 40);
    let (_, second) = call(&app, "GET", "/session/batch", None).await;
    let before: HashSet<u64> = pair_ids(&first).into_iter().collect();
    assert!(pair_ids(&second).iter().all(|id| !before.contains(id)));
    let journal = std::fs::read_to_string(f.path("journal.jsonl")).unwrap();
    assert_eq!(journal.lines().count(), 10);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn malformed_label_sets_are_rejected() {
    let f = Fixture::new();
    let (state, _done) = spawn_session(f.setup(&f.path("journal.jsonl"), 30)).unwrap();
    let app = router(state.clone());
    awaiting(&state).await;
    let (_, batch) = call(&app, "GET", "/session/batch", None).await;
    let good = f.labels_for(&batch);

    let mut short = good.as_array().unwrap().clone();
    short.pop();
    let (code, body) = call(&app, "POST", "/session/labels", Some(Value::Array(short))).await;
    assert_eq!(code, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("missing"));

    let mut stranger = good.as_array().unwrap().clone();
    stranger[0]["pair_id"] = json!(999_999);
    let (code, _) = call(&app, "POST", "/session/labels", Some(Value::Array(stranger))).await;
    assert_eq!(code, StatusCode::BAD_REQUEST);

    let mut bad_label = good.as_array().unwrap().clone();
    bad_label[0]["label"] = json!(2);
    let (code, _) = call(&app, "POST", "/session/labels", Some(Value::Array(bad_label))).await;
    assert_eq!(code, StatusCode::BAD_REQUEST);

    let (code, _) = call(&app, "POST", "/session/labels", Some(json!({ "pair_id": 1 }))).await;
    assert!(code.is_client_error());

    let (_, status) = call(&app, "GET", "/session", None).await;
    assert_eq!(status["lifecycle"], "awaiting_labels");
    assert_eq!(status["oracle_labels"], 0);
    assert_eq!(std::fs::read_to_string(f.path("journal.jsonl")).unwrap(), "");
    let (_, again) = call(&app, "GET", "/session/batch", None).await;
    assert_eq!(pair_ids(&again), pair_ids(&batch));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn finish_saves_the_matcher_and_ends_the_session() {
    let f = Fixture::new();
    let (state, done) = spawn_session(f.setup(&f.path("journal.jsonl"), 30)).unwrap();
    let app = router(state.clone());
    awaiting(&state).await;
    let (code, status) = call(&app, "POST", "/session/finish", None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(status["lifecycle"], "done");
    tokio::time::timeout(Duration::from_secs(5), done)
        .await
        .unwrap()
        .unwrap();
    let matcher = load_matcher(f.path("matcher.json")).unwrap();
    assert_eq!(matcher.arity, 6);
    let (_, batch) = call(&app, "GET", "/session/batch", None).await;
    let (code, _) = call(&app, "POST", "/session/labels", Some(f.labels_for(&batch))).await;
    assert_eq!(code, StatusCode::CONFLICT);
    let (code, status) = call(&app, "POST", "/session/finish", None).await;
    assert_eq!(code, StatusCode::OK);
    assert_eq!(status["lifecycle"], "done");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn resuming_from_the_journal_restores_the_session() {
    let f = Fixture::new();
    let journal = f.path("journal.jsonl");
    let (state, _done) = spawn_session(f.setup(&journal, 30)).unwrap();
    let app = router(state.clone());
    awaiting(&state).await;
    for _ in 0..2 {
        let (_, batch) = call(&app, "GET", "/session/batch", None).await;
        call(&app, "POST", "/session/labels", Some(f.labels_for(&batch))).await;
        awaiting(&state).await;
    }
    let (_, live_status) = call(&app, "GET", "/session", None).await;
    let (_, live_batch) = call(&app, "GET", "/session/batch", None).await;
    drop(app);
    drop(state);

    let (resumed, _done) = spawn_session(f.setup(&journal, 30)).unwrap();
    let app = router(resumed.clone());
    awaiting(&resumed).await;
    let (_, status) = call(&app, "GET", "/session", None).await;
    let (_, batch) = call(&app, "GET", "/session/batch", None).await;
    assert_eq!(status["pools"], live_status["pools"]);
    assert_eq!(status["iteration"], 2);
    assert_eq!(status["oracle_labels"], 20);
    assert_eq!(batch["pairs"], live_batch["pairs"]);
}
