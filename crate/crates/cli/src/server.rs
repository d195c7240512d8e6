//! Local HTTP service around one active-learning session.
//!
//! A single owner task holds the session and applies every write; handlers
//! talk to it over a channel. Reads are served from a snapshot the owner
//! publishes after each change, so status requests never wait on training.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, oneshot, watch};
use vaer::al::{
    exclude_pairs, read_journal, AlConfig, AlContext, BatchSplit, Category, IterationMetrics, JournalWriter, Session,
    TrainedState,
};
use vaer::corpus::{PairSet, Table};
use vaer::matcher::{save_matcher, MatcherConfig};
use vaer::neighbors::{build_index, candidate_pairs, CandidatePair, LshConfig};
use vaer::repr::VaeModel;

use crate::inputs::Inputs;
use crate::{CliResult, Failure, EXIT_FAILURE, EXIT_PORT_BUSY};

#[derive(Debug, Clone)]
pub struct SessionOptions {
    pub k: usize,
    pub batch: usize,
    pub bootstrap: usize,
    pub margin: f64,
    pub seed: u64,
}

/// Everything the service needs, prepared before binding.
pub struct Setup {
    pub ctx: Arc<AlContext>,
    pub candidates: Vec<CandidatePair>,
    pub config: AlConfig,
    pub left: Table,
    pub right: Table,
    pub journal: PathBuf,
    pub matcher_out: Option<PathBuf>,
}

impl Setup {
    /// Blocks candidates with LSH over the VAE representations, dropping
    /// test pairs so they are never put to the labeler.
    pub fn prepare(
        inputs: Inputs,
        vae: VaeModel,
        test: Option<&PairSet>,
        options: &SessionOptions,
        journal: PathBuf,
        matcher_out: Option<PathBuf>,
    ) -> CliResult<Self> {
        if options.batch == 0 {
            return Err(Failure::new(EXIT_FAILURE, "--batch must be at least 1"));
        }
        if let Some(t) = test {
            t.validate(&inputs.left, &inputs.right)?;
        }
        let Inputs {
            left,
            right,
            left_irs,
            right_irs,
            ..
        } = inputs;
        let ctx = AlContext::new(left_irs, right_irs, vae, test)?;
        let lsh = LshConfig {
            seed: options.seed,
            ..Default::default()
        };
        let index = build_index(ctx.right.ids().to_vec(), &ctx.right_reprs, &lsh)?;
        let mut candidates = candidate_pairs(ctx.left.ids(), &ctx.left_reprs, &index, options.k)?;
        if let Some(t) = test {
            candidates = exclude_pairs(candidates, t);
        }
        log::info!("{} candidate pairs", candidates.len());
        let config = AlConfig {
            bootstrap_per_class: options.bootstrap,
            split: BatchSplit::even(options.batch),
            matcher: MatcherConfig {
                margin: options.margin,
                seed: options.seed,
                holdout_fraction: 0.0,
                ..Default::default()
            },
            ..Default::default()
        };
        Ok(Setup {
            ctx: Arc::new(ctx),
            candidates,
            config,
            left,
            right,
            journal,
            matcher_out,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lifecycle {
    AwaitingLabels,
    Retraining,
    Idle,
    Done,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSizes {
    pub positives: usize,
    pub negatives: usize,
    pub unlabeled: usize,
}

/// Body of `GET /session`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusView {
    pub session_id: String,
    pub lifecycle: Lifecycle,
    pub iteration: usize,
    pub oracle_labels: usize,
    pub pools: PoolSizes,
    pub pending: usize,
    pub metrics: Option<IterationMetrics>,
    pub history: Vec<IterationMetrics>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeView {
    pub name: String,
    pub left: String,
    pub right: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairView {
    pub pair_id: usize,
    pub left_id: String,
    pub right_id: String,
    pub attributes: Vec<AttributeView>,
    pub category: Category,
    pub probability: f64,
}

/// Body of `GET /session/batch`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchView {
    pub iteration: usize,
    pub lifecycle: Lifecycle,
    pub pairs: Vec<PairView>,
}

/// One element of the `POST /session/labels` body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelInput {
    pub pair_id: usize,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { error: self.message })).into_response()
    }
}

#[derive(Debug, Clone)]
struct Snapshot {
    status: StatusView,
    batch: BatchView,
}

enum Msg {
    Started(Box<vaer::Result<Session>>),
    Labels(Vec<LabelInput>, oneshot::Sender<Result<StatusView, ApiError>>),
    Trained(Box<vaer::Result<TrainedState>>),
    Finish(oneshot::Sender<Result<StatusView, ApiError>>),
}

/// Handle shared by the HTTP handlers.
#[derive(Clone)]
pub struct AppState {
    snapshot: watch::Receiver<Snapshot>,
    tx: mpsc::Sender<Msg>,
}

impl AppState {
    pub fn status(&self) -> StatusView {
        self.snapshot.borrow().status.clone()
    }

    /// Waits until the lifecycle satisfies `pred` and returns that status.
    pub async fn wait_for(&self, pred: impl Fn(Lifecycle) -> bool) -> StatusView {
        let mut rx = self.snapshot.clone();
        let snap = rx
            .wait_for(|s| pred(s.status.lifecycle) || s.status.error.is_some())
            .await
            .expect("session owner alive");
        snap.status.clone()
    }
}

struct Owner {
    session: Option<Session>,
    lifecycle: Lifecycle,
    error: Option<String>,
    session_id: String,
    left: Table,
    right: Table,
    journal: Option<JournalWriter>,
    matcher_out: Option<PathBuf>,
    publish: watch::Sender<Snapshot>,
    tx: mpsc::Sender<Msg>,
    done: Option<oneshot::Sender<()>>,
}

fn session_id() -> String {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    format!("{:016x}", nanos as u64)
}

impl Owner {
    fn snapshot(&self) -> Snapshot {
        let (iteration, oracle_labels, pools, history, pairs) = match &self.session {
            None => (0, 0, PoolSizes::default(), Vec::new(), Vec::new()),
            Some(s) => {
                let p = s.pools();
                let pairs = if self.lifecycle == Lifecycle::AwaitingLabels {
                    s.pending().iter().map(|p| self.pair_view(p)).collect()
                } else {
                    Vec::new()
                };
                (
                    s.iteration(),
                    s.oracle_labels(),
                    PoolSizes {
                        positives: p.positives.len(),
                        negatives: p.negatives.len(),
                        unlabeled: p.unlabeled.len(),
                    },
                    s.history().to_vec(),
                    pairs,
                )
            }
        };
        Snapshot {
            status: StatusView {
                session_id: self.session_id.clone(),
                lifecycle: self.lifecycle,
                iteration,
                oracle_labels,
                pools,
                pending: pairs.len(),
                metrics: history.last().cloned(),
                history,
                error: self.error.clone(),
            },
            batch: BatchView {
                iteration,
                lifecycle: self.lifecycle,
                pairs,
            },
        }
    }

    fn pair_view(&self, p: &vaer::al::Proposal) -> PairView {
        let l = self.left.get(&p.left_id);
        let r = self.right.get(&p.right_id);
        let value = |rec: Option<&vaer::corpus::Record>, i: usize| {
            rec.and_then(|x| x.values.get(i)).cloned().unwrap_or_default()
        };
        PairView {
            pair_id: p.pair_id,
            left_id: p.left_id.clone(),
            right_id: p.right_id.clone(),
            attributes: self
                .left
                .attributes
                .iter()
                .enumerate()
                .map(|(i, name)| AttributeView {
                    name: name.clone(),
                    left: value(l, i),
                    right: value(r, i),
                })
                .collect(),
            category: p.category,
            probability: p.probability,
        }
    }

    fn publish(&self) {
        self.publish.send_replace(self.snapshot());
    }

    fn after_training(&mut self) {
        let pending = self.session.as_ref().map_or(0, |s| s.pending().len());
        self.lifecycle = if pending == 0 {
            Lifecycle::Idle
        } else {
            Lifecycle::AwaitingLabels
        };
    }

    fn fail(&mut self, message: String) {
        log::error!("{message}");
        self.error = Some(message);
        self.lifecycle = Lifecycle::Idle;
    }

    fn on_labels(&mut self, labels: Vec<LabelInput>) -> Result<StatusView, ApiError> {
        if self.lifecycle != Lifecycle::AwaitingLabels {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("no batch is awaiting labels (session is {:?})", self.lifecycle),
            ));
        }
        let session = self.session.as_mut().expect("session exists while awaiting labels");
        let pairs: Vec<(usize, u8)> = labels.iter().map(|l| (l.pair_id, l.label)).collect();
        let mut trial = session.clone();
        let entries = trial
            .apply_labels(&pairs)
            .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
        if let Some(j) = self.journal.as_mut() {
            j.append(&entries)
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        }
        *session = trial;
        log::info!("iteration {}: {} labels received", session.iteration(), entries.len());
        let job = session.training_job();
        let tx = self.tx.clone();
        tokio::task::spawn_blocking(move || {
            let _ = tx.blocking_send(Msg::Trained(Box::new(job.run())));
        });
        self.lifecycle = Lifecycle::Retraining;
        self.publish();
        Ok(self.snapshot().status)
    }

    fn on_finish(&mut self) -> Result<StatusView, ApiError> {
        match self.lifecycle {
            Lifecycle::Retraining => {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    "retraining in progress; retry when it completes",
                ))
            }
            Lifecycle::Done => return Ok(self.snapshot().status),
            _ => {}
        }
        if let (Some(path), Some(m)) = (&self.matcher_out, self.session.as_ref().and_then(|s| s.matcher())) {
            save_matcher(m, path).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
            log::info!("wrote {}", path.display());
        }
        self.lifecycle = Lifecycle::Done;
        self.publish();
        if let Some(done) = self.done.take() {
            let _ = done.send(());
        }
        Ok(self.snapshot().status)
    }

    async fn run(mut self, mut rx: mpsc::Receiver<Msg>) {
        while let Some(msg) = rx.recv().await {
            match msg {
                Msg::Started(started) => match *started {
                    Ok(session) => {
                        self.session = Some(session);
                        self.after_training();
                    }
                    Err(e) => self.fail(format!("session start failed: {e}")),
                },
                Msg::Trained(trained) => match *trained {
                    Ok(state) => {
                        let session = self.session.as_mut().expect("training implies a session");
                        match session.install(state) {
                            Ok(()) => self.after_training(),
                            Err(e) => self.fail(format!("installing the retrained model failed: {e}")),
                        }
                    }
                    Err(e) => self.fail(format!("retraining failed: {e}")),
                },
                Msg::Labels(labels, reply) => {
                    let _ = reply.send(self.on_labels(labels));
                }
                Msg::Finish(reply) => {
                    let _ = reply.send(self.on_finish());
                }
            }
            self.publish();
        }
    }
}

/// Starts the session owner: replays the journal, trains the first model on
/// a worker thread and returns the handler state plus a signal that fires on
/// `finish`. Must run inside a Tokio runtime.
pub fn spawn_session(setup: Setup) -> CliResult<(AppState, oneshot::Receiver<()>)> {
    let entries = read_journal(&setup.journal)?;
    if !entries.is_empty() {
        log::info!("resuming from {} ({} labels)", setup.journal.display(), entries.len());
    }
    let journal = JournalWriter::open(&setup.journal)?;
    let (tx, rx) = mpsc::channel(16);
    let (done_tx, done_rx) = oneshot::channel();
    let (publish, snapshot) = watch::channel(placeholder());
    let owner = Owner {
        session: None,
        lifecycle: Lifecycle::Retraining,
        error: None,
        session_id: session_id(),
        left: setup.left,
        right: setup.right,
        journal: Some(journal),
        matcher_out: setup.matcher_out,
        publish,
        tx: tx.clone(),
        done: Some(done_tx),
    };
    owner.publish();
    let (ctx, candidates, config) = (setup.ctx, setup.candidates, setup.config);
    let started = tx.clone();
    tokio::task::spawn_blocking(move || {
        let _ = started.blocking_send(Msg::Started(Box::new(Session::start(
            ctx, candidates, config, &entries,
        ))));
    });
    tokio::spawn(owner.run(rx));
    Ok((AppState { snapshot, tx }, done_rx))
}

fn placeholder() -> Snapshot {
    Snapshot {
        status: StatusView {
            session_id: String::new(),
            lifecycle: Lifecycle::Retraining,
            iteration: 0,
            oracle_labels: 0,
            pools: PoolSizes::default(),
            pending: 0,
            metrics: None,
            history: Vec::new(),
            error: None,
        },
        batch: BatchView {
            iteration: 0,
            lifecycle: Lifecycle::Retraining,
            pairs: Vec::new(),
        },
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/session", get(get_status))
        .route("/session/batch", get(get_batch))
        .route("/session/labels", post(post_labels))
        .route("/session/finish", post(post_finish))
        .with_state(state)
}

async fn get_status(State(state): State<AppState>) -> Json<StatusView> {
    Json(state.snapshot.borrow().status.clone())
}

async fn get_batch(State(state): State<AppState>) -> Json<BatchView> {
    Json(state.snapshot.borrow().batch.clone())
}

async fn ask(
    state: &AppState,
    msg: impl FnOnce(oneshot::Sender<Result<StatusView, ApiError>>) -> Msg,
) -> Result<StatusView, ApiError> {
    let (reply, rx) = oneshot::channel();
    let gone = || ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "session owner stopped");
    state.tx.send(msg(reply)).await.map_err(|_| gone())?;
    rx.await.map_err(|_| gone())?
}

async fn post_labels(
    State(state): State<AppState>,
    Json(labels): Json<Vec<LabelInput>>,
) -> Result<(StatusCode, Json<StatusView>), ApiError> {
    let status = ask(&state, |reply| Msg::Labels(labels, reply)).await?;
    Ok((StatusCode::ACCEPTED, Json(status)))
}

async fn post_finish(State(state): State<AppState>) -> Result<Json<StatusView>, ApiError> {
    ask(&state, Msg::Finish).await.map(Json)
}

/// Binds `addr` and serves until `finish` is posted or the process is
/// interrupted.
pub async fn serve(setup: Setup, addr: SocketAddr) -> CliResult<()> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| {
        if e.kind() == std::io::ErrorKind::AddrInUse {
            Failure::new(EXIT_PORT_BUSY, format!("port {} is busy: {e}", addr.port()))
        } else {
            Failure::new(EXIT_FAILURE, format!("cannot bind {addr}: {e}"))
        }
    })?;
    let (state, done) = spawn_session(setup)?;
    log::info!("session service listening on http://{addr}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async move {
            tokio::select! {
                _ = done => log::info!("session finished"),
                _ = tokio::signal::ctrl_c() => log::info!("interrupted; labels so far are in the journal"),
            }
        })
        .await
        .map_err(|e| Failure::new(EXIT_FAILURE, format!("server error: {e}")))
}
