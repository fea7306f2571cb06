//! Axum service exposing the operations over HTTP/JSON.
//!
//! Quick operations (health, dataset generation, tasks, evaluation) are
//! synchronous; long-running ones (training, sweeps, ablations) run as
//! jobs on the blocking pool and are polled by id.

use axum::extract::{Path as AxumPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use flowfill_api as api;
use flowfill_core::config::RunConfig;
use flowfill_core::dataset::{encode_f64_hex, load_dataset};
use flowfill_core::error::Error as CoreError;
use flowfill_core::ops;
use flowfill_core::synth::ToyProcessSpec;
use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

#[derive(Clone)]
pub struct AppState {
    jobs: Arc<Mutex<JobTable>>,
}

struct JobTable {
    next_id: u64,
    entries: HashMap<u64, api::JobStatus>,
}

impl AppState {
    pub fn new() -> Self {
        AppState {
            jobs: Arc::new(Mutex::new(JobTable {
                next_id: 1,
                entries: HashMap::new(),
            })),
        }
    }

    fn create_job(&self) -> u64 {
        let mut table = self.jobs.lock().expect("job table");
        let id = table.next_id;
        table.next_id += 1;
        table.entries.insert(
            id,
            api::JobStatus {
                id,
                state: api::JobState::Queued,
                progress: None,
                result: None,
                error: None,
            },
        );
        id
    }

    fn update_job(&self, id: u64, update: impl FnOnce(&mut api::JobStatus)) {
        let mut table = self.jobs.lock().expect("job table");
        if let Some(entry) = table.entries.get_mut(&id) {
            update(entry);
        }
    }

    fn job(&self, id: u64) -> Option<api::JobStatus> {
        self.jobs.lock().expect("job table").entries.get(&id).cloned()
    }

    /// Run `work` on the blocking pool, storing its JSON result or error.
    fn spawn_job<F>(&self, work: F) -> u64
    where
        F: FnOnce(JobHandle) -> Result<serde_json::Value, CoreError> + Send + 'static,
    {
        let id = self.create_job();
        let state = self.clone();
        state.update_job(id, |j| j.state = api::JobState::Running);
        let handle = JobHandle {
            state: self.clone(),
            id,
        };
        let state = self.clone();
        tokio::task::spawn_blocking(move || match work(handle) {
            Ok(result) => state.update_job(id, |j| {
                j.state = api::JobState::Done;
                j.result = Some(result);
            }),
            Err(err) => state.update_job(id, |j| {
                j.state = api::JobState::Failed;
                j.error = Some(err.to_string());
            }),
        });
        id
    }
}

impl Default for AppState {
    fn default() -> Self {
        Self::new()
    }
}

/// Progress reporter handed to job bodies.
pub struct JobHandle {
    state: AppState,
    id: u64,
}

impl JobHandle {
    pub fn progress(&self, step: usize, total: usize, loss: f64) {
        self.state.update_job(self.id, |j| {
            j.progress = Some(api::JobProgress { step, total, loss })
        });
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.0,
            Json(api::ErrorResponse { error: self.1 }),
        )
            .into_response()
    }
}

impl From<CoreError> for ApiError {
    fn from(err: CoreError) -> Self {
        let status = match &err {
            CoreError::InvalidArgument(_)
            | CoreError::ShapeMismatch { .. }
            | CoreError::UnknownPhone { .. }
            | CoreError::EmptyMask(_)
            | CoreError::Alignment(_) => StatusCode::BAD_REQUEST,
            CoreError::Io(_) | CoreError::Format { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, err.to_string())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/datasets", post(gen_data))
        .route("/v1/train", post(train))
        .route("/v1/jobs/{id}", get(job_status))
        .route("/v1/tasks", post(run_task))
        .route("/v1/eval", post(run_eval))
        .route("/v1/sweep", post(run_sweep))
        .route("/v1/ablate", post(run_ablate))
        .with_state(state)
}

async fn health() -> Json<api::HealthResponse> {
    Json(api::HealthResponse {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

async fn gen_data(
    State(_state): State<AppState>,
    Json(req): Json<api::GenDataRequest>,
) -> ApiResult<api::GenDataReport> {
    let report = tokio::task::spawn_blocking(move || {
        let config = req.config.unwrap_or_else(|| RunConfig::with_seed(req.seed));
        ops::op_gen_data(&config, req.n, req.oracle, Path::new(&req.out_path))
    })
    .await
    .map_err(join_err)??;
    Ok(Json(report))
}

/// Derive the run config from the dataset's own echo, falling back to the
/// seed when the dataset was produced without one.
fn config_for_dataset(dataset: &Path, seed: Option<u64>) -> Result<RunConfig, CoreError> {
    let ds = load_dataset(dataset)?;
    match serde_json::from_value::<RunConfig>(ds.header.config.clone()) {
        Ok(mut config) => {
            if let Some(seed) = seed {
                config.seed = seed;
            }
            Ok(config)
        }
        Err(_) => Ok(RunConfig::with_seed(seed.unwrap_or(0))),
    }
}

fn process_for_dataset(dataset: &Path) -> Result<ToyProcessSpec, CoreError> {
    config_for_dataset(dataset, None).map(|c| c.process)
}

async fn train(
    State(state): State<AppState>,
    Json(req): Json<api::TrainRequest>,
) -> ApiResult<api::JobCreated> {
    let job_id = state.spawn_job(move |handle| {
        let mut config = config_for_dataset(Path::new(&req.dataset), req.seed)?;
        if let Some(steps) = req.steps {
            config.train.steps = steps;
        }
        if let Some(batch) = req.batch_size {
            config.train.batch_size = batch;
        }
        if let Some(lr) = req.peak_lr {
            config.train.peak_lr = lr;
        }
        if let Some(warmup) = req.warmup_steps {
            config.train.warmup_steps = warmup;
        }
        if let Some(masked) = req.masked_loss {
            config.train.masked_loss = masked;
        }
        if let Some(beta) = req.upsample_beta {
            config.train.upsample_beta = Some(beta);
        }
        let total = config.train.steps;
        let report = ops::op_train(
            &config,
            Path::new(&req.dataset),
            req.target,
            Path::new(&req.out_dir),
            |p| {
                if p.step % 25 == 0 {
                    handle.progress(p.step, total, p.loss);
                }
            },
        )?;
        Ok(serde_json::to_value(api::TrainResponse { report })?)
    });
    Ok(Json(api::JobCreated { job_id }))
}

async fn job_status(
    State(state): State<AppState>,
    AxumPath(id): AxumPath<u64>,
) -> ApiResult<api::JobStatus> {
    state
        .job(id)
        .map(Json)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no job {id}")))
}

async fn run_task(
    State(_state): State<AppState>,
    Json(params): Json<api::TaskParams>,
) -> ApiResult<api::TaskResponse> {
    let response = tokio::task::spawn_blocking(move || -> Result<_, CoreError> {
        let (report, output) = ops::op_task(&params)?;
        Ok(api::TaskResponse {
            frames_hex: encode_f64_hex(output.frames.data()),
            frames_shape: output.frames.shape().to_vec(),
            report,
        })
    })
    .await
    .map_err(join_err)??;
    Ok(Json(response))
}

async fn run_eval(
    State(_state): State<AppState>,
    Json(req): Json<api::EvalRequest>,
) -> ApiResult<api::EvalResponse> {
    let rows = tokio::task::spawn_blocking(move || -> Result<_, CoreError> {
        let process = process_for_dataset(&req.params.dataset)?;
        ops::op_eval(&req.params, &process)
    })
    .await
    .map_err(join_err)??;
    Ok(Json(api::EvalResponse { rows }))
}

async fn run_sweep(
    State(state): State<AppState>,
    Json(req): Json<api::SweepRequest>,
) -> ApiResult<api::JobCreated> {
    let job_id = state.spawn_job(move |_handle| {
        let process = process_for_dataset(&req.params.dataset)?;
        let rows = ops::op_sweep(&req.params, &process)?;
        let wire: Vec<api::SweepRowWire> = rows
            .into_iter()
            .map(|r| api::SweepRowWire {
                nfe: r.nfe,
                alpha: r.alpha,
                metric: r.metric,
                value: r.value,
                wall_time_ms: r.wall_time_ms,
            })
            .collect();
        Ok(serde_json::to_value(api::SweepResponse { rows: wire })?)
    });
    Ok(Json(api::JobCreated { job_id }))
}

async fn run_ablate(
    State(state): State<AppState>,
    Json(req): Json<api::AblateRequest>,
) -> ApiResult<api::JobCreated> {
    let job_id = state.spawn_job(move |_handle| {
        let mut config = config_for_dataset(&req.params.dataset, None)?;
        if let Some(steps) = req.steps {
            config.train.steps = steps;
        }
        if let Some(dim) = req.model_dim {
            config.audio.model_dim = dim;
        }
        if let Some(layers) = req.layers {
            config.audio.layers = layers;
        }
        if let Some(heads) = req.heads {
            config.audio.heads = heads;
        }
        if let Some(ffn) = req.ffn_width {
            config.audio.ffn_width = ffn;
        }
        if let Some(lr) = req.peak_lr {
            config.train.peak_lr = lr;
        }
        let report = ops::op_ablate(&config, &req.params)?;
        Ok(serde_json::to_value(report)?)
    });
    Ok(Json(api::JobCreated { job_id }))
}

fn join_err(err: tokio::task::JoinError) -> ApiError {
    ApiError(
        StatusCode::INTERNAL_SERVER_ERROR,
        format!("worker panicked: {err}"),
    )
}

/// Serve until the listener task is dropped; returns the bound address.
pub async fn serve(addr: &str) -> anyhow::Result<(std::net::SocketAddr, tokio::task::JoinHandle<()>)> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let bound = listener.local_addr()?;
    let app = router(AppState::new());
    let handle = tokio::spawn(async move {
        if let Err(err) = axum::serve(listener, app).await {
            eprintln!("server error: {err}");
        }
    });
    Ok((bound, handle))
}
