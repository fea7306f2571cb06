//! Request/response types of the HTTP/JSON service. Operation parameter
//! and report types are reused from the core crate; this crate adds the
//! envelope types the wire needs.

use serde::{Deserialize, Serialize};

pub use flowfill_core::config::{RunConfig, TrainConfig};
pub use flowfill_core::ops::{
    AblateParams, AblateReport, EvalParams, GenDataReport, MetricRow, SweepParams, TaskParams,
    TaskReport, TrainTarget,
};
pub use flowfill_core::tasks::TaskKind;

pub const API_VERSION: &str = "v1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub version: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenDataRequest {
    pub out_path: String,
    pub n: usize,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub oracle: bool,
    /// Full run config; when absent one is derived from the seed.
    #[serde(default)]
    pub config: Option<RunConfig>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRequest {
    pub dataset: String,
    pub out_dir: String,
    pub target: TrainTarget,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub peak_lr: Option<f64>,
    #[serde(default)]
    pub warmup_steps: Option<usize>,
    #[serde(default)]
    pub masked_loss: Option<bool>,
    #[serde(default)]
    pub upsample_beta: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainResponse {
    pub report: flowfill_core::ops::TrainReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobProgress {
    pub step: usize,
    pub total: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobCreated {
    pub job_id: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: u64,
    pub state: JobState,
    #[serde(default)]
    pub progress: Option<JobProgress>,
    #[serde(default)]
    pub result: Option<serde_json::Value>,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskResponse {
    pub report: TaskReport,
    /// Generated frames, row-major little-endian f64 hex.
    pub frames_hex: String,
    pub frames_shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRequest {
    pub params: EvalParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResponse {
    pub rows: Vec<MetricRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRequest {
    pub params: SweepParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRowWire {
    pub nfe: usize,
    pub alpha: f64,
    pub metric: String,
    pub value: f64,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResponse {
    pub rows: Vec<SweepRowWire>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblateRequest {
    pub params: AblateParams,
    /// Training budget override applied to every ablation run.
    #[serde(default)]
    pub steps: Option<usize>,
    /// Reduced model width/depth for the matched-budget comparison.
    #[serde(default)]
    pub model_dim: Option<usize>,
    #[serde(default)]
    pub layers: Option<usize>,
    #[serde(default)]
    pub heads: Option<usize>,
    #[serde(default)]
    pub ffn_width: Option<usize>,
    #[serde(default)]
    pub peak_lr: Option<f64>,
}
