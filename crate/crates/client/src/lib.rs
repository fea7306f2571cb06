//! Thin typed client over the flowfill HTTP API.

use flowfill_api as api;
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("http error: {0}")]
    Http(#[from] reqwest::Error),
    #[error("server rejected the request ({status}): {message}")]
    Api {
        status: reqwest::StatusCode,
        message: String,
    },
    #[error("job {id} failed: {message}")]
    JobFailed { id: u64, message: String },
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base_url: impl Into<String>) -> Self {
        let mut base = base_url.into();
        while base.ends_with('/') {
            base.pop();
        }
        Client {
            base,
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn post<Req, Resp>(&self, path: &str, body: &Req) -> Result<Resp>
    where
        Req: serde::Serialize,
        Resp: serde::de::DeserializeOwned,
    {
        let response = self
            .http
            .post(format!("{}/{path}", self.base))
            .json(body)
            .send()
            .await?;
        Self::decode(response).await
    }

    async fn get<Resp>(&self, path: &str) -> Result<Resp>
    where
        Resp: serde::de::DeserializeOwned,
    {
        let response = self.http.get(format!("{}/{path}", self.base)).send().await?;
        Self::decode(response).await
    }

    async fn decode<Resp>(response: reqwest::Response) -> Result<Resp>
    where
        Resp: serde::de::DeserializeOwned,
    {
        let status = response.status();
        if status.is_success() {
            Ok(response.json().await?)
        } else {
            let message = match response.json::<api::ErrorResponse>().await {
                Ok(body) => body.error,
                Err(_) => status.to_string(),
            };
            Err(ClientError::Api { status, message })
        }
    }

    pub async fn health(&self) -> Result<api::HealthResponse> {
        self.get("v1/health").await
    }

    pub async fn gen_data(&self, req: &api::GenDataRequest) -> Result<api::GenDataReport> {
        self.post("v1/datasets", req).await
    }

    pub async fn train(&self, req: &api::TrainRequest) -> Result<api::JobCreated> {
        self.post("v1/train", req).await
    }

    pub async fn job(&self, id: u64) -> Result<api::JobStatus> {
        self.get(&format!("v1/jobs/{id}")).await
    }

    /// Poll a job until it finishes; `on_progress` sees each status.
    pub async fn wait_for_job(
        &self,
        id: u64,
        poll: Duration,
        mut on_progress: impl FnMut(&api::JobStatus),
    ) -> Result<serde_json::Value> {
        loop {
            let status = self.job(id).await?;
            on_progress(&status);
            match status.state {
                api::JobState::Done => {
                    return Ok(status.result.unwrap_or(serde_json::Value::Null));
                }
                api::JobState::Failed => {
                    return Err(ClientError::JobFailed {
                        id,
                        message: status.error.unwrap_or_else(|| "unknown".into()),
                    });
                }
                _ => tokio::time::sleep(poll).await,
            }
        }
    }

    pub async fn task(&self, params: &api::TaskParams) -> Result<api::TaskResponse> {
        self.post("v1/tasks", params).await
    }

    pub async fn eval(&self, req: &api::EvalRequest) -> Result<api::EvalResponse> {
        self.post("v1/eval", req).await
    }

    pub async fn sweep(&self, req: &api::SweepRequest) -> Result<api::JobCreated> {
        self.post("v1/sweep", req).await
    }

    pub async fn ablate(&self, req: &api::AblateRequest) -> Result<api::JobCreated> {
        self.post("v1/ablate", req).await
    }
}
