//! Blocking HTTP client for the worker protocol.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::mock::{mock_run, MockParams};
use super::{ItemResult, JobOutcome, MetricsInput, TrainingJob, WirePrediction};
use crate::dataset::CanonicalBundle;
use crate::ids::{JobId, WorkerId};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request to {url} failed: {source}")]
    Transport {
        url: String,
        #[source]
        source: ureq::Error,
    },
    #[error("{url} returned {status}: {body}")]
    Status { url: String, status: u16, body: String },
    #[error("mock run failed: {0}")]
    Mock(String),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsBody {
    pub records: Vec<MetricsInput>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictionsBody {
    pub predictions: Vec<WirePrediction>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AcceptedBody {
    pub accepted: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PredictionResults {
    pub results: Vec<ItemResult>,
}

/// Summary of one mock job processed over HTTP.
#[derive(Debug, Clone, PartialEq)]
pub struct RemoteRun {
    pub job_id: JobId,
    pub predictions: usize,
    pub metrics: usize,
}

pub struct WorkerClient {
    base: String,
    worker_id: WorkerId,
    agent: ureq::Agent,
}

impl WorkerClient {
    pub fn new(base_url: &str, worker_id: WorkerId) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        Self {
            base: base_url.trim_end_matches('/').to_owned(),
            worker_id,
            agent,
        }
    }

    fn read<T: DeserializeOwned>(url: String, resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<Option<T>, ClientError> {
        let mut resp = resp.map_err(|source| ClientError::Transport { url: url.clone(), source })?;
        let status = resp.status().as_u16();
        if status == 204 {
            return Ok(None);
        }
        if !(200..300).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(ClientError::Status { url, status, body });
        }
        resp.body_mut()
            .read_json()
            .map(Some)
            .map_err(|source| ClientError::Transport { url, source })
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<Option<T>, ClientError> {
        let url = format!("{}{path}", self.base);
        let resp = self.agent.get(&url).call();
        Self::read(url, resp)
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        let url = format!("{}{path}", self.base);
        let resp = self.agent.post(&url).send_json(body);
        Self::read(url.clone(), resp)?.ok_or(ClientError::Status {
            url,
            status: 204,
            body: String::new(),
        })
    }

    pub fn next_job(&self) -> Result<Option<TrainingJob>, ClientError> {
        self.get(&format!("/api/worker/jobs/next?worker_id={}", self.worker_id))
    }

    pub fn dataset(&self, job: &JobId) -> Result<CanonicalBundle, ClientError> {
        let path = format!("/api/worker/jobs/{job}/dataset");
        self.get(&path)?.ok_or_else(|| ClientError::Status {
            url: format!("{}{path}", self.base),
            status: 204,
            body: String::new(),
        })
    }

    pub fn post_metrics(&self, job: &JobId, records: Vec<MetricsInput>) -> Result<usize, ClientError> {
        let r: AcceptedBody = self.post(&format!("/api/worker/jobs/{job}/metrics"), &MetricsBody { records })?;
        Ok(r.accepted)
    }

    pub fn post_predictions(&self, job: &JobId, predictions: Vec<WirePrediction>) -> Result<Vec<ItemResult>, ClientError> {
        let r: PredictionResults =
            self.post(&format!("/api/worker/jobs/{job}/predictions"), &PredictionsBody { predictions })?;
        Ok(r.results)
    }

    pub fn complete(&self, job: &JobId, outcome: &JobOutcome) -> Result<TrainingJob, ClientError> {
        self.post(&format!("/api/worker/jobs/{job}/complete"), outcome)
    }

    /// Claim one job and answer it with mock predictions. `None` when the
    /// queue is empty.
    pub fn run_mock_once(&self, noise: f64, seed: u64, min_iou: f64) -> Result<Option<RemoteRun>, ClientError> {
        let Some(job) = self.next_job()? else {
            return Ok(None);
        };
        let bundle = self.dataset(&job.job_id)?;
        let out = match mock_run(&bundle.eval, MockParams { noise, seed, min_iou }) {
            Ok(out) => out,
            Err(e) => {
                self.complete(&job.job_id, &JobOutcome::Failed { reason: e.to_string() })?;
                return Err(ClientError::Mock(e.to_string()));
            }
        };
        let n_pred = out.predictions.len();
        self.post_predictions(&job.job_id, out.predictions)?;
        let n_metrics = self.post_metrics(&job.job_id, out.metrics)?;
        self.complete(&job.job_id, &JobOutcome::Completed)?;
        Ok(Some(RemoteRun {
            job_id: job.job_id,
            predictions: n_pred,
            metrics: n_metrics,
        }))
    }
}
