//! Model registry, training job queue and the worker-facing intake for
//! metrics and predictions.
//!
//! Workers pull: they claim the oldest pending job, post metrics and
//! predictions while working, and complete it. A claimed job that shows no
//! progress for [`DEFAULT_ABANDON_AFTER`] goes back to the queue.

pub mod client;
pub mod mock;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::active::{ActiveError, IngestOutcome, PredictionInput, Scheduler};
use crate::clock::Timestamp;
use crate::dataset::{self, DatasetError, DatasetSelection, ExportFormat, ExportOptions, SplitResult};
use crate::domain::{AnnotationStore, DomainError};
use crate::evaluation::{MetricsRecord, MetricsStore, ALL_CLASSES};
use crate::fixtures::STOCK_MODELS;
use crate::geometry::{mask_to_polygon, Polygon, RasterMask};
use crate::ids::{ImageId, JobId, LabelId, ModelId, WorkerId};
use crate::journal::Journal;

pub const DEFAULT_ABANDON_AFTER: Duration = Duration::from_secs(60 * 60);
pub const REQUIRED_CONFIG_KEYS: [&str; 2] = ["learning_rate", "epochs"];

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("a model named `{0}` is already registered")]
    DuplicateModel(String),
    #[error("model config is missing `{0}`")]
    MissingConfigKey(&'static str),
    #[error("unknown model `{0}`")]
    UnknownModel(ModelId),
    #[error("unknown job `{0}`")]
    UnknownJob(JobId),
    #[error("job {job} is {state}; cannot {op}")]
    IllegalState { job: JobId, state: JobState, op: &'static str },
    #[error("unknown class `{0}`")]
    UnknownClass(LabelId),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("job journal {}: {source}", path.display())]
    Journal {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub model_id: ModelId,
    pub display_name: String,
    pub adapter_format: ExportFormat,
    pub config: serde_json::Map<String, serde_json::Value>,
    pub registered_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewModel {
    pub display_name: String,
    #[serde(default = "default_adapter")]
    pub adapter_format: ExportFormat,
    pub config: serde_json::Map<String, serde_json::Value>,
}

fn default_adapter() -> ExportFormat {
    ExportFormat::Canonical
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Pending,
    Claimed,
    Running,
    Completed,
    Failed,
}

impl JobState {
    pub fn is_live(self) -> bool {
        matches!(self, JobState::Claimed | JobState::Running)
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            JobState::Pending => "pending",
            JobState::Claimed => "claimed",
            JobState::Running => "running",
            JobState::Completed => "completed",
            JobState::Failed => "failed",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingJob {
    pub job_id: JobId,
    pub model_id: ModelId,
    pub selection: DatasetSelection,
    pub split: SplitResult,
    pub config: serde_json::Map<String, serde_json::Value>,
    pub adapter_format: ExportFormat,
    pub state: JobState,
    pub training_instance: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worker_id: Option<WorkerId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<String>,
    /// Export bundle directory relative to the data root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub export_dir: Option<String>,
    pub created_at: Timestamp,
    pub updated_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum JobOutcome {
    Completed,
    Failed { reason: String },
}

/// One metrics row as posted by a worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsInput {
    /// A label id or `ALL`.
    pub label: LabelId,
    pub mean_iou: f64,
    pub sample_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRle {
    /// `[height, width]`.
    pub size: [u32; 2],
    /// Alternating run lengths, row-major, starting with zeros.
    pub counts: Vec<u64>,
}

/// A prediction on the wire: a polygon or an RLE mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WirePrediction {
    pub image_id: ImageId,
    pub label: LabelId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub polygon: Option<Polygon>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_rle: Option<MaskRle>,
    pub confidence: f64,
}

/// Per-item result of a prediction batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ItemResult {
    Ingested(IngestOutcome),
    Failed { error: String, message: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum GatewayEvent {
    Model(ModelEntry),
    Job(TrainingJob),
    Metrics(MetricsRecord),
}

#[derive(Debug, Default)]
struct State {
    models: BTreeMap<ModelId, ModelEntry>,
    jobs: BTreeMap<JobId, TrainingJob>,
    next_model: u64,
    next_job: u64,
    journal: Option<Journal<GatewayEvent>>,
}

impl State {
    fn log(&mut self, event: &GatewayEvent) -> Result<(), GatewayError> {
        match &mut self.journal {
            Some(j) => j.append(event).map_err(|source| GatewayError::Journal {
                path: j.path().to_owned(),
                source,
            }),
            None => Ok(()),
        }
    }

    fn apply(&mut self, event: GatewayEvent, metrics: &MetricsStore) {
        match event {
            GatewayEvent::Model(m) => {
                self.next_model = self.next_model.max(seq_after(m.model_id.as_str(), "model-"));
                self.models.insert(m.model_id.clone(), m);
            }
            GatewayEvent::Job(j) => {
                self.next_job = self.next_job.max(seq_after(j.job_id.as_str(), "job-"));
                self.jobs.insert(j.job_id.clone(), j);
            }
            GatewayEvent::Metrics(r) => {
                let _ = metrics.append(r);
            }
        }
    }

    fn job_mut(&mut self, id: &JobId) -> Result<&mut TrainingJob, GatewayError> {
        self.jobs.get_mut(id).ok_or_else(|| GatewayError::UnknownJob(id.clone()))
    }

    fn save_job(&mut self, job: TrainingJob) -> Result<TrainingJob, GatewayError> {
        self.log(&GatewayEvent::Job(job.clone()))?;
        self.jobs.insert(job.job_id.clone(), job.clone());
        Ok(job)
    }
}

fn seq_after(id: &str, prefix: &str) -> u64 {
    id.strip_prefix(prefix).and_then(|s| s.parse().ok()).unwrap_or(0)
}

#[derive(Debug)]
pub struct Gateway {
    state: Mutex<State>,
    metrics: MetricsStore,
    exports_root: Option<PathBuf>,
    abandon_after: Duration,
}

impl Gateway {
    pub fn in_memory() -> Self {
        Self {
            state: Mutex::new(State::default()),
            metrics: MetricsStore::default(),
            exports_root: None,
            abandon_after: DEFAULT_ABANDON_AFTER,
        }
    }

    /// Replay the job journal at `path`. Export bundles for new jobs are
    /// written under `exports_root` when given.
    pub fn open(path: impl Into<PathBuf>, exports_root: Option<PathBuf>) -> Result<Self, GatewayError> {
        let path = path.into();
        let (journal, events) =
            Journal::<GatewayEvent>::open(&path).map_err(|source| GatewayError::Journal { path, source })?;
        let metrics = MetricsStore::default();
        let mut state = State::default();
        for e in events {
            state.apply(e, &metrics);
        }
        state.journal = Some(journal);
        Ok(Self {
            state: Mutex::new(state),
            metrics,
            exports_root,
            abandon_after: DEFAULT_ABANDON_AFTER,
        })
    }

    pub fn with_abandon_after(mut self, d: Duration) -> Self {
        self.abandon_after = d;
        self
    }

    pub fn metrics(&self) -> &MetricsStore {
        &self.metrics
    }

    /// Register the stock model names if the registry is empty.
    pub fn seed_stock_models(&self, now: Timestamp) -> Result<(), GatewayError> {
        if !self.state.lock().models.is_empty() {
            return Ok(());
        }
        for name in STOCK_MODELS {
            let config = serde_json::json!({ "learning_rate": 0.004, "epochs": 50 });
            self.register_model(
                NewModel {
                    display_name: name.to_owned(),
                    adapter_format: if name.starts_with("ssd") {
                        ExportFormat::Voc
                    } else {
                        ExportFormat::Coco
                    },
                    config: config.as_object().cloned().unwrap_or_default(),
                },
                now,
            )?;
        }
        Ok(())
    }

    pub fn register_model(&self, new: NewModel, now: Timestamp) -> Result<ModelEntry, GatewayError> {
        if new.display_name.trim().is_empty() {
            return Err(GatewayError::Validation("display_name is empty".into()));
        }
        for key in REQUIRED_CONFIG_KEYS {
            if new.config.get(key).is_none_or(|v| v.is_null()) {
                return Err(GatewayError::MissingConfigKey(key));
            }
        }
        if new.config.keys().any(|k| k.trim().is_empty()) {
            return Err(GatewayError::Validation("config has an empty key".into()));
        }
        let mut state = self.state.lock();
        if state.models.values().any(|m| m.display_name == new.display_name) {
            return Err(GatewayError::DuplicateModel(new.display_name));
        }
        let entry = ModelEntry {
            model_id: ModelId::new(format!("model-{:03}", state.next_model + 1)),
            display_name: new.display_name,
            adapter_format: new.adapter_format,
            config: new.config,
            registered_at: now,
        };
        state.log(&GatewayEvent::Model(entry.clone()))?;
        state.next_model += 1;
        state.models.insert(entry.model_id.clone(), entry.clone());
        Ok(entry)
    }

    pub fn models(&self) -> Vec<ModelEntry> {
        self.state.lock().models.values().cloned().collect()
    }

    pub fn model(&self, id: &ModelId) -> Option<ModelEntry> {
        self.state.lock().models.get(id).cloned()
    }

    /// Split the selection, export it in the model's format and queue a
    /// pending job with the next training instance.
    pub fn create_training_job(
        &self,
        store: &AnnotationStore,
        model_id: &ModelId,
        selection: DatasetSelection,
        ratio: f64,
        seed: u64,
        now: Timestamp,
    ) -> Result<TrainingJob, GatewayError> {
        let model = self.model(model_id).ok_or_else(|| GatewayError::UnknownModel(model_id.clone()))?;
        let split = dataset::split(store, &selection, ratio, seed)?;
        let mut state = self.state.lock();
        let job_id = JobId::new(format!("job-{:06}", state.next_job + 1));
        let training_instance = state
            .jobs
            .values()
            .filter(|j| &j.model_id == model_id)
            .map(|j| j.training_instance)
            .max()
            .unwrap_or(0)
            + 1;
        let export_dir = match &self.exports_root {
            Some(root) => {
                let dir = root.join(job_id.as_str());
                dataset::export(store, &selection, &split, model.adapter_format, &dir, ExportOptions::default())?;
                Some(format!("exports/{job_id}"))
            }
            None => None,
        };
        let job = TrainingJob {
            job_id,
            model_id: model_id.clone(),
            selection,
            split,
            config: model.config,
            adapter_format: model.adapter_format,
            state: JobState::Pending,
            training_instance,
            worker_id: None,
            failure_reason: None,
            export_dir,
            created_at: now,
            updated_at: now,
        };
        let job = state.save_job(job)?;
        state.next_job += 1;
        Ok(job)
    }

    pub fn job(&self, id: &JobId) -> Result<TrainingJob, GatewayError> {
        self.state
            .lock()
            .jobs
            .get(id)
            .cloned()
            .ok_or_else(|| GatewayError::UnknownJob(id.clone()))
    }

    pub fn jobs(&self) -> Vec<TrainingJob> {
        self.state.lock().jobs.values().cloned().collect()
    }

    /// Hand the oldest pending job to `worker`. Abandoned jobs are returned
    /// to the queue first.
    pub fn claim_next_job(&self, worker: &WorkerId, now: Timestamp) -> Result<Option<TrainingJob>, GatewayError> {
        let mut state = self.state.lock();
        let limit = self.abandon_after.as_millis() as i64;
        let abandoned: Vec<TrainingJob> = state
            .jobs
            .values()
            .filter(|j| j.state.is_live() && now.since(j.updated_at) > limit)
            .cloned()
            .collect();
        for mut j in abandoned {
            j.state = JobState::Pending;
            j.worker_id = None;
            j.updated_at = now;
            state.save_job(j)?;
        }
        let next = state
            .jobs
            .values()
            .filter(|j| j.state == JobState::Pending)
            .min_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.job_id.cmp(&b.job_id)))
            .cloned();
        let Some(mut job) = next else {
            return Ok(None);
        };
        job.state = JobState::Claimed;
        job.worker_id = Some(worker.clone());
        job.updated_at = now;
        state.save_job(job).map(Some)
    }

    /// Validate and store metrics; the first post moves the job to Running.
    pub fn post_metrics(
        &self,
        store: &AnnotationStore,
        job_id: &JobId,
        records: Vec<MetricsInput>,
        now: Timestamp,
    ) -> Result<usize, GatewayError> {
        let mut state = self.state.lock();
        let job = state.job_mut(job_id)?.clone();
        if !job.state.is_live() {
            return Err(GatewayError::IllegalState {
                job: job.job_id,
                state: job.state,
                op: "post metrics",
            });
        }
        for r in &records {
            if !(0.0..=1.0).contains(&r.mean_iou) {
                return Err(GatewayError::Validation(format!(
                    "mean_iou {} for `{}` outside [0, 1]",
                    r.mean_iou, r.label
                )));
            }
            if r.label.as_str() != ALL_CLASSES && store.label(&r.label).is_none() {
                return Err(GatewayError::UnknownClass(r.label.clone()));
            }
        }
        let n = records.len();
        for r in records {
            let record = MetricsRecord {
                job_id: job.job_id.clone(),
                model_id: job.model_id.clone(),
                label_id: r.label,
                training_instance: job.training_instance,
                mean_iou: r.mean_iou,
                sample_count: r.sample_count,
                recorded_at: now,
            };
            state.log(&GatewayEvent::Metrics(record.clone()))?;
            self.metrics
                .append(record)
                .map_err(|e| GatewayError::Validation(e.to_string()))?;
        }
        let mut job = job;
        job.state = JobState::Running;
        job.updated_at = now;
        state.save_job(job)?;
        Ok(n)
    }

    /// Route each prediction through the scheduler. Item failures are
    /// reported inline and do not stop the batch.
    pub fn post_predictions(
        &self,
        store: &AnnotationStore,
        scheduler: &Scheduler,
        job_id: &JobId,
        predictions: Vec<WirePrediction>,
        now: Timestamp,
    ) -> Result<Vec<ItemResult>, GatewayError> {
        let job = {
            let mut state = self.state.lock();
            let job = state.job_mut(job_id)?;
            if !job.state.is_live() {
                return Err(GatewayError::IllegalState {
                    job: job.job_id.clone(),
                    state: job.state,
                    op: "post predictions",
                });
            }
            job.updated_at = now;
            let job = job.clone();
            state.save_job(job)?
        };
        Ok(predictions
            .into_iter()
            .map(|p| match to_input(store, &job, p) {
                Ok(input) => match scheduler.ingest(store, input, now) {
                    Ok(outcome) => ItemResult::Ingested(outcome),
                    Err(e) => failed(&e),
                },
                Err(e) => failed(&e),
            })
            .collect())
    }

    pub fn complete_job(&self, job_id: &JobId, outcome: JobOutcome, now: Timestamp) -> Result<TrainingJob, GatewayError> {
        let mut state = self.state.lock();
        let mut job = state.job_mut(job_id)?.clone();
        if !job.state.is_live() {
            return Err(GatewayError::IllegalState {
                job: job.job_id,
                state: job.state,
                op: "complete",
            });
        }
        match outcome {
            JobOutcome::Completed => job.state = JobState::Completed,
            JobOutcome::Failed { reason } => {
                job.state = JobState::Failed;
                job.failure_reason = Some(reason);
            }
        }
        job.updated_at = now;
        state.save_job(job)
    }
}

fn failed(e: &ActiveError) -> ItemResult {
    let kind = match e {
        ActiveError::OutOfRange(_) => "OutOfRange",
        ActiveError::Domain(DomainError::UnknownImage(_)) => "UnknownImage",
        ActiveError::Domain(DomainError::UnknownLabel(_)) => "UnknownLabel",
        ActiveError::Domain(DomainError::DegeneratePolygon(_)) => "DegeneratePolygon",
        ActiveError::Domain(_) => "ValidationError",
        ActiveError::InvalidThresholds(_) | ActiveError::Journal { .. } => "InternalError",
    };
    ItemResult::Failed {
        error: kind.to_owned(),
        message: e.to_string(),
    }
}

fn to_input(store: &AnnotationStore, job: &TrainingJob, p: WirePrediction) -> Result<PredictionInput, ActiveError> {
    let polygon = match (p.polygon, p.mask_rle) {
        (Some(poly), None) => poly,
        (None, Some(rle)) => {
            let image = store
                .image(&p.image_id)
                .ok_or_else(|| DomainError::UnknownImage(p.image_id.clone()))?;
            let [h, w] = rle.size;
            if (w, h) != (image.width, image.height) {
                return Err(DomainError::Validation(format!(
                    "mask size {h}x{w} does not match image {}x{}",
                    image.height, image.width
                ))
                .into());
            }
            let mask = RasterMask::from_rle(h, w, &rle.counts).map_err(DomainError::from)?;
            mask_to_polygon(&mask).ok_or_else(|| DomainError::DegeneratePolygon("empty mask".into()))?
        }
        _ => {
            return Err(DomainError::Validation("exactly one of polygon and mask_rle is required".into()).into());
        }
    };
    Ok(PredictionInput {
        image_id: p.image_id,
        model_id: job.model_id.clone(),
        label_id: p.label,
        polygon,
        confidence: p.confidence,
        training_instance: job.training_instance,
    })
}
