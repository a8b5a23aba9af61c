//! The composed service: store, lease table, scheduler and gateway sharing
//! one clock. HTTP handlers and the CLI call into this and nothing deeper.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::active::{ActiveError, QueueEntry, Scheduler};
use crate::clock::{Clock, Timestamp};
use crate::config::{ConfigError, ServerConfig};
use crate::dataset::{self, CanonicalBundle, DatasetError, DatasetSelection, ExportFormat, ExportManifest, ExportOptions};
use crate::domain::{
    Annotation, AnnotationState, AnnotationStore, Author, DataLayout, DomainError, HierarchyNode, ImageRecord,
    NewAnnotation,
};
use crate::evaluation::{per_class_report, ClassReport, EvalError};
use crate::gateway::mock::{mock_run, MockParams};
use crate::gateway::{Gateway, GatewayError, ItemResult, JobOutcome, MetricsInput, TrainingJob};
use crate::geometry::Polygon;
use crate::ids::{FolderId, ImageId, JobId, LabelId, LeaseToken, ModelId, UserId, WorkerId};
use crate::lock::{ImageLease, LockError, LockManager, TokenCheck};

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Lock(#[from] LockError),
    #[error(transparent)]
    Active(#[from] ActiveError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("lease is expired or does not cover image {0}")]
    LockExpired(ImageId),
    #[error("lease belongs to another user")]
    LeaseNotHeld,
}

/// Response to a next-image request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextImage {
    pub image: ImageRecord,
    pub image_url: String,
    pub lease_token: LeaseToken,
    pub ttl_seconds: u64,
    pub expires_at: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue: Option<QueueEntry>,
    /// Top-level hierarchy nodes for the first dropdown.
    pub hierarchy_root: Vec<HierarchyNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockSummary {
    pub job_id: JobId,
    pub metrics: Vec<MetricsInput>,
    pub results: Vec<ItemResult>,
}

pub struct Platform {
    config: ServerConfig,
    store: AnnotationStore,
    locks: LockManager,
    scheduler: Scheduler,
    gateway: Gateway,
    clock: Arc<dyn Clock>,
}

impl std::fmt::Debug for Platform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Platform").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Platform {
    /// Boot from the data root named in `config`: scan, load, replay journals.
    pub fn open(config: ServerConfig, clock: Arc<dyn Clock>) -> Result<Self, PlatformError> {
        config.validate()?;
        let now = clock.now();
        let layout = DataLayout::new(&config.data_root);
        let store = AnnotationStore::open(layout.clone(), config.store_config())?;
        let locks = LockManager::open(layout.lease_journal(), lock_ttl(&config), now)?;
        let scheduler = Scheduler::open(layout.prediction_journal(), config.thresholds())?;
        let gateway = Gateway::open(layout.job_journal(), Some(layout.exports_dir()))?
            .with_abandon_after(Duration::from_secs(config.job_abandon_minutes * 60));
        gateway.seed_stock_models(now)?;
        Ok(Self {
            config,
            store,
            locks,
            scheduler,
            gateway,
            clock,
        })
    }

    /// Wrap an existing store with in-memory lease, prediction and job tables.
    pub fn in_memory(store: AnnotationStore, config: ServerConfig, clock: Arc<dyn Clock>) -> Result<Self, PlatformError> {
        config.validate_values()?;
        let gateway = Gateway::in_memory().with_abandon_after(Duration::from_secs(config.job_abandon_minutes * 60));
        Ok(Self {
            locks: LockManager::in_memory(lock_ttl(&config)),
            scheduler: Scheduler::in_memory(config.thresholds())?,
            gateway,
            store,
            config,
            clock,
        })
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn store(&self) -> &AnnotationStore {
        &self.store
    }

    pub fn locks(&self) -> &LockManager {
        &self.locks
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.scheduler
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    /// The user's current lease in `folder`, else the highest-priority free
    /// image. `None` when nothing is left to annotate.
    pub fn next_image(&self, folder: &FolderId, user: &UserId) -> Result<Option<NextImage>, PlatformError> {
        let catalog = self.store.folder_images(folder)?;
        let ranked = self.scheduler.rank_folder(&self.store, folder)?;
        let now = self.now();
        let held = self.locks.current_lease(user, folder, now);
        if held.is_none() && ranked.is_empty() {
            return Ok(None);
        }
        let order: Vec<ImageId> = ranked.iter().map(|e| e.image_id.clone()).collect();
        let (mut image, lease) = match self.locks.acquire_next(folder, user, now, &catalog, &order) {
            Ok(v) => v,
            Err(LockError::NoneAvailable) => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        if image.annotation_state == AnnotationState::Unannotated {
            image.annotation_state = AnnotationState::InProgress;
        }
        let queue = ranked.into_iter().find(|e| e.image_id == image.image_id);
        Ok(Some(NextImage {
            image_url: format!("/files/{}", image.file_path),
            image,
            ttl_seconds: (lease.ttl_ms / 1000) as u64,
            expires_at: lease.expires_at(),
            lease_token: lease.lease_token,
            queue,
            hierarchy_root: self.store.hierarchy_children(None)?,
        }))
    }

    pub fn heartbeat(&self, token: &LeaseToken) -> Result<ImageLease, PlatformError> {
        Ok(self.locks.heartbeat(token, self.now())?)
    }

    pub fn release(&self, token: &LeaseToken) -> Result<bool, PlatformError> {
        Ok(self.locks.release(token, self.now())?)
    }

    /// Create a human annotation under a live lease and release the lease.
    pub fn submit_annotation(
        &self,
        image: &ImageId,
        token: &LeaseToken,
        polygon: Polygon,
        label: LabelId,
        user: &UserId,
    ) -> Result<Annotation, PlatformError> {
        if self.store.image(image).is_none() {
            return Err(DomainError::UnknownImage(image.clone()).into());
        }
        let now = self.now();
        if self.locks.validate_token(token, image, now) == TokenCheck::Stale {
            return Err(PlatformError::LockExpired(image.clone()));
        }
        if self.locks.lease(token).is_some_and(|l| &l.holder != user) {
            return Err(PlatformError::LeaseNotHeld);
        }
        let ann = self.store.create_annotation(
            NewAnnotation {
                image_id: image.clone(),
                polygon,
                label_id: label,
                author: Author::Human(user.clone()),
                confidence: 1.0,
                source_prediction: None,
            },
            now,
        )?;
        self.locks.release(token, now)?;
        Ok(ann)
    }

    pub fn create_training_job(
        &self,
        model: &ModelId,
        selection: DatasetSelection,
        ratio: Option<f64>,
        seed: Option<u64>,
    ) -> Result<TrainingJob, PlatformError> {
        Ok(self.gateway.create_training_job(
            &self.store,
            model,
            selection,
            ratio.unwrap_or(self.config.split_ratio),
            seed.unwrap_or(self.config.rng_seed),
            self.now(),
        )?)
    }

    /// The canonical train/eval data a worker trains on.
    pub fn job_dataset(&self, job: &JobId) -> Result<CanonicalBundle, PlatformError> {
        let job = self.gateway.job(job)?;
        Ok(dataset::canonical_bundle(&self.store, &job.selection, &job.split)?)
    }

    /// Claim the next job and answer it with the in-process mock worker.
    pub fn run_mock_worker(&self, worker: &WorkerId, noise: f64, seed: u64) -> Result<Option<MockSummary>, PlatformError> {
        let Some(job) = self.gateway.claim_next_job(worker, self.now())? else {
            return Ok(None);
        };
        let params = MockParams {
            noise,
            seed,
            min_iou: self.config.match_min_iou,
        };
        let out = match self.job_dataset(&job.job_id).and_then(|b| Ok(mock_run(&b.eval, params)?)) {
            Ok(out) => out,
            Err(e) => {
                self.gateway
                    .complete_job(&job.job_id, JobOutcome::Failed { reason: e.to_string() }, self.now())?;
                return Err(e);
            }
        };
        let results = self
            .gateway
            .post_predictions(&self.store, &self.scheduler, &job.job_id, out.predictions, self.now())?;
        self.gateway
            .post_metrics(&self.store, &job.job_id, out.metrics.clone(), self.now())?;
        self.gateway.complete_job(&job.job_id, JobOutcome::Completed, self.now())?;
        Ok(Some(MockSummary {
            job_id: job.job_id,
            metrics: out.metrics,
            results,
        }))
    }

    /// Per-class rows recomputed from stored predictions over the job's
    /// eval split.
    pub fn job_report(&self, job: &JobId) -> Result<Vec<ClassReport>, PlatformError> {
        let job = self.gateway.job(job)?;
        let eval: BTreeSet<ImageId> = job.split.eval.iter().cloned().collect();
        let preds = self.scheduler.predictions_for(&job.model_id, job.training_instance);
        Ok(per_class_report(
            &self.store,
            &preds,
            &job.model_id,
            job.training_instance,
            &eval,
            self.config.match_min_iou,
        )?)
    }

    /// Report rows for every training instance of `model` that has
    /// predictions, ordered by instance.
    pub fn model_report(&self, model: &ModelId) -> Result<Vec<ClassReport>, PlatformError> {
        if self.gateway.model(model).is_none() {
            return Err(GatewayError::UnknownModel(model.clone()).into());
        }
        let mut jobs: Vec<TrainingJob> = self.gateway.jobs().into_iter().filter(|j| &j.model_id == model).collect();
        jobs.sort_by_key(|j| j.training_instance);
        let mut rows = Vec::new();
        for job in jobs {
            match self.job_report(&job.job_id) {
                Ok(r) => rows.extend(r),
                Err(PlatformError::Eval(EvalError::NoPredictions { .. })) => {}
                Err(e) => return Err(e),
            }
        }
        Ok(rows)
    }

    /// Split and export. Without `out` the bundle goes to
    /// `<data_root>/exports/export-<millis>-<seed>`.
    pub fn export(
        &self,
        selection: &DatasetSelection,
        format: ExportFormat,
        ratio: Option<f64>,
        seed: Option<u64>,
        out: Option<PathBuf>,
        options: ExportOptions,
    ) -> Result<(ExportManifest, PathBuf), PlatformError> {
        let ratio = ratio.unwrap_or(self.config.split_ratio);
        let seed = seed.unwrap_or(self.config.rng_seed);
        let split = dataset::split(&self.store, selection, ratio, seed)?;
        let out = match out {
            Some(p) => p,
            None => {
                let base = self
                    .store
                    .layout()
                    .map(|l| l.exports_dir())
                    .unwrap_or_else(|| self.config.data_root.join("exports"));
                base.join(format!("export-{}-{seed}", self.now().millis()))
            }
        };
        let manifest = dataset::export(&self.store, selection, &split, format, &out, options)?;
        Ok((manifest, out))
    }

    /// Drop expired leases. Returns how many went.
    pub fn sweep(&self) -> Result<usize, PlatformError> {
        Ok(self.locks.expire_stale(self.now())?)
    }
}

fn lock_ttl(config: &ServerConfig) -> Duration {
    Duration::from_secs(config.lock_ttl_minutes * 60)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::fixtures::{annotated_store, vehicle_hierarchy};
    use crate::domain::StoreConfig;
    use crate::gateway::NewModel;

    fn bare(images: usize) -> (Arc<ManualClock>, Platform) {
        let store = AnnotationStore::in_memory(StoreConfig::default());
        store.set_hierarchy(vehicle_hierarchy());
        store.add_folder(FolderId::new("f"));
        for i in 0..images {
            store
                .add_image(ImageRecord {
                    image_id: ImageId::new(format!("i{i}")),
                    folder_id: FolderId::new("f"),
                    file_path: format!("folders/f/images/i{i}.png"),
                    width: 50,
                    height: 50,
                    annotation_state: AnnotationState::Unannotated,
                })
                .unwrap();
        }
        let clock = Arc::new(ManualClock::new(Timestamp(1_000)));
        let p = Platform::in_memory(store, ServerConfig::default(), clock.clone()).unwrap();
        (clock, p)
    }

    #[test]
    fn users_get_distinct_images_and_exhaust() {
        let (_, p) = bare(2);
        let a = p.next_image(&FolderId::new("f"), &UserId::from("a")).unwrap().unwrap();
        let again = p.next_image(&FolderId::new("f"), &UserId::from("a")).unwrap().unwrap();
        assert_eq!(a.lease_token, again.lease_token);
        let b = p.next_image(&FolderId::new("f"), &UserId::from("b")).unwrap().unwrap();
        assert_ne!(a.image.image_id, b.image.image_id);
        assert_eq!(a.ttl_seconds, 1800);
        assert_eq!(a.image.annotation_state, AnnotationState::InProgress);
        assert!(p.next_image(&FolderId::new("f"), &UserId::from("c")).unwrap().is_none());
        assert!(matches!(
            p.next_image(&FolderId::new("nope"), &UserId::from("c")),
            Err(PlatformError::Domain(DomainError::UnknownFolder(_)))
        ));
    }

    #[test]
    fn submit_requires_live_lease() {
        let (clock, p) = bare(2);
        let user = UserId::from("a");
        let next = p.next_image(&FolderId::new("f"), &user).unwrap().unwrap();
        let poly = Polygon::rect(1.0, 1.0, 10.0, 10.0).unwrap();
        assert!(matches!(
            p.submit_annotation(&next.image.image_id, &next.lease_token, poly.clone(), "rotorcrafts".into(), &UserId::from("b")),
            Err(PlatformError::LeaseNotHeld)
        ));
        clock.advance(Duration::from_secs(31 * 60));
        assert!(matches!(
            p.submit_annotation(&next.image.image_id, &next.lease_token, poly.clone(), "rotorcrafts".into(), &user),
            Err(PlatformError::LockExpired(_))
        ));
        let next = p.next_image(&FolderId::new("f"), &user).unwrap().unwrap();
        let ann = p
            .submit_annotation(&next.image.image_id, &next.lease_token, poly, "rotorcrafts".into(), &user)
            .unwrap();
        assert_eq!(ann.author, Author::Human(user.clone()));
        assert!(p.locks().lease(&next.lease_token).is_none());
    }

    #[test]
    fn mock_pipeline_reports_agree() {
        let store = annotated_store("f", 12, 100, 100).unwrap();
        let clock = Arc::new(ManualClock::new(Timestamp(0)));
        let p = Platform::in_memory(store, ServerConfig::default(), clock).unwrap();
        let model = p
            .gateway()
            .register_model(
                NewModel {
                    display_name: "m".into(),
                    adapter_format: ExportFormat::Canonical,
                    config: serde_json::json!({"learning_rate": 0.01, "epochs": 3}).as_object().cloned().unwrap(),
                },
                p.now(),
            )
            .unwrap();
        let job = p.create_training_job(&model.model_id, DatasetSelection::folders(["f"]), None, Some(4)).unwrap();
        let run = p.run_mock_worker(&WorkerId::new("w"), 10.0, 4).unwrap().unwrap();
        assert_eq!(run.job_id, job.job_id);
        let report = p.job_report(&job.job_id).unwrap();
        assert_eq!(report.len(), 3);
        for (r, m) in report.iter().zip(&run.metrics) {
            assert!((r.mean_iou - m.mean_iou).abs() < 1e-9);
        }
        assert_eq!(p.model_report(&model.model_id).unwrap(), report);
        assert!(p.run_mock_worker(&WorkerId::new("w"), 10.0, 4).unwrap().is_none());
    }
}
