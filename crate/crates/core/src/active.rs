//! Uncertainty sampling.
//!
//! Predictions are banded by confidence. Auto-accept predictions become
//! model-authored annotations; the rest are queued per (model, image) and
//! drive the image's urgency score `min |conf - 0.5|`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::domain::{
    AnnotationStatus, AnnotationStore, Author, DomainError, NewAnnotation,
};
use crate::geometry::{iou, GridSpec, Polygon};
use crate::ids::{AnnotationId, FolderId, ImageId, LabelId, ModelId, PredictionId};
use crate::journal::Journal;

/// IoU at which a prediction is considered to duplicate accepted human work.
pub const REDUNDANT_IOU: f64 = 0.9;

#[derive(Debug, Error)]
pub enum ActiveError {
    #[error("confidence {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("prediction journal {}: {source}", path.display())]
    Journal {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub auto_accept: f64,
    pub uncertain_low: f64,
    pub uncertain_high: f64,
    pub unpredicted_score: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            auto_accept: 0.80,
            uncertain_low: 0.40,
            uncertain_high: 0.60,
            unpredicted_score: 0.15,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), ActiveError> {
        let Self {
            auto_accept,
            uncertain_low,
            uncertain_high,
            unpredicted_score,
        } = *self;
        for (name, v) in [
            ("auto_accept_threshold", auto_accept),
            ("uncertain_low", uncertain_low),
            ("uncertain_high", uncertain_high),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ActiveError::InvalidThresholds(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !(uncertain_low < uncertain_high && uncertain_high < auto_accept) {
            return Err(ActiveError::InvalidThresholds(format!(
                "need uncertain_low < uncertain_high < auto_accept_threshold, got {uncertain_low} / {uncertain_high} / {auto_accept}"
            )));
        }
        if !(unpredicted_score.is_finite() && unpredicted_score >= 0.0) {
            return Err(ActiveError::InvalidThresholds(format!(
                "unpredicted_score = {unpredicted_score} must be non-negative"
            )));
        }
        Ok(())
    }

    pub fn band(&self, confidence: f64) -> Result<ConfidenceBand, ActiveError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(ActiveError::OutOfRange(confidence));
        }
        Ok(if confidence >= self.auto_accept {
            ConfidenceBand::AutoAccept
        } else if confidence >= self.uncertain_low && confidence <= self.uncertain_high {
            ConfidenceBand::Uncertain
        } else {
            ConfidenceBand::Normal
        })
    }

    /// Urgency of an image from its queued confidences. Lower is more urgent.
    pub fn score(&self, confidences: impl IntoIterator<Item = f64>) -> f64 {
        confidences
            .into_iter()
            .filter(|&c| c < self.auto_accept)
            .map(|c| (c - 0.5).abs())
            .min_by(f64::total_cmp)
            .unwrap_or(self.unpredicted_score)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConfidenceBand {
    AutoAccept,
    Uncertain,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPrediction {
    pub prediction_id: PredictionId,
    pub image_id: ImageId,
    pub model_id: ModelId,
    pub label_id: LabelId,
    pub polygon: Polygon,
    pub confidence: f64,
    pub training_instance: u32,
    pub produced_at: Timestamp,
}

/// A prediction before it has been assigned an id.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionInput {
    pub image_id: ImageId,
    pub model_id: ModelId,
    pub label_id: LabelId,
    pub polygon: Polygon,
    pub confidence: f64,
    pub training_instance: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum IngestAction {
    AutoAccepted { annotation_id: AnnotationId },
    Queued { band: ConfidenceBand },
    /// Queued, discarding the model's predictions from an older instance.
    Replaced { band: ConfidenceBand },
    /// Duplicates an accepted human annotation; kept for evaluation only.
    Redundant { annotation_id: AnnotationId },
    /// From an instance older than one already queued; kept for evaluation only.
    Superseded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestOutcome {
    pub prediction_id: PredictionId,
    #[serde(flatten)]
    pub action: IngestAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub image_id: ImageId,
    pub score: f64,
    /// Band of the most uncertain queued object, `None` when unpredicted.
    pub band: Option<ConfidenceBand>,
    pub basis: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PredictionRecord {
    prediction: ModelPrediction,
    action: IngestAction,
}

#[derive(Debug, Default)]
struct State {
    /// Every ingested prediction, in ingest order.
    history: Vec<ModelPrediction>,
    /// Per image, per model: the latest instance's queued predictions.
    queued: BTreeMap<ImageId, BTreeMap<ModelId, Vec<ModelPrediction>>>,
    next_seq: u64,
}

impl State {
    fn apply(&mut self, record: &PredictionRecord) {
        let p = &record.prediction;
        self.next_seq = self.next_seq.max(seq_of(&p.prediction_id));
        self.history.push(p.clone());
        if matches!(record.action, IngestAction::Queued { .. } | IngestAction::Replaced { .. }) {
            let slot = self
                .queued
                .entry(p.image_id.clone())
                .or_default()
                .entry(p.model_id.clone())
                .or_default();
            if slot.first().is_some_and(|q| q.training_instance < p.training_instance) {
                slot.clear();
            }
            slot.push(p.clone());
        }
    }

    /// What queueing `input` would do to its (model, image) slot.
    fn queue_effect(&self, input: &PredictionInput) -> QueueEffect {
        let current = self
            .queued
            .get(&input.image_id)
            .and_then(|m| m.get(&input.model_id))
            .and_then(|v| v.first())
            .map(|p| p.training_instance);
        match current {
            Some(c) if c > input.training_instance => QueueEffect::Superseded,
            Some(c) if c < input.training_instance => QueueEffect::Replaces,
            _ => QueueEffect::Joins,
        }
    }
}

enum QueueEffect {
    Joins,
    Replaces,
    Superseded,
}

fn seq_of(id: &PredictionId) -> u64 {
    id.as_str().trim_start_matches('p').parse().unwrap_or(0)
}

/// Prediction queue and ranking.
#[derive(Debug)]
pub struct Scheduler {
    thresholds: Thresholds,
    state: RwLock<State>,
    journal: Option<Mutex<Journal<PredictionRecord>>>,
}

impl Scheduler {
    pub fn in_memory(thresholds: Thresholds) -> Result<Self, ActiveError> {
        thresholds.validate()?;
        Ok(Self {
            thresholds,
            state: RwLock::new(State::default()),
            journal: None,
        })
    }

    /// Replay the prediction journal at `path`.
    pub fn open(path: impl Into<PathBuf>, thresholds: Thresholds) -> Result<Self, ActiveError> {
        thresholds.validate()?;
        let path = path.into();
        let (journal, records) = Journal::<PredictionRecord>::open(&path)
            .map_err(|source| ActiveError::Journal { path, source })?;
        let mut state = State::default();
        for r in &records {
            state.apply(r);
        }
        Ok(Self {
            thresholds,
            state: RwLock::new(state),
            journal: Some(Mutex::new(journal)),
        })
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.thresholds
    }

    pub fn band(&self, confidence: f64) -> Result<ConfidenceBand, ActiveError> {
        self.thresholds.band(confidence)
    }

    /// Route one prediction: auto-accept it, queue it, or keep it for
    /// evaluation only.
    pub fn ingest(
        &self,
        store: &AnnotationStore,
        input: PredictionInput,
        now: Timestamp,
    ) -> Result<IngestOutcome, ActiveError> {
        let band = self.thresholds.band(input.confidence)?;
        let image = store
            .image(&input.image_id)
            .ok_or_else(|| DomainError::UnknownImage(input.image_id.clone()))?;
        if store.label(&input.label_id).is_none() {
            return Err(DomainError::UnknownLabel(input.label_id).into());
        }

        let mut state = self.state.write();
        let prediction_id = PredictionId::new(format!("p{:08}", state.next_seq + 1));
        let grid = GridSpec::for_image(image.width, image.height).map_err(DomainError::from)?;
        let redundant_with = store
            .annotations_for_image(&input.image_id)?
            .into_iter()
            .filter(|a| {
                a.status == AnnotationStatus::Accepted && !a.author.is_model() && a.label_id == input.label_id
            })
            .find(|a| {
                iou(&a.polygon, &input.polygon, grid).is_ok_and(|v| v >= REDUNDANT_IOU)
            });

        let action = if let Some(a) = redundant_with {
            IngestAction::Redundant {
                annotation_id: a.annotation_id,
            }
        } else if band == ConfidenceBand::AutoAccept {
            let ann = store.create_annotation(
                NewAnnotation {
                    image_id: input.image_id.clone(),
                    polygon: input.polygon.clone(),
                    label_id: input.label_id.clone(),
                    author: Author::Model(input.model_id.clone()),
                    confidence: input.confidence,
                    source_prediction: Some(prediction_id.clone()),
                },
                now,
            )?;
            IngestAction::AutoAccepted {
                annotation_id: ann.annotation_id,
            }
        } else {
            match state.queue_effect(&input) {
                QueueEffect::Joins => IngestAction::Queued { band },
                QueueEffect::Replaces => IngestAction::Replaced { band },
                QueueEffect::Superseded => IngestAction::Superseded,
            }
        };

        let record = PredictionRecord {
            prediction: ModelPrediction {
                prediction_id: prediction_id.clone(),
                image_id: input.image_id,
                model_id: input.model_id,
                label_id: input.label_id,
                polygon: input.polygon,
                confidence: input.confidence,
                training_instance: input.training_instance,
                produced_at: now,
            },
            action: action.clone(),
        };
        if let Some(j) = &self.journal {
            let mut j = j.lock();
            j.append(&record).map_err(|source| ActiveError::Journal {
                path: j.path().to_owned(),
                source,
            })?;
        }
        state.apply(&record);
        Ok(IngestOutcome { prediction_id, action })
    }

    /// Urgency of one image from its currently queued predictions.
    pub fn queue_entry(&self, image: &ImageId) -> QueueEntry {
        let state = self.state.read();
        self.entry_for(&state, image)
    }

    fn entry_for(&self, state: &State, image: &ImageId) -> QueueEntry {
        let confidences: Vec<f64> = state
            .queued
            .get(image)
            .into_iter()
            .flat_map(|m| m.values().flatten())
            .map(|p| p.confidence)
            .filter(|&c| c < self.thresholds.auto_accept)
            .collect();
        let score = self.thresholds.score(confidences.iter().copied());
        let band = confidences
            .iter()
            .copied()
            .min_by(|a, b| (a - 0.5).abs().total_cmp(&(b - 0.5).abs()))
            .and_then(|c| self.thresholds.band(c).ok());
        QueueEntry {
            image_id: image.clone(),
            score,
            band,
            basis: confidences.len(),
        }
    }

    /// Unannotated images of a folder, most urgent first, ties by id.
    ///
    /// An image whose only annotations are auto-accepted and which has no
    /// queued predictions left is considered done and omitted.
    pub fn rank_folder(&self, store: &AnnotationStore, folder: &FolderId) -> Result<Vec<QueueEntry>, ActiveError> {
        let images = store.folder_images(folder)?;
        let mut auto_covered = Vec::with_capacity(images.len());
        for img in &images {
            let anns = store.annotations_for_image(&img.image_id)?;
            auto_covered.push(anns.iter().any(|a| a.status == AnnotationStatus::AutoAccepted));
        }
        let state = self.state.read();
        let mut out: Vec<QueueEntry> = images
            .iter()
            .zip(auto_covered)
            .filter(|(img, _)| img.annotation_state == crate::domain::AnnotationState::Unannotated)
            .map(|(img, covered)| (self.entry_for(&state, &img.image_id), covered))
            .filter(|(entry, covered)| !(*covered && entry.basis == 0))
            .map(|(entry, _)| entry)
            .collect();
        out.sort_by(|a, b| a.score.total_cmp(&b.score).then_with(|| a.image_id.cmp(&b.image_id)));
        Ok(out)
    }

    pub fn prediction(&self, id: &PredictionId) -> Option<ModelPrediction> {
        self.state
            .read()
            .history
            .iter()
            .find(|p| &p.prediction_id == id)
            .cloned()
    }

    /// Every prediction a model made in one training instance.
    pub fn predictions_for(&self, model: &ModelId, training_instance: u32) -> Vec<ModelPrediction> {
        self.state
            .read()
            .history
            .iter()
            .filter(|p| &p.model_id == model && p.training_instance == training_instance)
            .cloned()
            .collect()
    }

    pub fn all_predictions(&self) -> Vec<ModelPrediction> {
        self.state.read().history.clone()
    }
}
