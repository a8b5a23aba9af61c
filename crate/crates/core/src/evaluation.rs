//! Prediction-to-ground-truth matching, per-class IoU reports and metric
//! timelines.

use std::collections::{BTreeMap, BTreeSet};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::active::ModelPrediction;
use crate::clock::Timestamp;
use crate::domain::{Annotation, AnnotationStatus, AnnotationStore, DomainError};
use crate::geometry::{iou, GeometryError, GridSpec};
use crate::ids::{AnnotationId, ImageId, JobId, LabelId, ModelId, PredictionId};

/// Class key of a metrics record that aggregates all classes.
pub const ALL_CLASSES: &str = "ALL";

/// Timelines whose last two steps both move less than this are flagged.
pub const PLATEAU_DELTA: f64 = 0.01;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("ground truth and predictions reference more than one image")]
    MixedImages,
    #[error("no predictions for model {model} instance {training_instance} in scope")]
    NoPredictions { model: ModelId, training_instance: u32 },
    #[error("no metrics recorded")]
    NoData,
    #[error("mean IoU {0} outside [0, 1]")]
    InvalidMeanIou(f64),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub annotation_id: AnnotationId,
    pub prediction_id: PredictionId,
    pub iou: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    pub unmatched_ground_truth: Vec<AnnotationId>,
    pub unmatched_predictions: Vec<PredictionId>,
}

/// Greedy same-label matching on one image.
///
/// Candidate pairs are taken by IoU descending (ties: lower annotation id,
/// then lower prediction id) while both sides are free. A pair needs
/// IoU > 0 and IoU >= `min_iou`.
pub fn match_predictions(
    ground_truth: &[Annotation],
    predictions: &[ModelPrediction],
    grid: GridSpec,
    min_iou: f64,
) -> Result<MatchResult, EvalError> {
    let images: BTreeSet<&ImageId> = ground_truth
        .iter()
        .map(|a| &a.image_id)
        .chain(predictions.iter().map(|p| &p.image_id))
        .collect();
    if images.len() > 1 {
        return Err(EvalError::MixedImages);
    }
    let mut candidates = Vec::new();
    for (gi, g) in ground_truth.iter().enumerate() {
        for (pi, p) in predictions.iter().enumerate() {
            if g.label_id != p.label_id {
                continue;
            }
            let v = iou(&g.polygon, &p.polygon, grid)?;
            if v > 0.0 && v >= min_iou {
                candidates.push((v, gi, pi));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| ground_truth[a.1].annotation_id.cmp(&ground_truth[b.1].annotation_id))
            .then_with(|| predictions[a.2].prediction_id.cmp(&predictions[b.2].prediction_id))
    });
    let mut gt_used = vec![false; ground_truth.len()];
    let mut pred_used = vec![false; predictions.len()];
    let mut out = MatchResult::default();
    for (v, gi, pi) in candidates {
        if gt_used[gi] || pred_used[pi] {
            continue;
        }
        gt_used[gi] = true;
        pred_used[pi] = true;
        out.pairs.push(MatchedPair {
            annotation_id: ground_truth[gi].annotation_id.clone(),
            prediction_id: predictions[pi].prediction_id.clone(),
            iou: v,
        });
    }
    out.unmatched_ground_truth = ground_truth
        .iter()
        .zip(&gt_used)
        .filter(|(_, used)| !**used)
        .map(|(g, _)| g.annotation_id.clone())
        .collect();
    out.unmatched_predictions = predictions
        .iter()
        .zip(&pred_used)
        .filter(|(_, used)| !**used)
        .map(|(p, _)| p.prediction_id.clone())
        .collect();
    out.unmatched_ground_truth.sort();
    out.unmatched_predictions.sort();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub model_id: ModelId,
    pub label_id: LabelId,
    pub mean_iou: f64,
    pub matched: usize,
    pub missed_ground_truth: usize,
    pub spurious_predictions: usize,
    pub training_instance: u32,
}

/// Running per-class tally.
#[derive(Debug, Clone, Default)]
pub struct ClassTally {
    pub iou_sum: f64,
    pub matched: usize,
    pub missed: usize,
    pub spurious: usize,
}

impl ClassTally {
    /// Matched IoUs averaged over matched plus missed ground truth.
    pub fn mean_iou(&self) -> f64 {
        let denom = self.matched + self.missed;
        if denom == 0 {
            0.0
        } else {
            self.iou_sum / denom as f64
        }
    }

    pub fn denominator(&self) -> usize {
        self.matched + self.missed
    }
}

/// Ground truth used for evaluation: accepted human annotations.
pub fn is_ground_truth(a: &Annotation) -> bool {
    a.status == AnnotationStatus::Accepted && !a.author.is_model()
}

/// Per-class tallies for one model instance over `images`.
pub fn tally_classes(
    store: &AnnotationStore,
    predictions: &[ModelPrediction],
    images: &BTreeSet<ImageId>,
    min_iou: f64,
) -> Result<BTreeMap<LabelId, ClassTally>, EvalError> {
    let mut by_image: BTreeMap<&ImageId, Vec<ModelPrediction>> = BTreeMap::new();
    for p in predictions.iter().filter(|p| images.contains(&p.image_id)) {
        by_image.entry(&p.image_id).or_default().push(p.clone());
    }
    let mut tallies: BTreeMap<LabelId, ClassTally> = BTreeMap::new();
    for image_id in images {
        let image = store
            .image(image_id)
            .ok_or_else(|| DomainError::UnknownImage(image_id.clone()))?;
        let gt: Vec<Annotation> = store
            .annotations_for_image(image_id)?
            .into_iter()
            .filter(is_ground_truth)
            .collect();
        let preds = by_image.remove(image_id).unwrap_or_default();
        let grid = GridSpec::for_image(image.width, image.height)?;
        let m = match_predictions(&gt, &preds, grid, min_iou)?;
        let gt_label: BTreeMap<&AnnotationId, &LabelId> = gt.iter().map(|a| (&a.annotation_id, &a.label_id)).collect();
        let pred_label: BTreeMap<&PredictionId, &LabelId> =
            preds.iter().map(|p| (&p.prediction_id, &p.label_id)).collect();
        for pair in &m.pairs {
            let t = tallies.entry(gt_label[&pair.annotation_id].clone()).or_default();
            t.iou_sum += pair.iou;
            t.matched += 1;
        }
        for a in &m.unmatched_ground_truth {
            tallies.entry(gt_label[a].clone()).or_default().missed += 1;
        }
        for p in &m.unmatched_predictions {
            tallies.entry(pred_label[p].clone()).or_default().spurious += 1;
        }
    }
    Ok(tallies)
}

/// Per-class rows for one model instance over the given images.
pub fn per_class_report(
    store: &AnnotationStore,
    predictions: &[ModelPrediction],
    model: &ModelId,
    training_instance: u32,
    images: &BTreeSet<ImageId>,
    min_iou: f64,
) -> Result<Vec<ClassReport>, EvalError> {
    let preds: Vec<ModelPrediction> = predictions
        .iter()
        .filter(|p| &p.model_id == model && p.training_instance == training_instance && images.contains(&p.image_id))
        .cloned()
        .collect();
    if preds.is_empty() {
        return Err(EvalError::NoPredictions {
            model: model.clone(),
            training_instance,
        });
    }
    let tallies = tally_classes(store, &preds, images, min_iou)?;
    Ok(tallies
        .into_iter()
        .map(|(label_id, t)| ClassReport {
            model_id: model.clone(),
            label_id,
            mean_iou: t.mean_iou(),
            matched: t.matched,
            missed_ground_truth: t.missed,
            spurious_predictions: t.spurious,
            training_instance,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub job_id: JobId,
    pub model_id: ModelId,
    /// A label id, or [`ALL_CLASSES`].
    pub label_id: LabelId,
    pub training_instance: u32,
    pub mean_iou: f64,
    pub sample_count: u64,
    pub recorded_at: Timestamp,
}

impl MetricsRecord {
    pub fn is_aggregate(&self) -> bool {
        self.label_id.as_str() == ALL_CLASSES
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimelinePoint {
    pub training_instance: u32,
    pub mean_iou: f64,
    pub sample_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub points: Vec<TimelinePoint>,
    pub plateaued: bool,
}

impl Timeline {
    fn new(points: Vec<TimelinePoint>) -> Result<Self, EvalError> {
        if points.is_empty() {
            return Err(EvalError::NoData);
        }
        let plateaued = is_plateaued(&points.iter().map(|p| p.mean_iou).collect::<Vec<_>>());
        Ok(Self { points, plateaued })
    }
}

/// At least three points and the last two steps each below [`PLATEAU_DELTA`].
pub fn is_plateaued(series: &[f64]) -> bool {
    let n = series.len();
    n >= 3 && series[n - 3..].windows(2).all(|w| (w[1] - w[0]).abs() < PLATEAU_DELTA)
}

/// Metrics posted by workers, in arrival order.
#[derive(Debug, Default)]
pub struct MetricsStore {
    records: RwLock<Vec<MetricsRecord>>,
}

impl MetricsStore {
    pub fn validate(record: &MetricsRecord) -> Result<(), EvalError> {
        if !(0.0..=1.0).contains(&record.mean_iou) {
            return Err(EvalError::InvalidMeanIou(record.mean_iou));
        }
        Ok(())
    }

    pub fn append(&self, record: MetricsRecord) -> Result<(), EvalError> {
        Self::validate(&record)?;
        self.records.write().push(record);
        Ok(())
    }

    pub fn records(&self) -> Vec<MetricsRecord> {
        self.records.read().clone()
    }

    /// Latest record per (instance, class) for a model. A later post for the
    /// same key supersedes an earlier one.
    fn latest(&self, model: &ModelId) -> BTreeMap<(u32, LabelId), MetricsRecord> {
        let mut out = BTreeMap::new();
        for r in self.records.read().iter().filter(|r| &r.model_id == model) {
            out.insert((r.training_instance, r.label_id.clone()), r.clone());
        }
        out
    }

    /// One point per training instance. Per-class records are combined,
    /// weighted by sample count; an instance with only an aggregate record
    /// uses it as is.
    pub fn model_timeline(&self, model: &ModelId) -> Result<Timeline, EvalError> {
        let mut per_instance: BTreeMap<u32, (Vec<MetricsRecord>, Option<MetricsRecord>)> = BTreeMap::new();
        for ((instance, _), r) in self.latest(model) {
            let slot = per_instance.entry(instance).or_default();
            if r.is_aggregate() {
                slot.1 = Some(r);
            } else {
                slot.0.push(r);
            }
        }
        let points = per_instance
            .into_iter()
            .map(|(training_instance, (classes, all))| {
                let samples: u64 = classes.iter().map(|r| r.sample_count).sum();
                if samples > 0 {
                    let weighted: f64 = classes.iter().map(|r| r.mean_iou * r.sample_count as f64).sum();
                    TimelinePoint {
                        training_instance,
                        mean_iou: weighted / samples as f64,
                        sample_count: samples,
                    }
                } else if let Some(all) = all {
                    TimelinePoint {
                        training_instance,
                        mean_iou: all.mean_iou,
                        sample_count: all.sample_count,
                    }
                } else {
                    let n = classes.len().max(1) as f64;
                    TimelinePoint {
                        training_instance,
                        mean_iou: classes.iter().map(|r| r.mean_iou).sum::<f64>() / n,
                        sample_count: 0,
                    }
                }
            })
            .collect();
        Timeline::new(points)
    }

    pub fn class_timeline(&self, model: &ModelId, label: &LabelId) -> Result<Timeline, EvalError> {
        let points = self
            .latest(model)
            .into_values()
            .filter(|r| &r.label_id == label)
            .map(|r| TimelinePoint {
                training_instance: r.training_instance,
                mean_iou: r.mean_iou,
                sample_count: r.sample_count,
            })
            .collect();
        Timeline::new(points)
    }
}
