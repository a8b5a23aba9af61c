//! Deterministic stand-in for a training framework.
//!
//! Each ground-truth polygon of the eval split comes back as a prediction
//! with its vertices jittered by seeded uniform noise. The worker also
//! scores its own predictions with the evaluation matcher, so the metrics
//! it posts can be checked against the server's recomputation.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{MetricsInput, WirePrediction};
use crate::active::ModelPrediction;
use crate::clock::Timestamp;
use crate::dataset::{CanonicalAnnotation, CanonicalImage, CanonicalSubset};
use crate::domain::{Annotation, AnnotationStatus};
use crate::evaluation::{match_predictions, ClassTally, EvalError};
use crate::geometry::{GridSpec, Point, Polygon};
use crate::ids::{LabelId, ModelId, PredictionId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MockParams {
    pub noise: f64,
    pub seed: u64,
    pub min_iou: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MockOutput {
    pub predictions: Vec<WirePrediction>,
    pub metrics: Vec<MetricsInput>,
}

fn is_ground_truth(a: &CanonicalAnnotation) -> bool {
    a.status == AnnotationStatus::Accepted && !a.author.is_model()
}

/// Base confidence before jitter.
pub fn base_confidence(noise: f64) -> f64 {
    (1.0 - noise / 20.0).clamp(0.0, 1.0)
}

fn jitter(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    if scale > 0.0 {
        rng.random_range(-scale..=scale)
    } else {
        0.0
    }
}

fn perturb(poly: &Polygon, width: u32, height: u32, noise: f64, rng: &mut ChaCha8Rng) -> Option<Polygon> {
    let pts: Vec<Point> = poly
        .vertices()
        .iter()
        .map(|p| Point {
            x: (p.x + jitter(rng, noise)).clamp(0.0, width as f64),
            y: (p.y + jitter(rng, noise)).clamp(0.0, height as f64),
        })
        .collect();
    Polygon::new(pts).ok()
}

/// Predictions and self-scored metrics for `eval`.
pub fn mock_run(eval: &CanonicalSubset, params: MockParams) -> Result<MockOutput, EvalError> {
    if !(params.noise >= 0.0 && params.noise.is_finite()) {
        return Err(EvalError::Domain(crate::domain::DomainError::Validation(format!(
            "noise must be a non-negative number, got {}",
            params.noise
        ))));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let base = base_confidence(params.noise);
    let mut images: Vec<&CanonicalImage> = eval.images.iter().collect();
    images.sort_by(|a, b| a.image_id.cmp(&b.image_id));

    let mut predictions = Vec::new();
    let mut tallies: BTreeMap<LabelId, ClassTally> = BTreeMap::new();
    let model = ModelId::new("mock");
    for image in images {
        let mut gt: Vec<&CanonicalAnnotation> = image.annotations.iter().filter(|a| is_ground_truth(a)).collect();
        gt.sort_by(|a, b| a.annotation_id.cmp(&b.annotation_id));
        let mut scored = Vec::new();
        for a in &gt {
            let Some(polygon) = perturb(&a.polygon, image.width, image.height, params.noise, &mut rng) else {
                continue;
            };
            let confidence = (base + jitter(&mut rng, 0.05)).clamp(0.0, 1.0);
            scored.push(ModelPrediction {
                prediction_id: PredictionId::new(format!("p{:08}", predictions.len() + 1)),
                image_id: image.image_id.clone(),
                model_id: model.clone(),
                label_id: a.label_id.clone(),
                polygon: polygon.clone(),
                confidence,
                training_instance: 0,
                produced_at: Timestamp(0),
            });
            predictions.push(WirePrediction {
                image_id: image.image_id.clone(),
                label: a.label_id.clone(),
                polygon: Some(polygon),
                mask_rle: None,
                confidence,
            });
        }
        let truth: Vec<Annotation> = gt
            .iter()
            .map(|a| Annotation {
                annotation_id: a.annotation_id.clone(),
                image_id: image.image_id.clone(),
                polygon: a.polygon.clone(),
                label_id: a.label_id.clone(),
                author: a.author.clone(),
                confidence: a.confidence,
                status: a.status,
                created_at: Timestamp(0),
                updated_at: Timestamp(0),
                revision: a.revision,
                source_prediction: None,
            })
            .collect();
        let grid = GridSpec::for_image(image.width, image.height)?;
        let m = match_predictions(&truth, &scored, grid, params.min_iou)?;
        let label_of = |id| truth.iter().find(|a| &a.annotation_id == id).map(|a| a.label_id.clone());
        for pair in &m.pairs {
            if let Some(l) = label_of(&pair.annotation_id) {
                let t = tallies.entry(l).or_default();
                t.iou_sum += pair.iou;
                t.matched += 1;
            }
        }
        for id in &m.unmatched_ground_truth {
            if let Some(l) = label_of(id) {
                tallies.entry(l).or_default().missed += 1;
            }
        }
    }
    let metrics = tallies
        .into_iter()
        .map(|(label, t)| MetricsInput {
            label,
            mean_iou: t.mean_iou(),
            sample_count: t.denominator() as u64,
        })
        .collect();
    Ok(MockOutput { predictions, metrics })
}
