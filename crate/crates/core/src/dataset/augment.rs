//! Geometric augmentation of annotation coordinates.
//!
//! The platform never touches pixels. Each variant carries the resolved op
//! list, which is enough for a worker to regenerate the image, and the
//! annotations mapped through the same ops.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetError, DatasetSelection};
use crate::domain::{Annotation, AnnotationStore, DomainError};
use crate::geometry::{clip_polygon_to_rect, transform_polygon, AffineTransform, PixelRect, Point, Polygon};
use crate::ids::{AnnotationId, ImageId, LabelId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AugmentOp {
    HorizontalFlip { p: f64 },
    VerticalFlip { p: f64 },
    /// Crop each side to a random fraction in `[min_fraction, 1]`.
    RandomCrop { min_fraction: f64 },
    Resize { width: u32, height: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSpec {
    pub ops: Vec<AugmentOp>,
    pub variants_per_image: u32,
    pub seed: u64,
    #[serde(default = "default_min_kept")]
    pub min_kept_area_fraction: f64,
}

fn default_min_kept() -> f64 {
    0.25
}

impl AugmentationSpec {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::InvalidSpec(m));
        for op in &self.ops {
            match *op {
                AugmentOp::HorizontalFlip { p } | AugmentOp::VerticalFlip { p } if !(0.0..=1.0).contains(&p) => {
                    return bad(format!("probability {p} outside [0, 1]"))
                }
                AugmentOp::RandomCrop { min_fraction } if !(min_fraction > 0.0 && min_fraction <= 1.0) => {
                    return bad(format!("min_fraction {min_fraction} outside (0, 1]"))
                }
                AugmentOp::Resize { width, height } if width == 0 || height == 0 => {
                    return bad("resize target has a zero dimension".into())
                }
                _ => {}
            }
        }
        if !(0.0..=1.0).contains(&self.min_kept_area_fraction) {
            return bad(format!(
                "min_kept_area_fraction {} outside [0, 1]",
                self.min_kept_area_fraction
            ));
        }
        Ok(())
    }
}

/// One op with its random choices fixed, in the coordinates of the image
/// as it is when the op runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ResolvedOp {
    HorizontalFlip,
    VerticalFlip,
    Crop { x: u32, y: u32, width: u32, height: u32 },
    Resize { width: u32, height: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformDescription {
    pub source_width: u32,
    pub source_height: u32,
    pub output_width: u32,
    pub output_height: u32,
    pub ops: Vec<ResolvedOp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedAnnotation {
    pub annotation_id: AnnotationId,
    pub label_id: LabelId,
    pub polygon: Polygon,
    /// Share of the original area that survived the crops.
    pub kept_area_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedSample {
    pub image_id: ImageId,
    pub variant: u32,
    pub transform: TransformDescription,
    pub annotations: Vec<AugmentedAnnotation>,
}

/// Generate `spec.variants_per_image` variants of one image's accepted
/// annotations.
pub fn augment(
    store: &AnnotationStore,
    image_id: &ImageId,
    spec: &AugmentationSpec,
) -> Result<Vec<AugmentedSample>, DatasetError> {
    spec.validate()?;
    let image = store
        .image(image_id)
        .ok_or_else(|| DomainError::UnknownImage(image_id.clone()))?;
    let trust = store.config().trust_auto_accept;
    let strict = DatasetSelection::default();
    let anns: Vec<Annotation> = store
        .annotations_for_image(image_id)?
        .into_iter()
        .filter(|a| strict.admits(a, trust))
        .collect();
    if anns.is_empty() {
        return Err(DatasetError::NoAcceptedAnnotations(image_id.clone()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(fnv1a(image_id.as_str()));
    (0..spec.variants_per_image)
        .map(|variant| {
            let ops = resolve(&spec.ops, image.width, image.height, &mut rng);
            let (w, h, annotations) = apply_ops(image.width, image.height, &anns, &ops, spec.min_kept_area_fraction);
            Ok(AugmentedSample {
                image_id: image_id.clone(),
                variant,
                transform: TransformDescription {
                    source_width: image.width,
                    source_height: image.height,
                    output_width: w,
                    output_height: h,
                    ops,
                },
                annotations,
            })
        })
        .collect()
}

fn resolve(ops: &[AugmentOp], mut w: u32, mut h: u32, rng: &mut ChaCha8Rng) -> Vec<ResolvedOp> {
    let mut out = Vec::new();
    for op in ops {
        match *op {
            AugmentOp::HorizontalFlip { p } => {
                if rng.random_bool(p) {
                    out.push(ResolvedOp::HorizontalFlip);
                }
            }
            AugmentOp::VerticalFlip { p } => {
                if rng.random_bool(p) {
                    out.push(ResolvedOp::VerticalFlip);
                }
            }
            AugmentOp::RandomCrop { min_fraction } => {
                let cw = crop_side(w, min_fraction, rng);
                let ch = crop_side(h, min_fraction, rng);
                let x = rng.random_range(0..=w - cw);
                let y = rng.random_range(0..=h - ch);
                out.push(ResolvedOp::Crop {
                    x,
                    y,
                    width: cw,
                    height: ch,
                });
                (w, h) = (cw, ch);
            }
            AugmentOp::Resize { width, height } => {
                out.push(ResolvedOp::Resize { width, height });
                (w, h) = (width, height);
            }
        }
    }
    out
}

fn crop_side(side: u32, min_fraction: f64, rng: &mut ChaCha8Rng) -> u32 {
    let f = if min_fraction >= 1.0 {
        1.0
    } else {
        rng.random_range(min_fraction..=1.0)
    };
    ((f * side as f64).round() as u32).clamp(1, side)
}

/// Map annotations through resolved ops. Returns the output size and the
/// surviving annotations; one is dropped once its kept area falls below
/// `min_kept` of the original.
pub fn apply_ops(
    width: u32,
    height: u32,
    annotations: &[Annotation],
    ops: &[ResolvedOp],
    min_kept: f64,
) -> (u32, u32, Vec<AugmentedAnnotation>) {
    let mut current: Vec<(Annotation, Polygon, f64)> = annotations
        .iter()
        .map(|a| (a.clone(), a.polygon.clone(), 1.0))
        .collect();
    let (mut w, mut h) = (width, height);
    for op in ops {
        match *op {
            ResolvedOp::HorizontalFlip => {
                map_all(&mut current, &AffineTransform::horizontal_flip(w as f64));
            }
            ResolvedOp::VerticalFlip => {
                map_all(&mut current, &AffineTransform::vertical_flip(h as f64));
            }
            ResolvedOp::Resize { width: tw, height: th } => {
                if let Ok(t) = AffineTransform::scale(tw as f64 / w as f64, th as f64 / h as f64) {
                    map_all(&mut current, &t);
                }
                (w, h) = (tw, th);
                current.retain_mut(|(_, poly, _)| match shift_into(poly, 0.0, 0.0, w as f64, h as f64) {
                    Some(p) => {
                        *poly = p;
                        true
                    }
                    None => false,
                });
            }
            ResolvedOp::Crop {
                x,
                y,
                width: cw,
                height: ch,
            } => {
                let Ok(rect) = PixelRect::new(x as f64, y as f64, cw as f64, ch as f64) else {
                    continue;
                };
                current = current
                    .into_iter()
                    .filter_map(|(ann, poly, kept)| {
                        let before = poly.area();
                        let clipped = clip_polygon_to_rect(&poly, &rect)?;
                        let kept = kept * clipped.area() / before;
                        let shifted = shift_into(&clipped, x as f64, y as f64, cw as f64, ch as f64)?;
                        (kept >= min_kept).then_some((ann, shifted, kept))
                    })
                    .collect();
                (w, h) = (cw, ch);
            }
        }
    }
    let out = current
        .into_iter()
        .map(|(ann, polygon, kept)| AugmentedAnnotation {
            annotation_id: ann.annotation_id,
            label_id: ann.label_id,
            polygon,
            kept_area_fraction: kept,
        })
        .collect();
    (w, h, out)
}

fn map_all(current: &mut Vec<(Annotation, Polygon, f64)>, t: &AffineTransform) {
    current.retain_mut(|(_, poly, _)| match transform_polygon(poly, t) {
        Ok(p) => {
            *poly = p;
            true
        }
        Err(_) => false,
    });
}

/// Translate a clipped polygon into crop coordinates, clamping the last
/// ulp of rounding so no vertex leaves `[0, w] x [0, h]`.
fn shift_into(poly: &Polygon, dx: f64, dy: f64, w: f64, h: f64) -> Option<Polygon> {
    let pts = poly
        .vertices()
        .iter()
        .map(|p| Point::new((p.x - dx).clamp(0.0, w), (p.y - dy).clamp(0.0, h)))
        .collect();
    Polygon::new(pts).ok()
}

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}
