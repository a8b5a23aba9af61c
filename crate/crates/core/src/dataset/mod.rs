//! Dataset selection, train/eval splitting, augmentation and export.

mod augment;
mod export;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use augment::{
    apply_ops, augment, AugmentOp, AugmentationSpec, AugmentedAnnotation, AugmentedSample, ResolvedOp,
    TransformDescription,
};
pub use export::{
    canonical_bundle, export, import_canonical, read_canonical, CanonicalAnnotation, CanonicalBundle, CanonicalImage,
    CanonicalSubset, ExportCounts, ExportFormat, ExportManifest, ExportOptions, LabelEntry,
};

use crate::domain::{Annotation, AnnotationStatus, AnnotationStore, DomainError, ImageRecord};
use crate::ids::{FolderId, ImageId, LabelId};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("selection names no folders")]
    EmptySelection,
    #[error("need at least 2 images with accepted annotations, found {0}")]
    InsufficientData(usize),
    #[error("ratio {0} must lie strictly between 0 and 1")]
    InvalidRatio(f64),
    #[error("image {0} has no accepted annotations")]
    NoAcceptedAnnotations(ImageId),
    #[error("invalid augmentation spec: {0}")]
    InvalidSpec(String),
    #[error("unsupported export format `{0}`")]
    UnsupportedFormat(String),
    #[error("split does not match the selection: {0}")]
    InconsistentSplit(String),
    #[error("{}: schema violation at {field} (line {line}, column {column}): {detail}", path.display())]
    SchemaViolation {
        path: PathBuf,
        field: String,
        line: usize,
        column: usize,
        detail: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetSelection {
    pub folder_ids: Vec<FolderId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_filter: Option<BTreeSet<LabelId>>,
    #[serde(default)]
    pub include_auto_accepted: bool,
}

impl DatasetSelection {
    pub fn folders(folders: impl IntoIterator<Item = impl Into<FolderId>>) -> Self {
        Self {
            folder_ids: folders.into_iter().map(Into::into).collect(),
            ..Default::default()
        }
    }

    pub fn validate(&self, store: &AnnotationStore) -> Result<(), DatasetError> {
        if self.folder_ids.is_empty() {
            return Err(DatasetError::EmptySelection);
        }
        for f in &self.folder_ids {
            if !store.has_folder(f) {
                return Err(DomainError::UnknownFolder(f.clone()).into());
            }
        }
        for l in self.label_filter.iter().flatten() {
            if store.label(l).is_none() {
                return Err(DomainError::UnknownLabel(l.clone()).into());
            }
        }
        Ok(())
    }

    /// Whether `ann` may be used for training under this selection.
    pub fn admits(&self, ann: &Annotation, trust_auto_accept: bool) -> bool {
        let status_ok = match ann.status {
            AnnotationStatus::Accepted => true,
            AnnotationStatus::AutoAccepted => self.include_auto_accepted || trust_auto_accept,
            AnnotationStatus::Submitted | AnnotationStatus::Rejected => false,
        };
        status_ok && self.label_filter.as_ref().is_none_or(|f| f.contains(&ann.label_id))
    }
}

/// An image together with its training-eligible annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedImage {
    pub image: ImageRecord,
    pub annotations: Vec<Annotation>,
}

/// Every image in the selection with at least one eligible annotation,
/// keyed by id.
pub fn selected_images(
    store: &AnnotationStore,
    selection: &DatasetSelection,
) -> Result<BTreeMap<ImageId, SelectedImage>, DatasetError> {
    selection.validate(store)?;
    let trust = store.config().trust_auto_accept;
    let mut out = BTreeMap::new();
    for folder in &selection.folder_ids {
        for image in store.folder_images(folder)? {
            let annotations: Vec<Annotation> = store
                .annotations_for_image(&image.image_id)?
                .into_iter()
                .filter(|a| selection.admits(a, trust))
                .collect();
            if !annotations.is_empty() {
                out.insert(image.image_id.clone(), SelectedImage { image, annotations });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub train: Vec<ImageId>,
    pub eval: Vec<ImageId>,
    pub seed: u64,
    pub ratio: f64,
}

impl SplitResult {
    pub fn all(&self) -> impl Iterator<Item = &ImageId> {
        self.train.iter().chain(&self.eval)
    }
}

/// Seeded image-level split of the selection.
pub fn split(
    store: &AnnotationStore,
    selection: &DatasetSelection,
    ratio: f64,
    seed: u64,
) -> Result<SplitResult, DatasetError> {
    let ids: Vec<ImageId> = selected_images(store, selection)?.into_keys().collect();
    split_ids(ids, ratio, seed)
}

/// Sort, shuffle with ChaCha8 seeded from `seed`, and cut at
/// `floor(ratio * n)`.
pub fn split_ids(mut ids: Vec<ImageId>, ratio: f64, seed: u64) -> Result<SplitResult, DatasetError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::InvalidRatio(ratio));
    }
    ids.sort();
    ids.dedup();
    if ids.len() < 2 {
        return Err(DatasetError::InsufficientData(ids.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    // The epsilon keeps products like 0.7 * 10 = 6.9999999999 at 7.
    let n_train = ((ratio * ids.len() as f64) + 1e-9).floor() as usize;
    let eval = ids.split_off(n_train);
    Ok(SplitResult {
        train: ids,
        eval,
        seed,
        ratio,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn ids(n: usize) -> Vec<ImageId> {
        (0..n).map(|i| ImageId::new(format!("img{i:04}"))).collect()
    }

    #[test]
    fn floor_rule() {
        for (n, train) in [(2, 1), (5, 4), (10, 8), (101, 80)] {
            let s = split_ids(ids(n), 0.8, 7).unwrap();
            assert_eq!(s.train.len(), train, "n = {n}");
            assert_eq!(s.eval.len(), n - train);
        }
        assert_eq!(split_ids(ids(10), 0.7, 1).unwrap().train.len(), 7);
    }

    #[test]
    fn split_errors() {
        assert!(matches!(split_ids(ids(1), 0.8, 0), Err(DatasetError::InsufficientData(1))));
        assert!(matches!(split_ids(ids(5), 1.0, 0), Err(DatasetError::InvalidRatio(_))));
        assert!(matches!(split_ids(ids(5), 0.0, 0), Err(DatasetError::InvalidRatio(_))));
    }

    #[test]
    fn input_order_does_not_matter() {
        let mut rev = ids(20);
        rev.reverse();
        assert_eq!(split_ids(ids(20), 0.8, 3).unwrap(), split_ids(rev, 0.8, 3).unwrap());
        assert_ne!(
            split_ids(ids(20), 0.8, 3).unwrap().train,
            split_ids(ids(20), 0.8, 4).unwrap().train
        );
    }

    #[test]
    fn empty_selection() {
        let store = AnnotationStore::in_memory(Default::default());
        assert!(matches!(
            split(&store, &DatasetSelection::default(), 0.8, 0),
            Err(DatasetError::EmptySelection)
        ));
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 2usize..200, ratio in 0.01f64..0.99, seed: u64) {
            let s = split_ids(ids(n), ratio, seed).unwrap();
            prop_assert_eq!(s.train.len(), (ratio * n as f64 + 1e-9).floor() as usize);
            let train: BTreeSet<_> = s.train.iter().collect();
            let eval: BTreeSet<_> = s.eval.iter().collect();
            prop_assert!(train.is_disjoint(&eval));
            prop_assert_eq!(train.len() + eval.len(), n);
        }
    }
}
