use std::collections::BTreeMap;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use super::hierarchy::Hierarchy;
use super::layout::{append_line, io_err, write_atomic, DataLayout};
use super::types::*;
use super::DomainError;
use crate::clock::Timestamp;
use crate::geometry::{clip_polygon_to_rect, PixelRect, Polygon};
use crate::ids::{AnnotationId, FolderId, ImageId, LabelId, NodeId, PredictionId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoreConfig {
    /// Minimum confidence for a model-authored annotation.
    pub auto_accept_threshold: f64,
    /// Treat `AutoAccepted` annotations as export-eligible without QC.
    pub trust_auto_accept: bool,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self {
            auto_accept_threshold: 0.80,
            trust_auto_accept: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewAnnotation {
    pub image_id: ImageId,
    pub polygon: Polygon,
    pub label_id: LabelId,
    pub author: Author,
    /// Ignored for human authors, who always get 1.0.
    pub confidence: f64,
    pub source_prediction: Option<PredictionId>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QcFilter {
    #[serde(default)]
    pub folder: Option<FolderId>,
    #[serde(default)]
    pub status: Option<AnnotationStatus>,
    #[serde(default)]
    pub author_kind: Option<AuthorKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcEntry {
    #[serde(flatten)]
    pub annotation: Annotation,
    pub machine_authored: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FolderSummary {
    pub folder_id: FolderId,
    pub image_count: usize,
    pub unannotated_count: usize,
}

#[derive(Debug, Default)]
struct Inner {
    folders: BTreeMap<FolderId, Vec<ImageId>>,
    images: BTreeMap<ImageId, ImageRecord>,
    hierarchy: Hierarchy,
    references: BTreeMap<LabelId, Vec<ReferenceImage>>,
    annotations: BTreeMap<AnnotationId, Annotation>,
    by_image: BTreeMap<ImageId, Vec<AnnotationId>>,
    history: BTreeMap<AnnotationId, Vec<HistoryEntry>>,
    next_seq: u64,
}

impl Inner {
    fn refresh_state(&mut self, image: &ImageId) {
        let annotated = self
            .by_image
            .get(image)
            .into_iter()
            .flatten()
            .any(|id| self.annotations[id].status.marks_annotated());
        if let Some(rec) = self.images.get_mut(image) {
            rec.annotation_state = if annotated {
                AnnotationState::Annotated
            } else {
                AnnotationState::Unannotated
            };
        }
    }

    fn image_annotations(&self, image: &ImageId) -> Vec<Annotation> {
        self.by_image
            .get(image)
            .into_iter()
            .flatten()
            .map(|id| self.annotations[id].clone())
            .collect()
    }

    fn insert_annotation(&mut self, ann: Annotation) {
        let list = self.by_image.entry(ann.image_id.clone()).or_default();
        if !list.contains(&ann.annotation_id) {
            list.push(ann.annotation_id.clone());
            list.sort();
        }
        self.annotations.insert(ann.annotation_id.clone(), ann);
    }

    fn remove_annotation(&mut self, id: &AnnotationId) {
        if let Some(ann) = self.annotations.remove(id) {
            if let Some(list) = self.by_image.get_mut(&ann.image_id) {
                list.retain(|a| a != id);
            }
        }
    }

    fn clip_to_image(&self, image: &ImageRecord, polygon: &Polygon) -> Result<Polygon, DomainError> {
        let rect = PixelRect::new(0.0, 0.0, image.width as f64, image.height as f64)
            .map_err(|e| DomainError::Validation(e.to_string()))?;
        clip_polygon_to_rect(polygon, &rect).ok_or(DomainError::OutOfBounds)
    }
}

/// Images, labels, reference images and annotations.
///
/// Every operation takes the store lock for its whole duration, so
/// operations on one annotation are linearizable: of two racing QC
/// decisions the first wins and the second sees `IllegalTransition`.
/// When backed by a [`DataLayout`] each mutation rewrites the affected
/// image's annotation document before returning.
#[derive(Debug)]
pub struct AnnotationStore {
    layout: Option<DataLayout>,
    config: StoreConfig,
    inner: RwLock<Inner>,
}

impl AnnotationStore {
    pub fn in_memory(config: StoreConfig) -> Self {
        Self {
            layout: None,
            config,
            inner: RwLock::new(Inner::default()),
        }
    }

    /// Load everything under a data root.
    pub fn open(layout: DataLayout, config: StoreConfig) -> Result<Self, DomainError> {
        let scanned = layout.scan()?;
        let mut inner = Inner {
            hierarchy: scanned.hierarchy,
            references: scanned.references,
            ..Default::default()
        };
        for (folder, images) in scanned.folders {
            inner
                .folders
                .insert(folder, images.iter().map(|i| i.image_id.clone()).collect());
            for img in images {
                inner.images.insert(img.image_id.clone(), img);
            }
        }
        for ann in scanned.annotations {
            if !inner.images.contains_key(&ann.image_id) {
                return Err(DomainError::Corrupt {
                    path: layout.root().to_owned(),
                    detail: format!(
                        "annotation {} references missing image {}",
                        ann.annotation_id, ann.image_id
                    ),
                });
            }
            inner.next_seq = inner.next_seq.max(seq_of(&ann.annotation_id));
            inner.insert_annotation(ann);
        }
        for entry in scanned.history {
            inner.history.entry(entry.annotation_id.clone()).or_default().push(entry);
        }
        let ids: Vec<ImageId> = inner.images.keys().cloned().collect();
        for id in ids {
            inner.refresh_state(&id);
        }
        Ok(Self {
            layout: Some(layout),
            config,
            inner: RwLock::new(inner),
        })
    }

    pub fn config(&self) -> StoreConfig {
        self.config
    }

    pub fn layout(&self) -> Option<&DataLayout> {
        self.layout.as_ref()
    }

    // ---- fixture setup -------------------------------------------------

    pub fn set_hierarchy(&self, hierarchy: Hierarchy) {
        self.inner.write().hierarchy = hierarchy;
    }

    pub fn add_folder(&self, folder: FolderId) {
        self.inner.write().folders.entry(folder).or_default();
    }

    pub fn add_image(&self, mut record: ImageRecord) -> Result<(), DomainError> {
        if record.width == 0 || record.height == 0 {
            return Err(DomainError::Validation(format!(
                "image {} has a zero dimension",
                record.image_id
            )));
        }
        let mut inner = self.inner.write();
        if inner.images.contains_key(&record.image_id) {
            return Err(DomainError::Validation(format!("duplicate image id {}", record.image_id)));
        }
        record.annotation_state = AnnotationState::Unannotated;
        inner
            .folders
            .entry(record.folder_id.clone())
            .or_default()
            .push(record.image_id.clone());
        inner.images.insert(record.image_id.clone(), record);
        Ok(())
    }

    pub fn add_reference(&self, reference: ReferenceImage) -> Result<(), DomainError> {
        let mut inner = self.inner.write();
        if inner.hierarchy.label(&reference.label_id).is_none() {
            return Err(DomainError::UnknownLabel(reference.label_id));
        }
        inner.references.entry(reference.label_id.clone()).or_default().push(reference);
        Ok(())
    }

    // ---- queries -------------------------------------------------------

    pub fn folders(&self) -> Vec<FolderSummary> {
        let inner = self.inner.read();
        inner
            .folders
            .iter()
            .map(|(id, images)| FolderSummary {
                folder_id: id.clone(),
                image_count: images.len(),
                unannotated_count: images
                    .iter()
                    .filter(|i| inner.images[*i].annotation_state == AnnotationState::Unannotated)
                    .count(),
            })
            .collect()
    }

    pub fn has_folder(&self, folder: &FolderId) -> bool {
        self.inner.read().folders.contains_key(folder)
    }

    /// Images of a folder in natural file order.
    pub fn folder_images(&self, folder: &FolderId) -> Result<Vec<ImageRecord>, DomainError> {
        let inner = self.inner.read();
        let ids = inner
            .folders
            .get(folder)
            .ok_or_else(|| DomainError::UnknownFolder(folder.clone()))?;
        Ok(ids.iter().map(|id| inner.images[id].clone()).collect())
    }

    pub fn image(&self, id: &ImageId) -> Option<ImageRecord> {
        self.inner.read().images.get(id).cloned()
    }

    pub fn images(&self) -> Vec<ImageRecord> {
        self.inner.read().images.values().cloned().collect()
    }

    pub fn annotation(&self, id: &AnnotationId) -> Option<Annotation> {
        self.inner.read().annotations.get(id).cloned()
    }

    pub fn annotations_for_image(&self, image: &ImageId) -> Result<Vec<Annotation>, DomainError> {
        let inner = self.inner.read();
        if !inner.images.contains_key(image) {
            return Err(DomainError::UnknownImage(image.clone()));
        }
        Ok(inner.image_annotations(image))
    }

    pub fn annotations(&self) -> Vec<Annotation> {
        self.inner.read().annotations.values().cloned().collect()
    }

    pub fn history(&self, id: &AnnotationId) -> Vec<HistoryEntry> {
        self.inner.read().history.get(id).cloned().unwrap_or_default()
    }

    pub fn hierarchy(&self) -> Hierarchy {
        self.inner.read().hierarchy.clone()
    }

    pub fn label(&self, id: &LabelId) -> Option<LabelClass> {
        self.inner.read().hierarchy.label(id).cloned()
    }

    pub fn hierarchy_children(&self, node: Option<&NodeId>) -> Result<Vec<HierarchyNode>, DomainError> {
        self.inner.read().hierarchy.children(node)
    }

    pub fn reference_images_for(&self, label: &LabelId) -> Result<Vec<ReferenceImage>, DomainError> {
        let inner = self.inner.read();
        if inner.hierarchy.label(label).is_none() {
            return Err(DomainError::UnknownLabel(label.clone()));
        }
        Ok(inner.references.get(label).cloned().unwrap_or_default())
    }

    /// Submitted and auto-accepted annotations awaiting review, oldest first.
    pub fn qc_list(&self, filter: &QcFilter) -> Vec<QcEntry> {
        let inner = self.inner.read();
        let mut out: Vec<QcEntry> = inner
            .annotations
            .values()
            .filter(|a| a.status.is_pending_review())
            .filter(|a| filter.status.is_none_or(|s| s == a.status))
            .filter(|a| filter.author_kind.is_none_or(|k| k == a.author.kind()))
            .filter(|a| {
                filter
                    .folder
                    .as_ref()
                    .is_none_or(|f| inner.images.get(&a.image_id).is_some_and(|i| &i.folder_id == f))
            })
            .map(|a| QcEntry {
                machine_authored: a.author.is_model(),
                annotation: a.clone(),
            })
            .collect();
        out.sort_by(|a, b| {
            a.annotation
                .created_at
                .cmp(&b.annotation.created_at)
                .then_with(|| a.annotation.annotation_id.cmp(&b.annotation.annotation_id))
        });
        out
    }

    // ---- mutations -----------------------------------------------------

    /// Clip to the image, validate and persist a new annotation. Humans
    /// enter as `Submitted`; models as `AutoAccepted`, which requires the
    /// auto-accept confidence.
    pub fn create_annotation(&self, new: NewAnnotation, now: Timestamp) -> Result<Annotation, DomainError> {
        let mut inner = self.inner.write();
        let image = inner
            .images
            .get(&new.image_id)
            .cloned()
            .ok_or_else(|| DomainError::UnknownImage(new.image_id.clone()))?;
        if inner.hierarchy.label(&new.label_id).is_none() {
            return Err(DomainError::UnknownLabel(new.label_id));
        }
        let (status, confidence) = match &new.author {
            Author::Human(_) => (AnnotationStatus::Submitted, 1.0),
            Author::Model(_) => {
                if !(0.0..=1.0).contains(&new.confidence) {
                    return Err(DomainError::Validation(format!(
                        "confidence {} outside [0, 1]",
                        new.confidence
                    )));
                }
                if new.confidence < self.config.auto_accept_threshold {
                    return Err(DomainError::BelowAutoAcceptThreshold {
                        confidence: new.confidence,
                        threshold: self.config.auto_accept_threshold,
                    });
                }
                (AnnotationStatus::AutoAccepted, new.confidence)
            }
        };
        let polygon = inner.clip_to_image(&image, &new.polygon)?;
        inner.next_seq += 1;
        let ann = Annotation {
            annotation_id: AnnotationId::new(format!("a{:08}", inner.next_seq)),
            image_id: new.image_id,
            polygon,
            label_id: new.label_id,
            author: new.author.clone(),
            confidence,
            status,
            created_at: now,
            updated_at: now,
            revision: 1,
            source_prediction: new.source_prediction,
        };
        let entry = HistoryEntry {
            annotation_id: ann.annotation_id.clone(),
            revision: 1,
            at: now,
            actor: actor_name(&ann.author),
            action: HistoryAction::Created,
        };
        inner.insert_annotation(ann.clone());
        if let Err(e) = self.persist(&mut inner, &image, Some(entry)) {
            inner.remove_annotation(&ann.annotation_id);
            inner.refresh_state(&image.image_id);
            return Err(e);
        }
        Ok(ann)
    }

    pub fn qc_accept(&self, id: &AnnotationId, reviewer: &str, now: Timestamp) -> Result<Annotation, DomainError> {
        self.review(id, reviewer, now, AnnotationStatus::Accepted, HistoryAction::Accepted)
    }

    pub fn qc_reject(
        &self,
        id: &AnnotationId,
        reviewer: &str,
        reason: &str,
        now: Timestamp,
    ) -> Result<Annotation, DomainError> {
        self.review(
            id,
            reviewer,
            now,
            AnnotationStatus::Rejected,
            HistoryAction::Rejected {
                reason: reason.to_owned(),
            },
        )
    }

    fn review(
        &self,
        id: &AnnotationId,
        reviewer: &str,
        now: Timestamp,
        to: AnnotationStatus,
        action: HistoryAction,
    ) -> Result<Annotation, DomainError> {
        let mut inner = self.inner.write();
        let before = inner
            .annotations
            .get(id)
            .cloned()
            .ok_or_else(|| DomainError::UnknownAnnotation(id.clone()))?;
        if !before.status.is_pending_review() {
            return Err(DomainError::IllegalTransition {
                from: before.status,
                to,
            });
        }
        let mut after = before.clone();
        after.status = to;
        after.updated_at = now;
        self.commit(&mut inner, before, after, reviewer, action)
    }

    /// Replace polygon and/or label. Bumps the revision and sends the
    /// annotation back to `Submitted`; id and author never change.
    pub fn qc_edit(
        &self,
        id: &AnnotationId,
        new_polygon: Option<Polygon>,
        new_label: Option<LabelId>,
        reviewer: &str,
        now: Timestamp,
    ) -> Result<Annotation, DomainError> {
        if new_polygon.is_none() && new_label.is_none() {
            return Err(DomainError::Validation("edit needs a polygon or a label".into()));
        }
        let mut inner = self.inner.write();
        let before = inner
            .annotations
            .get(id)
            .cloned()
            .ok_or_else(|| DomainError::UnknownAnnotation(id.clone()))?;
        if before.status == AnnotationStatus::Rejected {
            return Err(DomainError::IllegalTransition {
                from: AnnotationStatus::Rejected,
                to: AnnotationStatus::Submitted,
            });
        }
        if let Some(label) = &new_label {
            if inner.hierarchy.label(label).is_none() {
                return Err(DomainError::UnknownLabel(label.clone()));
            }
        }
        let mut after = before.clone();
        if let Some(poly) = new_polygon {
            let image = inner.images[&before.image_id].clone();
            after.polygon = inner.clip_to_image(&image, &poly)?;
        }
        if let Some(label) = new_label {
            after.label_id = label;
        }
        after.revision += 1;
        after.status = AnnotationStatus::Submitted;
        after.updated_at = now;
        let action = HistoryAction::Edited {
            previous_polygon: before.polygon.clone(),
            previous_label: before.label_id.clone(),
        };
        self.commit(&mut inner, before, after, reviewer, action)
    }

    fn commit(
        &self,
        inner: &mut Inner,
        before: Annotation,
        after: Annotation,
        actor: &str,
        action: HistoryAction,
    ) -> Result<Annotation, DomainError> {
        let image = inner.images[&after.image_id].clone();
        let entry = HistoryEntry {
            annotation_id: after.annotation_id.clone(),
            revision: after.revision,
            at: after.updated_at,
            actor: actor.to_owned(),
            action,
        };
        inner.insert_annotation(after.clone());
        if let Err(e) = self.persist(inner, &image, Some(entry)) {
            inner.insert_annotation(before);
            inner.refresh_state(&image.image_id);
            return Err(e);
        }
        Ok(after)
    }

    /// Insert annotations loaded from an export bundle, preserving ids.
    pub fn insert_imported(&self, anns: Vec<Annotation>, now: Timestamp) -> Result<(), DomainError> {
        let mut inner = self.inner.write();
        for ann in &anns {
            if !inner.images.contains_key(&ann.image_id) {
                return Err(DomainError::UnknownImage(ann.image_id.clone()));
            }
            if inner.hierarchy.label(&ann.label_id).is_none() {
                return Err(DomainError::UnknownLabel(ann.label_id.clone()));
            }
        }
        let mut touched = std::collections::BTreeSet::new();
        for ann in anns {
            inner.next_seq = inner.next_seq.max(seq_of(&ann.annotation_id));
            let entry = HistoryEntry {
                annotation_id: ann.annotation_id.clone(),
                revision: ann.revision,
                at: now,
                actor: "import".into(),
                action: HistoryAction::Imported,
            };
            inner.history.entry(ann.annotation_id.clone()).or_default().push(entry.clone());
            if let Some(layout) = &self.layout {
                let folder = &inner.images[&ann.image_id].folder_id;
                let line = serde_json::to_string(&entry).expect("history serializes");
                append_line(&layout.history_log(folder, &ann.image_id), &line)
                    .map_err(|e| io_err(&layout.history_log(folder, &ann.image_id), e))?;
            }
            touched.insert(ann.image_id.clone());
            inner.insert_annotation(ann);
        }
        for image in touched {
            let rec = inner.images[&image].clone();
            self.persist(&mut inner, &rec, None)?;
        }
        Ok(())
    }

    /// Recompute the image state and write its annotation document (and
    /// history line) when disk-backed.
    fn persist(&self, inner: &mut Inner, image: &ImageRecord, entry: Option<HistoryEntry>) -> Result<(), DomainError> {
        inner.refresh_state(&image.image_id);
        if let Some(layout) = &self.layout {
            let doc_path = layout.annotation_doc(&image.folder_id, &image.image_id);
            let anns = inner.image_annotations(&image.image_id);
            let bytes = serde_json::to_vec_pretty(&anns).expect("annotations serialize");
            write_atomic(&doc_path, &bytes).map_err(|e| io_err(&doc_path, e))?;
            if let Some(entry) = &entry {
                let log = layout.history_log(&image.folder_id, &image.image_id);
                let line = serde_json::to_string(entry).expect("history serializes");
                append_line(&log, &line).map_err(|e| io_err(&log, e))?;
            }
        }
        if let Some(entry) = entry {
            inner.history.entry(entry.annotation_id.clone()).or_default().push(entry);
        }
        Ok(())
    }
}

fn actor_name(author: &Author) -> String {
    match author {
        Author::Human(u) => u.0.clone(),
        Author::Model(m) => format!("model:{m}"),
    }
}

fn seq_of(id: &AnnotationId) -> u64 {
    id.as_str().trim_start_matches('a').parse().unwrap_or(0)
}
