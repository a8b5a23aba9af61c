use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;
use crate::geometry::Polygon;
use crate::ids::{AnnotationId, FolderId, ImageId, LabelId, ModelId, NodeId, PredictionId, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationState {
    Unannotated,
    InProgress,
    Annotated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: ImageId,
    pub folder_id: FolderId,
    /// Relative to the data root, `/`-separated.
    pub file_path: String,
    pub width: u32,
    pub height: u32,
    pub annotation_state: AnnotationState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelClass {
    pub label_id: LabelId,
    pub name: String,
    /// Node ids from the root down to the leaf that carries this label.
    pub hierarchy_path: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyNode {
    pub node_id: NodeId,
    pub name: String,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    /// Set on leaves only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_id: Option<LabelId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceImage {
    pub label_id: LabelId,
    pub file_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum Author {
    Human(UserId),
    Model(ModelId),
}

impl Author {
    pub fn is_model(&self) -> bool {
        matches!(self, Author::Model(_))
    }

    pub fn kind(&self) -> AuthorKind {
        match self {
            Author::Human(_) => AuthorKind::Human,
            Author::Model(_) => AuthorKind::Model,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthorKind {
    Human,
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationStatus {
    Submitted,
    AutoAccepted,
    Accepted,
    Rejected,
}

impl AnnotationStatus {
    /// Whether QC may still accept or reject.
    pub fn is_pending_review(self) -> bool {
        matches!(self, AnnotationStatus::Submitted | AnnotationStatus::AutoAccepted)
    }

    /// Counted by the per-image annotation state.
    pub fn marks_annotated(self) -> bool {
        matches!(self, AnnotationStatus::Submitted | AnnotationStatus::Accepted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub annotation_id: AnnotationId,
    pub image_id: ImageId,
    pub polygon: Polygon,
    pub label_id: LabelId,
    pub author: Author,
    pub confidence: f64,
    pub status: AnnotationStatus,
    pub created_at: Timestamp,
    pub updated_at: Timestamp,
    pub revision: u32,
    /// The model prediction an auto-accepted annotation came from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_prediction: Option<PredictionId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum HistoryAction {
    Created,
    Accepted,
    Rejected {
        reason: String,
    },
    Edited {
        previous_polygon: Polygon,
        previous_label: LabelId,
    },
    Imported,
}

/// One line of an annotation's append-only audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub annotation_id: AnnotationId,
    pub revision: u32,
    pub at: Timestamp,
    pub actor: String,
    #[serde(flatten)]
    pub action: HistoryAction,
}
