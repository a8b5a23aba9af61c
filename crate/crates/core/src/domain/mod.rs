//! Images, label hierarchy, reference images, annotations and the
//! quality-check state machine.

mod hierarchy;
mod layout;
mod store;
mod types;

use std::path::PathBuf;

use thiserror::Error;

pub use hierarchy::{Hierarchy, HierarchyDoc};
pub use layout::{append_line, write_atomic, DataLayout, ScannedRoot};
pub use store::{AnnotationStore, FolderSummary, NewAnnotation, QcEntry, QcFilter, StoreConfig};
pub use types::*;

use crate::ids::{AnnotationId, FolderId, ImageId, LabelId, NodeId};

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("unknown image `{0}`")]
    UnknownImage(ImageId),
    #[error("unknown label `{0}`")]
    UnknownLabel(LabelId),
    #[error("unknown annotation `{0}`")]
    UnknownAnnotation(AnnotationId),
    #[error("unknown hierarchy node `{0}`")]
    UnknownNode(NodeId),
    #[error("unknown folder `{0}`")]
    UnknownFolder(FolderId),
    #[error("degenerate polygon: {0}")]
    DegeneratePolygon(String),
    #[error("polygon lies entirely outside the image")]
    OutOfBounds,
    #[error("illegal transition {from:?} -> {to:?}")]
    IllegalTransition {
        from: AnnotationStatus,
        to: AnnotationStatus,
    },
    #[error("model confidence {confidence} below auto-accept threshold {threshold}")]
    BelowAutoAcceptThreshold { confidence: f64, threshold: f64 },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("{}: {detail}", path.display())]
    Corrupt { path: PathBuf, detail: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl From<crate::geometry::GeometryError> for DomainError {
    fn from(e: crate::geometry::GeometryError) -> Self {
        DomainError::DegeneratePolygon(e.to_string())
    }
}

#[cfg(test)]
pub(crate) use hierarchy::fixture as hierarchy_fixture;
