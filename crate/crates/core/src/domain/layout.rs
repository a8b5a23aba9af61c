//! On-disk layout of a data root.
//!
//! ```text
//! <root>/hierarchy.json
//! <root>/folders/<folder_id>/images/*
//! <root>/folders/<folder_id>/annotations/<image_id>.ann.json
//! <root>/folders/<folder_id>/annotations/<image_id>.history.jsonl
//! <root>/references/<label_id>/*         (optional <file>.txt caption sidecar)
//! <root>/.annoforge/*.jsonl              (lease and job journals)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::hierarchy::Hierarchy;
use super::types::{Annotation, AnnotationState, HistoryEntry, ImageRecord, ReferenceImage};
use super::DomainError;
use crate::ids::{FolderId, ImageId, LabelId};

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "gif", "bmp", "webp", "tif", "tiff"];

#[derive(Debug, Clone)]
pub struct DataLayout {
    root: PathBuf,
}

/// Everything found under a data root at boot.
#[derive(Debug, Default)]
pub struct ScannedRoot {
    /// Images per folder in natural (file name) order.
    pub folders: BTreeMap<FolderId, Vec<ImageRecord>>,
    pub hierarchy: Hierarchy,
    pub references: BTreeMap<LabelId, Vec<ReferenceImage>>,
    pub annotations: Vec<Annotation>,
    pub history: Vec<HistoryEntry>,
}

impl DataLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn hierarchy_path(&self) -> PathBuf {
        self.root.join("hierarchy.json")
    }

    pub fn folders_dir(&self) -> PathBuf {
        self.root.join("folders")
    }

    pub fn images_dir(&self, folder: &FolderId) -> PathBuf {
        self.folders_dir().join(folder.as_str()).join("images")
    }

    pub fn annotations_dir(&self, folder: &FolderId) -> PathBuf {
        self.folders_dir().join(folder.as_str()).join("annotations")
    }

    pub fn annotation_doc(&self, folder: &FolderId, image: &ImageId) -> PathBuf {
        self.annotations_dir(folder).join(format!("{image}.ann.json"))
    }

    pub fn history_log(&self, folder: &FolderId, image: &ImageId) -> PathBuf {
        self.annotations_dir(folder).join(format!("{image}.history.jsonl"))
    }

    pub fn references_dir(&self) -> PathBuf {
        self.root.join("references")
    }

    pub fn state_dir(&self) -> PathBuf {
        self.root.join(".annoforge")
    }

    pub fn lease_journal(&self) -> PathBuf {
        self.state_dir().join("leases.jsonl")
    }

    pub fn job_journal(&self) -> PathBuf {
        self.state_dir().join("jobs.jsonl")
    }

    pub fn prediction_journal(&self) -> PathBuf {
        self.state_dir().join("predictions.jsonl")
    }

    pub fn exports_dir(&self) -> PathBuf {
        self.root.join("exports")
    }

    pub fn scan(&self) -> Result<ScannedRoot, DomainError> {
        if !self.root.is_dir() {
            return Err(DomainError::Corrupt {
                path: self.root.clone(),
                detail: "data root is not a directory".into(),
            });
        }
        let mut out = ScannedRoot::default();
        let hierarchy_path = self.hierarchy_path();
        if hierarchy_path.exists() {
            let text = read_to_string(&hierarchy_path)?;
            out.hierarchy = Hierarchy::from_json(&text).map_err(|e| DomainError::Corrupt {
                path: hierarchy_path.clone(),
                detail: e.to_string(),
            })?;
        }

        let mut seen: BTreeMap<ImageId, PathBuf> = BTreeMap::new();
        for folder_dir in sorted_entries(&self.folders_dir())? {
            if !folder_dir.is_dir() {
                continue;
            }
            let folder = FolderId::new(file_name(&folder_dir));
            let mut images = Vec::new();
            for path in sorted_entries(&self.images_dir(&folder))? {
                if !is_image_file(&path) {
                    continue;
                }
                let dims = imagesize::size(&path).map_err(|e| DomainError::Corrupt {
                    path: path.clone(),
                    detail: format!("cannot read image header: {e}"),
                })?;
                let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let image_id = ImageId::new(stem);
                if let Some(prev) = seen.insert(image_id.clone(), path.clone()) {
                    return Err(DomainError::Corrupt {
                        path,
                        detail: format!("image id `{image_id}` already used by {}", prev.display()),
                    });
                }
                if dims.width == 0 || dims.height == 0 {
                    return Err(DomainError::Corrupt {
                        path,
                        detail: "zero image dimension".into(),
                    });
                }
                images.push(ImageRecord {
                    image_id,
                    folder_id: folder.clone(),
                    file_path: format!("folders/{folder}/images/{}", file_name(&path)),
                    width: dims.width as u32,
                    height: dims.height as u32,
                    annotation_state: AnnotationState::Unannotated,
                });
            }
            for path in sorted_entries(&self.annotations_dir(&folder))? {
                let name = file_name(&path);
                if name.ends_with(".ann.json") {
                    let text = read_to_string(&path)?;
                    let anns: Vec<Annotation> = serde_json::from_str(&text).map_err(|e| DomainError::Corrupt {
                        path: path.clone(),
                        detail: e.to_string(),
                    })?;
                    out.annotations.extend(anns);
                } else if name.ends_with(".history.jsonl") {
                    let text = read_to_string(&path)?;
                    for (n, line) in text.lines().enumerate() {
                        if line.trim().is_empty() {
                            continue;
                        }
                        match serde_json::from_str::<HistoryEntry>(line) {
                            Ok(e) => out.history.push(e),
                            // A torn final line from an interrupted append.
                            Err(_) if n + 1 == text.lines().count() => {}
                            Err(e) => {
                                return Err(DomainError::Corrupt {
                                    path: path.clone(),
                                    detail: format!("line {}: {e}", n + 1),
                                })
                            }
                        }
                    }
                }
            }
            out.folders.insert(folder, images);
        }

        for label_dir in sorted_entries(&self.references_dir())? {
            if !label_dir.is_dir() {
                continue;
            }
            let label = LabelId::new(file_name(&label_dir));
            let mut refs = Vec::new();
            for path in sorted_entries(&label_dir)? {
                if !is_image_file(&path) {
                    continue;
                }
                let caption_path = PathBuf::from(format!("{}.txt", path.display()));
                let caption = caption_path
                    .exists()
                    .then(|| read_to_string(&caption_path).map(|s| s.trim().to_owned()))
                    .transpose()?;
                refs.push(ReferenceImage {
                    label_id: label.clone(),
                    file_path: format!("references/{label}/{}", file_name(&path)),
                    caption,
                });
            }
            out.references.insert(label, refs);
        }
        Ok(out)
    }
}

fn is_image_file(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .map(|e| IMAGE_EXTENSIONS.contains(&e.to_string_lossy().to_ascii_lowercase().as_str()))
            .unwrap_or(false)
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, DomainError> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut entries = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| io_err(dir, err)))
        .collect::<Result<Vec<_>, _>>()?;
    entries.sort();
    Ok(entries)
}

fn read_to_string(path: &Path) -> Result<String, DomainError> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> DomainError {
    DomainError::Io {
        path: path.to_owned(),
        source,
    }
}

/// Write via a sibling temp file and rename, so readers never see a
/// half-written document.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_default()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_data()?;
    }
    fs::rename(&tmp, path)
}

pub fn append_line(path: &Path, line: &str) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(format!("{line}\n").as_bytes())
}
