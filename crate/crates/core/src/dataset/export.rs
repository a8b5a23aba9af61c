//! Export bundles (canonical, COCO, VOC) and canonical import.
//!
//! Bundle layout:
//!
//! ```text
//! <out>/manifest.json
//! <out>/train/annotations.json | instances_train.json | <image>.xml ...
//! <out>/eval/annotations.json  | instances_eval.json  | <image>.xml ...
//! <out>/images/*                (only with `copy_images`)
//! ```
//!
//! Every collection is written in sorted order so identical inputs give
//! byte-identical bundles.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{selected_images, DatasetError, DatasetSelection, SelectedImage, SplitResult};
use crate::clock::Timestamp;
use crate::domain::{Annotation, AnnotationStatus, AnnotationStore, Author, ImageRecord, AnnotationState};
use crate::geometry::Polygon;
use crate::ids::{AnnotationId, FolderId, ImageId, LabelId, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Canonical,
    Coco,
    Voc,
}

impl FromStr for ExportFormat {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "canonical" => Ok(Self::Canonical),
            "coco" => Ok(Self::Coco),
            "voc" => Ok(Self::Voc),
            _ => Err(DatasetError::UnsupportedFormat(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExportOptions {
    /// Copy image files into `<out>/images/` instead of referencing them.
    pub copy_images: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelEntry {
    /// 1-based, the COCO category id.
    pub id: u32,
    pub label_id: LabelId,
    pub name: String,
    pub hierarchy_path: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportCounts {
    pub train_images: usize,
    pub eval_images: usize,
    pub train_annotations: usize,
    pub eval_annotations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportManifest {
    pub format: ExportFormat,
    pub seed: u64,
    pub ratio: f64,
    pub selection: DatasetSelection,
    pub counts: ExportCounts,
    pub labels: Vec<LabelEntry>,
    pub images_copied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanonicalAnnotation {
    pub annotation_id: AnnotationId,
    pub label_id: LabelId,
    pub label: String,
    pub polygon: Polygon,
    pub status: AnnotationStatus,
    pub author: Author,
    pub confidence: f64,
    pub revision: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanonicalImage {
    pub image_id: ImageId,
    pub folder_id: FolderId,
    pub file_path: String,
    pub width: u32,
    pub height: u32,
    pub annotations: Vec<CanonicalAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanonicalSubset {
    pub images: Vec<CanonicalImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanonicalBundle {
    pub manifest: ExportManifest,
    pub train: CanonicalSubset,
    pub eval: CanonicalSubset,
}

#[derive(Serialize)]
struct CocoDoc {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Serialize)]
struct CocoImage {
    id: u64,
    file_name: String,
    width: u32,
    height: u32,
}

#[derive(Serialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u32,
    segmentation: Vec<Vec<f64>>,
    bbox: [f64; 4],
    area: f64,
    iscrowd: u8,
}

#[derive(Serialize)]
struct CocoCategory {
    id: u32,
    name: String,
    supercategory: String,
}

/// The canonical bundle for `split` without touching disk. Image paths stay
/// relative to the data root.
pub fn canonical_bundle(
    store: &AnnotationStore,
    selection: &DatasetSelection,
    split: &SplitResult,
) -> Result<CanonicalBundle, DatasetError> {
    let (selected, manifest) = prepare(store, selection, split, ExportFormat::Canonical, false)?;
    let subset = |ids: &[ImageId]| {
        let mut images: Vec<CanonicalImage> = ids
            .iter()
            .map(|id| canonical_image(&selected[id], &manifest.labels, selected[id].image.file_path.clone()))
            .collect();
        images.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        CanonicalSubset { images }
    };
    let train = subset(&split.train);
    let eval = subset(&split.eval);
    Ok(CanonicalBundle { manifest, train, eval })
}

fn prepare(
    store: &AnnotationStore,
    selection: &DatasetSelection,
    split: &SplitResult,
    format: ExportFormat,
    copy_images: bool,
) -> Result<(BTreeMap<ImageId, SelectedImage>, ExportManifest), DatasetError> {
    let selected = selected_images(store, selection)?;
    check_split(&selected, split)?;

    let label_ids: BTreeSet<LabelId> = selected
        .values()
        .flat_map(|s| s.annotations.iter().map(|a| a.label_id.clone()))
        .collect();
    let mut labels = Vec::new();
    for (i, id) in label_ids.iter().enumerate() {
        let class = store
            .label(id)
            .ok_or_else(|| crate::domain::DomainError::UnknownLabel(id.clone()))?;
        labels.push(LabelEntry {
            id: i as u32 + 1,
            label_id: id.clone(),
            name: class.name,
            hierarchy_path: class.hierarchy_path,
        });
    }

    let subset = |ids: &[ImageId]| -> Vec<&SelectedImage> {
        let mut v: Vec<&SelectedImage> = ids.iter().map(|id| &selected[id]).collect();
        v.sort_by(|a, b| a.image.image_id.cmp(&b.image.image_id));
        v
    };
    let train = subset(&split.train);
    let eval = subset(&split.eval);
    let n_anns = |s: &[&SelectedImage]| s.iter().map(|i| i.annotations.len()).sum();
    let manifest = ExportManifest {
        format,
        seed: split.seed,
        ratio: split.ratio,
        selection: selection.clone(),
        counts: ExportCounts {
            train_images: train.len(),
            eval_images: eval.len(),
            train_annotations: n_anns(&train),
            eval_annotations: n_anns(&eval),
        },
        labels,
        images_copied: copy_images,
    };
    Ok((selected, manifest))
}

/// Write a bundle for `split` in `format` under `out`.
pub fn export(
    store: &AnnotationStore,
    selection: &DatasetSelection,
    split: &SplitResult,
    format: ExportFormat,
    out: &Path,
    options: ExportOptions,
) -> Result<ExportManifest, DatasetError> {
    let (selected, manifest) = prepare(store, selection, split, format, options.copy_images)?;
    let subset = |ids: &[ImageId]| -> Vec<&SelectedImage> {
        let mut v: Vec<&SelectedImage> = ids.iter().map(|id| &selected[id]).collect();
        v.sort_by(|a, b| a.image.image_id.cmp(&b.image.image_id));
        v
    };
    let train = subset(&split.train);
    let eval = subset(&split.eval);

    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let file_path = |img: &ImageRecord| -> String {
        if options.copy_images {
            format!("images/{}", file_name(&img.file_path))
        } else {
            img.file_path.clone()
        }
    };
    for (name, images) in [("train", &train), ("eval", &eval)] {
        let dir = out.join(name);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        match format {
            ExportFormat::Canonical => {
                let doc = CanonicalSubset {
                    images: images
                        .iter()
                        .map(|s| canonical_image(s, &manifest.labels, file_path(&s.image)))
                        .collect(),
                };
                write_json(&dir.join("annotations.json"), &doc)?;
            }
            ExportFormat::Coco => {
                let doc = coco_doc(images, &manifest.labels, &file_path);
                write_json(&dir.join(format!("instances_{name}.json")), &doc)?;
            }
            ExportFormat::Voc => {
                for s in images.iter() {
                    let xml = voc_xml(s, &manifest.labels, &file_path(&s.image));
                    let path = dir.join(format!("{}.xml", s.image.image_id));
                    fs::write(&path, xml).map_err(|e| io_err(&path, e))?;
                }
            }
        }
    }
    if options.copy_images {
        let root = store.layout().map(|l| l.root().to_owned()).ok_or_else(|| {
            DatasetError::InvalidSpec("copy_images needs a disk-backed store".into())
        })?;
        let dir = out.join("images");
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        for s in train.iter().chain(eval.iter()) {
            let src = root.join(&s.image.file_path);
            let dst = dir.join(file_name(&s.image.file_path));
            fs::copy(&src, &dst).map_err(|e| io_err(&src, e))?;
        }
    }
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn check_split(selected: &BTreeMap<ImageId, SelectedImage>, split: &SplitResult) -> Result<(), DatasetError> {
    let mut seen = BTreeSet::new();
    for id in split.all() {
        if !selected.contains_key(id) {
            return Err(DatasetError::InconsistentSplit(format!(
                "image {id} is not in the selection or has no eligible annotations"
            )));
        }
        if !seen.insert(id) {
            return Err(DatasetError::InconsistentSplit(format!("image {id} appears twice")));
        }
    }
    if seen.len() != selected.len() {
        return Err(DatasetError::InconsistentSplit(format!(
            "split covers {} of {} selected images",
            seen.len(),
            selected.len()
        )));
    }
    Ok(())
}

fn label_name<'a>(labels: &'a [LabelEntry], id: &LabelId) -> &'a LabelEntry {
    labels
        .iter()
        .find(|l| &l.label_id == id)
        .expect("label map built from these annotations")
}

fn canonical_image(s: &SelectedImage, labels: &[LabelEntry], file_path: String) -> CanonicalImage {
    CanonicalImage {
        image_id: s.image.image_id.clone(),
        folder_id: s.image.folder_id.clone(),
        file_path,
        width: s.image.width,
        height: s.image.height,
        annotations: s
            .annotations
            .iter()
            .map(|a| CanonicalAnnotation {
                annotation_id: a.annotation_id.clone(),
                label_id: a.label_id.clone(),
                label: label_name(labels, &a.label_id).name.clone(),
                polygon: a.polygon.clone(),
                status: a.status,
                author: a.author.clone(),
                confidence: a.confidence,
                revision: a.revision,
            })
            .collect(),
    }
}

fn coco_doc(images: &[&SelectedImage], labels: &[LabelEntry], file_path: &dyn Fn(&ImageRecord) -> String) -> CocoDoc {
    let mut doc = CocoDoc {
        images: Vec::new(),
        annotations: Vec::new(),
        categories: labels
            .iter()
            .map(|l| CocoCategory {
                id: l.id,
                name: l.name.clone(),
                supercategory: l
                    .hierarchy_path
                    .iter()
                    .rev()
                    .nth(1)
                    .map(|n| n.to_string())
                    .unwrap_or_default(),
            })
            .collect(),
    };
    let mut ann_id = 0;
    for (i, s) in images.iter().enumerate() {
        let image_id = i as u64 + 1;
        doc.images.push(CocoImage {
            id: image_id,
            file_name: file_path(&s.image),
            width: s.image.width,
            height: s.image.height,
        });
        for a in &s.annotations {
            ann_id += 1;
            let b = a.polygon.bounds();
            doc.annotations.push(CocoAnnotation {
                id: ann_id,
                image_id,
                category_id: label_name(labels, &a.label_id).id,
                segmentation: vec![a.polygon.vertices().iter().flat_map(|p| [p.x, p.y]).collect()],
                bbox: [b.min_x, b.min_y, b.width(), b.height()],
                area: a.polygon.area(),
                iscrowd: 0,
            });
        }
    }
    doc
}

fn voc_xml(s: &SelectedImage, labels: &[LabelEntry], file_path: &str) -> String {
    let mut x = String::new();
    let _ = writeln!(x, "<annotation>");
    let _ = writeln!(x, "  <folder>{}</folder>", escape(s.image.folder_id.as_str()));
    let _ = writeln!(x, "  <filename>{}</filename>", escape(&file_name(file_path)));
    let _ = writeln!(x, "  <path>{}</path>", escape(file_path));
    let _ = writeln!(
        x,
        "  <size>\n    <width>{}</width>\n    <height>{}</height>\n    <depth>3</depth>\n  </size>",
        s.image.width, s.image.height
    );
    let _ = writeln!(x, "  <segmented>0</segmented>");
    for a in &s.annotations {
        let b = a.polygon.bounds();
        let _ = writeln!(x, "  <object>");
        let _ = writeln!(x, "    <name>{}</name>", escape(&label_name(labels, &a.label_id).name));
        let _ = writeln!(x, "    <pose>Unspecified</pose>\n    <truncated>0</truncated>\n    <difficult>0</difficult>");
        let _ = writeln!(
            x,
            "    <bndbox>\n      <xmin>{}</xmin>\n      <ymin>{}</ymin>\n      <xmax>{}</xmax>\n      <ymax>{}</ymax>\n    </bndbox>",
            b.min_x, b.min_y, b.max_x, b.max_y
        );
        let _ = writeln!(x, "  </object>");
    }
    x.push_str("</annotation>\n");
    x
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
        .replace('\'', "&apos;")
}

fn file_name(path: &str) -> String {
    path.rsplit('/').next().unwrap_or(path).to_owned()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("export documents serialize");
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.to_owned(),
        source,
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, DatasetError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let de = &mut serde_json::Deserializer::from_slice(&bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        DatasetError::SchemaViolation {
            path: path.to_owned(),
            field,
            line: inner.line(),
            column: inner.column(),
            detail: inner.to_string(),
        }
    })
}

/// Parse and validate a canonical bundle without touching any store.
pub fn read_canonical(dir: &Path) -> Result<CanonicalBundle, DatasetError> {
    let manifest_path = dir.join("manifest.json");
    let manifest: ExportManifest = read_json(&manifest_path)?;
    if manifest.format != ExportFormat::Canonical {
        return Err(DatasetError::SchemaViolation {
            path: manifest_path,
            field: "format".into(),
            line: 0,
            column: 0,
            detail: format!("expected canonical bundle, found {:?}", manifest.format),
        });
    }
    let known: BTreeSet<&LabelId> = manifest.labels.iter().map(|l| &l.label_id).collect();
    let mut subsets = Vec::new();
    for name in ["train", "eval"] {
        let path = dir.join(name).join("annotations.json");
        let subset: CanonicalSubset = read_json(&path)?;
        for (i, img) in subset.images.iter().enumerate() {
            for (j, a) in img.annotations.iter().enumerate() {
                if !known.contains(&a.label_id) {
                    return Err(DatasetError::SchemaViolation {
                        path: path.clone(),
                        field: format!("images[{i}].annotations[{j}].label_id"),
                        line: 0,
                        column: 0,
                        detail: format!("label `{}` is not in the manifest label map", a.label_id),
                    });
                }
            }
        }
        subsets.push(subset);
    }
    let eval = subsets.pop().expect("two subsets");
    let train = subsets.pop().expect("two subsets");
    Ok(CanonicalBundle { manifest, train, eval })
}

/// Load a canonical bundle into `store`. Missing images are registered,
/// annotations enter as `Accepted` with their ids kept.
pub fn import_canonical(dir: &Path, store: &AnnotationStore, now: Timestamp) -> Result<CanonicalBundle, DatasetError> {
    let bundle = read_canonical(dir)?;
    for label in &bundle.manifest.labels {
        if store.label(&label.label_id).is_none() {
            return Err(DatasetError::SchemaViolation {
                path: dir.join("manifest.json"),
                field: "labels".into(),
                line: 0,
                column: 0,
                detail: format!("label `{}` is not in the store hierarchy", label.label_id),
            });
        }
    }
    let mut anns = Vec::new();
    for img in bundle.train.images.iter().chain(&bundle.eval.images) {
        if store.image(&img.image_id).is_none() {
            store.add_image(ImageRecord {
                image_id: img.image_id.clone(),
                folder_id: img.folder_id.clone(),
                file_path: img.file_path.clone(),
                width: img.width,
                height: img.height,
                annotation_state: AnnotationState::Unannotated,
            })?;
        }
        for a in &img.annotations {
            anns.push(Annotation {
                annotation_id: a.annotation_id.clone(),
                image_id: img.image_id.clone(),
                polygon: a.polygon.clone(),
                label_id: a.label_id.clone(),
                author: a.author.clone(),
                confidence: a.confidence,
                status: AnnotationStatus::Accepted,
                created_at: now,
                updated_at: now,
                revision: a.revision,
                source_prediction: None,
            });
        }
    }
    store.insert_imported(anns, now)?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{NewAnnotation, StoreConfig};
    use crate::fixtures::vehicle_hierarchy;
    use crate::ids::UserId;

    fn store_with(n: usize) -> AnnotationStore {
        let s = AnnotationStore::in_memory(StoreConfig::default());
        s.set_hierarchy(vehicle_hierarchy());
        for i in 0..n {
            let id = ImageId::new(format!("img{i:02}"));
            s.add_image(ImageRecord {
                image_id: id.clone(),
                folder_id: FolderId::new("f"),
                file_path: format!("folders/f/images/img{i:02}.png"),
                width: 10,
                height: 10,
                annotation_state: AnnotationState::Unannotated,
            })
            .unwrap();
            let a = s
                .create_annotation(
                    NewAnnotation {
                        image_id: id,
                        polygon: Polygon::rect(0.0, 0.0, 1.0 + i as f64, 1.0).unwrap(),
                        label_id: LabelId::new(if i % 2 == 0 { "ground_vehicles" } else { "rotorcrafts" }),
                        author: Author::Human(UserId::from("alice")),
                        confidence: 1.0,
                        source_prediction: None,
                    },
                    Timestamp(0),
                )
                .unwrap();
            s.qc_accept(&a.annotation_id, "rev", Timestamp(1)).unwrap();
        }
        s
    }

    fn run(store: &AnnotationStore, format: ExportFormat, out: &Path) -> ExportManifest {
        let sel = DatasetSelection::folders(["f"]);
        let split = super::super::split(store, &sel, 0.8, 11).unwrap();
        export(store, &sel, &split, format, out, ExportOptions::default()).unwrap()
    }

    #[test]
    fn coco_unit_square() {
        let dir = tempfile::tempdir().unwrap();
        let s = store_with(2);
        run(&s, ExportFormat::Coco, dir.path());
        let train: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join("train/instances_train.json")).unwrap()).unwrap();
        let eval: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join("eval/instances_eval.json")).unwrap()).unwrap();
        let all: Vec<&serde_json::Value> = train["annotations"]
            .as_array()
            .unwrap()
            .iter()
            .chain(eval["annotations"].as_array().unwrap())
            .collect();
        let unit = all.iter().find(|a| a["area"] == 1.0).expect("unit square exported");
        assert_eq!(unit["segmentation"], serde_json::json!([[0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0]]));
        assert_eq!(unit["bbox"], serde_json::json!([0.0, 0.0, 1.0, 1.0]));
        assert_eq!(unit["iscrowd"], 0);
        let cats = train["categories"].as_array().unwrap();
        assert_eq!(cats.len(), 2);
        assert_eq!(cats[0]["name"], "Ground vehicles");
    }

    #[test]
    fn voc_writes_bounding_boxes() {
        let dir = tempfile::tempdir().unwrap();
        let s = store_with(3);
        let m = run(&s, ExportFormat::Voc, dir.path());
        assert_eq!(m.counts.train_images + m.counts.eval_images, 3);
        let any = fs::read_dir(dir.path().join("train")).unwrap().next().unwrap().unwrap();
        let xml = fs::read_to_string(any.path()).unwrap();
        assert!(xml.contains("<bndbox>") && xml.contains("<xmin>0</xmin>"));
    }

    #[test]
    fn canonical_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = store_with(4);
        run(&s, ExportFormat::Canonical, dir.path());
        let fresh = AnnotationStore::in_memory(StoreConfig::default());
        fresh.set_hierarchy(vehicle_hierarchy());
        import_canonical(dir.path(), &fresh, Timestamp(99)).unwrap();
        let mut a = s.annotations();
        let mut b = fresh.annotations();
        a.sort_by(|x, y| x.annotation_id.cmp(&y.annotation_id));
        b.sort_by(|x, y| x.annotation_id.cmp(&y.annotation_id));
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.annotation_id, y.annotation_id);
            assert_eq!(x.polygon, y.polygon);
            assert_eq!(x.label_id, y.label_id);
            assert_eq!(y.status, AnnotationStatus::Accepted);
        }
    }

    #[test]
    fn truncated_json_is_a_schema_violation() {
        let dir = tempfile::tempdir().unwrap();
        let s = store_with(2);
        run(&s, ExportFormat::Canonical, dir.path());
        let path = dir.path().join("train/annotations.json");
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() / 2]).unwrap();
        let err = read_canonical(dir.path()).unwrap_err();
        assert!(matches!(err, DatasetError::SchemaViolation { line, .. } if line > 0), "{err}");
    }

    #[test]
    fn unknown_label_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let s = store_with(2);
        run(&s, ExportFormat::Canonical, dir.path());
        let path = dir.path().join("eval/annotations.json");
        let text = fs::read_to_string(&path).unwrap();
        let text = text.replacen("\"label_id\": \"ground_vehicles\"", "\"label_id\": \"submarines\"", 1);
        let text = text.replacen("\"label_id\": \"rotorcrafts\"", "\"label_id\": \"submarines\"", 1);
        fs::write(&path, text).unwrap();
        let err = read_canonical(dir.path()).unwrap_err().to_string();
        assert!(err.contains("submarines"), "{err}");
    }

    #[test]
    fn unsupported_format() {
        assert!(matches!("tfrecord".parse::<ExportFormat>(), Err(DatasetError::UnsupportedFormat(_))));
        assert_eq!("COCO".parse::<ExportFormat>().unwrap(), ExportFormat::Coco);
    }

    #[test]
    fn inconsistent_split_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let s = store_with(3);
        let sel = DatasetSelection::folders(["f"]);
        let split = SplitResult {
            train: vec![ImageId::new("img00")],
            eval: vec![ImageId::new("img01")],
            seed: 0,
            ratio: 0.5,
        };
        assert!(matches!(
            export(&s, &sel, &split, ExportFormat::Coco, dir.path(), ExportOptions::default()),
            Err(DatasetError::InconsistentSplit(_))
        ));
    }
}
