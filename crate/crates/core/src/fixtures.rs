//! Seed data: the three-class vehicle hierarchy, the four stock detector
//! registry entries, and helpers to lay out a demo data root on disk.

use std::fs;
use std::io;
use std::path::Path;

use crate::clock::Timestamp;
use crate::domain::{
    AnnotationState, AnnotationStore, Author, DomainError, Hierarchy, HierarchyDoc, ImageRecord, NewAnnotation,
    StoreConfig,
};
use crate::geometry::Polygon;
use crate::ids::{FolderId, ImageId, LabelId, UserId};

/// Vehicles split into airborne, ground and rotorcraft leaves.
pub fn vehicle_hierarchy_doc() -> HierarchyDoc {
    let leaf = |id: &str, name: &str, label: &str| HierarchyDoc {
        id: id.into(),
        name: name.into(),
        label: Some(label.into()),
        children: vec![],
    };
    HierarchyDoc {
        id: "root".into(),
        name: "All objects".into(),
        label: None,
        children: vec![HierarchyDoc {
            id: "vehicles".into(),
            name: "Vehicles".into(),
            label: None,
            children: vec![
                leaf("airborne", "Airborne vehicles", "airborne_vehicles"),
                leaf("ground", "Ground vehicles", "ground_vehicles"),
                leaf("rotorcraft", "Rotorcrafts", "rotorcrafts"),
            ],
        }],
    }
}

pub fn vehicle_hierarchy() -> Hierarchy {
    Hierarchy::from_doc(&vehicle_hierarchy_doc()).expect("seed hierarchy is valid")
}

/// Display names of the stock detectors shipped as registry seed entries.
pub const STOCK_MODELS: [&str; 4] = [
    "ssd_mobilenet_v1_coco",
    "ssd_mobilenet_v2_coco",
    "mask_rcnn_inception_v2_coco",
    "mask_rcnn_resnet50_atrous_coco",
];

/// A valid grayscale PNG of the given size (zlib stored blocks, no
/// compression).
pub fn png_bytes(width: u32, height: u32) -> Vec<u8> {
    let mut raw = Vec::with_capacity((width as usize + 1) * height as usize);
    for y in 0..height {
        raw.push(0); // filter: none
        raw.extend((0..width).map(|x| ((x + y) % 256) as u8));
    }
    let mut zlib = vec![0x78, 0x01];
    let chunks: Vec<&[u8]> = raw.chunks(65535).collect();
    for (i, block) in chunks.iter().enumerate() {
        zlib.push(u8::from(i + 1 == chunks.len()));
        let len = block.len() as u16;
        zlib.extend(len.to_le_bytes());
        zlib.extend((!len).to_le_bytes());
        zlib.extend_from_slice(block);
    }
    if chunks.is_empty() {
        zlib.extend([1, 0, 0, 0xff, 0xff]);
    }
    zlib.extend(adler32(&raw).to_be_bytes());

    let mut ihdr = Vec::new();
    ihdr.extend(width.to_be_bytes());
    ihdr.extend(height.to_be_bytes());
    ihdr.extend([8, 0, 0, 0, 0]);

    let mut out = vec![0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];
    for (kind, data) in [(b"IHDR", ihdr), (b"IDAT", zlib), (b"IEND", Vec::new())] {
        out.extend((data.len() as u32).to_be_bytes());
        let mut crc_input = kind.to_vec();
        crc_input.extend(&data);
        out.extend(kind);
        out.extend(&data);
        out.extend(crc32(&crc_input).to_be_bytes());
    }
    out
}

fn crc32(data: &[u8]) -> u32 {
    let mut crc = 0xffff_ffffu32;
    for &b in data {
        crc ^= b as u32;
        for _ in 0..8 {
            crc = if crc & 1 == 1 { (crc >> 1) ^ 0xedb8_8320 } else { crc >> 1 };
        }
    }
    !crc
}

fn adler32(data: &[u8]) -> u32 {
    let (mut a, mut b) = (1u32, 0u32);
    for &byte in data {
        a = (a + byte as u32) % 65521;
        b = (b + a) % 65521;
    }
    (b << 16) | a
}

/// Lay out `folders` (name, image count) of `width × height` images plus the
/// vehicle hierarchy under `root`. Images are named `<folder>_<nnn>.png`.
pub fn write_data_root(root: &Path, folders: &[(&str, usize)], width: u32, height: u32) -> io::Result<()> {
    fs::create_dir_all(root)?;
    fs::write(
        root.join("hierarchy.json"),
        serde_json::to_vec_pretty(&vehicle_hierarchy_doc()).expect("hierarchy serializes"),
    )?;
    let png = png_bytes(width, height);
    for (folder, count) in folders {
        let dir = root.join("folders").join(folder).join("images");
        fs::create_dir_all(&dir)?;
        for i in 0..*count {
            fs::write(dir.join(format!("{folder}_{i:03}.png")), &png)?;
        }
    }
    Ok(())
}

/// Box per vehicle class as fractions of the image: `(label, x, y, w, h)`.
pub const CLASS_BOXES: [(&str, f64, f64, f64, f64); 3] = [
    ("airborne_vehicles", 0.10, 0.10, 0.30, 0.25),
    ("ground_vehicles", 0.55, 0.10, 0.35, 0.30),
    ("rotorcrafts", 0.20, 0.55, 0.40, 0.35),
];

/// Give every image in `folder` one accepted human box per vehicle class.
pub fn annotate_folder(store: &AnnotationStore, folder: &FolderId, now: Timestamp) -> Result<(), DomainError> {
    for image in store.folder_images(folder)? {
        let (w, h) = (image.width as f64, image.height as f64);
        for (label, x, y, bw, bh) in CLASS_BOXES {
            let ann = store.create_annotation(
                NewAnnotation {
                    image_id: image.image_id.clone(),
                    polygon: Polygon::rect(x * w, y * h, bw * w, bh * h)?,
                    label_id: LabelId::new(label),
                    author: Author::Human(UserId::from("seed-annotator")),
                    confidence: 1.0,
                    source_prediction: None,
                },
                now,
            )?;
            store.qc_accept(&ann.annotation_id, "seed-reviewer", now)?;
        }
    }
    Ok(())
}

/// In-memory store with folder `folder` holding `count` images named
/// `<folder>_<nnn>`, all annotated via [`annotate_folder`].
pub fn annotated_store(folder: &str, count: usize, width: u32, height: u32) -> Result<AnnotationStore, DomainError> {
    let store = AnnotationStore::in_memory(StoreConfig::default());
    store.set_hierarchy(vehicle_hierarchy());
    let folder_id = FolderId::new(folder);
    store.add_folder(folder_id.clone());
    for i in 0..count {
        store.add_image(ImageRecord {
            image_id: ImageId::new(format!("{folder}_{i:03}")),
            folder_id: folder_id.clone(),
            file_path: format!("folders/{folder}/images/{folder}_{i:03}.png"),
            width,
            height,
            annotation_state: AnnotationState::Unannotated,
        })?;
    }
    annotate_folder(&store, &folder_id, Timestamp(0))?;
    Ok(store)
}
