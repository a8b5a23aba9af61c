//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so the verdict lines always reach stdout.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::{Hash, Hasher};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitCode, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use annoforge::active::{ConfidenceBand, IngestAction, ModelPrediction, PredictionInput, Scheduler, Thresholds};
use annoforge::clock::{Clock, ManualClock, Timestamp};
use annoforge::config::ServerConfig;
use annoforge::dataset::{
    self, apply_ops, augment, import_canonical, AugmentOp, AugmentationSpec, DatasetSelection, ExportFormat,
    ExportOptions, ResolvedOp,
};
use annoforge::domain::{
    Annotation, AnnotationState, AnnotationStatus, AnnotationStore, Author, ImageRecord, NewAnnotation, StoreConfig,
};
use annoforge::evaluation::{match_predictions, per_class_report};
use annoforge::fixtures::{annotated_store, vehicle_hierarchy, write_data_root};
use annoforge::gateway::{ItemResult, WirePrediction};
use annoforge::geometry::{convex_intersection_area, iou, transform_polygon, AffineTransform, GridSpec, Point, Polygon};
use annoforge::ids::{AnnotationId, FolderId, ImageId, LabelId, ModelId, PredictionId, UserId, WorkerId};
use annoforge::lock::{LockError, LockManager};
use annoforge::platform::Platform;

type Check = Result<String, String>;

const MINUTE: Duration = Duration::from_secs(60);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

// ---------------------------------------------------------------- helpers

fn rect(x: f64, y: f64, w: f64, h: f64) -> Polygon {
    Polygon::rect(x, y, w, h).expect("valid rectangle")
}

fn shoelace(coords: &[f64]) -> f64 {
    let n = coords.len() / 2;
    let mut s = 0.0;
    for i in 0..n {
        let j = (i + 1) % n;
        s += coords[2 * i] * coords[2 * j + 1] - coords[2 * j] * coords[2 * i + 1];
    }
    s.abs() / 2.0
}

fn image(folder: &str, id: &str, w: u32, h: u32) -> ImageRecord {
    ImageRecord {
        image_id: ImageId::new(id),
        folder_id: FolderId::new(folder),
        file_path: format!("folders/{folder}/images/{id}.png"),
        width: w,
        height: h,
        annotation_state: AnnotationState::Unannotated,
    }
}

fn empty_store(folder: &str, n: usize, w: u32, h: u32) -> AnnotationStore {
    let store = AnnotationStore::in_memory(StoreConfig::default());
    store.set_hierarchy(vehicle_hierarchy());
    store.add_folder(FolderId::new(folder));
    for i in 0..n {
        store.add_image(image(folder, &format!("{folder}_{i:03}"), w, h)).unwrap();
    }
    store
}

fn accepted_human(store: &AnnotationStore, image: &str, label: &str, poly: Polygon) -> Annotation {
    let a = store
        .create_annotation(
            NewAnnotation {
                image_id: ImageId::new(image),
                polygon: poly,
                label_id: LabelId::new(label),
                author: Author::Human(UserId::new("annotator")),
                confidence: 1.0,
                source_prediction: None,
            },
            Timestamp(0),
        )
        .unwrap();
    store.qc_accept(&a.annotation_id, "reviewer", Timestamp(0)).unwrap()
}

fn bare_annotation(id: &str, poly: Polygon) -> Annotation {
    Annotation {
        annotation_id: AnnotationId::new(id),
        image_id: ImageId::new("img"),
        polygon: poly,
        label_id: LabelId::new("ground_vehicles"),
        author: Author::Human(UserId::new("annotator")),
        confidence: 1.0,
        status: AnnotationStatus::Accepted,
        created_at: Timestamp(0),
        updated_at: Timestamp(0),
        revision: 1,
        source_prediction: None,
    }
}

fn prediction(id: &str, image: &str, label: &str, poly: Polygon) -> ModelPrediction {
    ModelPrediction {
        prediction_id: PredictionId::new(id),
        image_id: ImageId::new(image),
        model_id: ModelId::new("fixture-model"),
        label_id: LabelId::new(label),
        polygon: poly,
        confidence: 0.9,
        training_instance: 1,
        produced_at: Timestamp(0),
    }
}

/// Points on an axis-aligned ellipse at sorted random angles.
fn random_convex(rng: &mut ChaCha8Rng, cx: f64, cy: f64) -> Polygon {
    loop {
        let rx = rng.random_range(20.0..60.0);
        let ry = rng.random_range(20.0..60.0);
        let k = rng.random_range(3..=10);
        let mut angles: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        angles.sort_by(f64::total_cmp);
        let pts = angles.iter().map(|t| Point::new(cx + rx * t.cos(), cy + ry * t.sin())).collect();
        if let Ok(p) = Polygon::new(pts) {
            if p.is_convex() && p.area() > 50.0 {
                return p;
            }
        }
    }
}

fn hash_of<T: Hash>(v: &T) -> u64 {
    let mut h = DefaultHasher::new();
    v.hash(&mut h);
    h.finish()
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_owned(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

// ---------------------------------------------------------------- 1

const GEOMETRY_TOL: f64 = 0.01;

fn geometry_oracle() -> Check {
    let grid = GridSpec::new(256, 256, 3).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x1001);
    let mut worst: f64 = 0.0;
    let mut overlapping = 0;
    for _ in 0..200 {
        let (cx, cy) = (rng.random_range(70.0..186.0), rng.random_range(70.0..186.0));
        let a = random_convex(&mut rng, cx, cy);
        let dx: f64 = rng.random_range(-50.0..50.0);
        let dy: f64 = rng.random_range(-50.0..50.0);
        let b = random_convex(&mut rng, (cx + dx).clamp(70.0, 186.0), (cy + dy).clamp(70.0, 186.0));
        let inter = convex_intersection_area(&a, &b).map_err(err)?;
        let exact = inter / (a.area() + b.area() - inter);
        let raster = iou(&a, &b, grid).map_err(err)?;
        if exact > 0.0 {
            overlapping += 1;
        }
        worst = worst.max((raster - exact).abs());
    }
    ensure!(worst <= GEOMETRY_TOL, "max |raster - exact| = {worst:.5} over 200 pairs");
    ensure!(overlapping >= 100, "only {overlapping} overlapping pairs generated");

    let sq = rect(0.0, 0.0, 64.0, 64.0);
    let analytic = [
        ("identity", iou(&sq, &sq, grid).map_err(err)?, 1.0),
        ("disjoint", iou(&sq, &rect(100.0, 100.0, 64.0, 64.0), grid).map_err(err)?, 0.0),
        ("half-overlap", iou(&sq, &rect(32.0, 0.0, 64.0, 64.0), grid).map_err(err)?, 1.0 / 3.0),
    ];
    for (name, got, want) in analytic {
        ensure!((got - want).abs() <= GEOMETRY_TOL, "{name}: {got} vs {want}");
    }
    Ok(format!(
        "200 pairs ({overlapping} overlapping), max error {worst:.5} <= {GEOMETRY_TOL}; analytic 1, 0, 1/3 ok"
    ))
}

// ---------------------------------------------------------------- 2

fn lock_exclusion() -> Check {
    const USERS: usize = 8;
    const IMAGES: usize = 100;
    const CYCLES: usize = 1000;
    let folder = FolderId::new("f");
    let catalog: Vec<ImageRecord> = (0..IMAGES).map(|i| image("f", &format!("img{i:03}"), 64, 64)).collect();
    let locks = Arc::new(LockManager::in_memory(30 * MINUTE));
    let clock = Arc::new(ManualClock::new(Timestamp(0)));
    let holders = Arc::new(parking_lot::Mutex::new(HashMap::<ImageId, usize>::new()));
    let violations = Arc::new(AtomicUsize::new(0));
    let cycles = Arc::new(AtomicUsize::new(0));

    std::thread::scope(|s| {
        for u in 0..USERS {
            let (locks, clock, holders, violations, cycles) = (&locks, &clock, &holders, &violations, &cycles);
            let catalog = &catalog;
            let folder = &folder;
            s.spawn(move || {
                let user = UserId::new(format!("user-{u}"));
                let mut rng = ChaCha8Rng::seed_from_u64(u as u64);
                for c in 0..CYCLES / USERS {
                    let now = clock.advance(Duration::from_millis(1));
                    let order: Vec<ImageId> = if c % 2 == 0 {
                        Vec::new()
                    } else {
                        let mut ids: Vec<ImageId> = catalog.iter().map(|r| r.image_id.clone()).collect();
                        ids.shuffle(&mut rng);
                        ids
                    };
                    let (rec, lease) = match locks.acquire_next(folder, &user, now, catalog, &order) {
                        Ok(v) => v,
                        Err(LockError::NoneAvailable) => continue,
                        Err(e) => panic!("{e}"),
                    };
                    if holders.lock().insert(rec.image_id.clone(), u).is_some() {
                        violations.fetch_add(1, Ordering::SeqCst);
                    }
                    let live = locks.live_leases(clock.now());
                    let distinct: BTreeSet<&ImageId> = live.iter().map(|l| &l.image_id).collect();
                    if distinct.len() != live.len() {
                        violations.fetch_add(1, Ordering::SeqCst);
                    }
                    holders.lock().remove(&rec.image_id);
                    locks.release(&lease.lease_token, clock.now()).unwrap();
                    cycles.fetch_add(1, Ordering::SeqCst);
                }
            });
        }
    });
    let v = violations.load(Ordering::SeqCst);
    let n = cycles.load(Ordering::SeqCst);
    ensure!(v == 0, "{v} double-lease observations");
    ensure!(n == CYCLES, "{n} of {CYCLES} cycles completed");

    let eps = Duration::from_millis(1);
    let one = [image("f", "solo", 64, 64)];
    let idle = LockManager::in_memory(30 * MINUTE);
    let t0 = Timestamp(1_000_000);
    idle.acquire_next(&folder, &UserId::new("a"), t0, &one, &[]).map_err(err)?;
    let early = idle.acquire_next(&folder, &UserId::new("b"), t0.plus(30 * MINUTE - eps), &one, &[]);
    ensure!(matches!(early, Err(LockError::NoneAvailable)), "lease taken over at 30 min - 1 ms");
    let late = idle.acquire_next(&folder, &UserId::new("b"), t0.plus(30 * MINUTE + eps), &one, &[]);
    ensure!(late.is_ok(), "lease not re-acquirable at 30 min + 1 ms");
    Ok(format!("{n} cycles by {USERS} users over {IMAGES} images, 0 violations; TTL edge ±1 ms ok"))
}

// ---------------------------------------------------------------- 3

fn banding() -> Check {
    use ConfidenceBand::{AutoAccept as A, Normal as N, Uncertain as U};
    let t = Thresholds::default();
    let cases = [0.0, 0.39, 0.40, 0.50, 0.60, 0.61, 0.79, 0.80, 1.0];
    let want = [N, N, U, U, U, N, N, A, A];
    for (c, w) in cases.iter().zip(want) {
        let got = t.band(*c).map_err(err)?;
        ensure!(got == w, "confidence {c}: {got:?}, want {w:?}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x3003);
    let folder = FolderId::new("q");
    let labels = ["airborne_vehicles", "ground_vehicles", "rotorcrafts"];
    let mut checked_pairs = 0usize;
    for set in 0..100 {
        let store = empty_store("q", 20, 64, 64);
        let sched = Scheduler::in_memory(t).map_err(err)?;
        let mut kind: HashMap<ImageId, ConfidenceBand> = HashMap::new();
        for img in store.folder_images(&folder).map_err(err)? {
            let n = rng.random_range(0..=3);
            let confs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.8)).collect();
            for (k, &c) in confs.iter().enumerate() {
                sched
                    .ingest(
                        &store,
                        PredictionInput {
                            image_id: img.image_id.clone(),
                            model_id: ModelId::new("m"),
                            label_id: LabelId::new(labels[k % 3]),
                            polygon: rect(4.0 + 10.0 * k as f64, 4.0, 8.0, 8.0),
                            confidence: c,
                            training_instance: 1,
                        },
                        Timestamp(0),
                    )
                    .map_err(err)?;
            }
            if confs.iter().any(|&c| t.band(c).unwrap() == U) {
                kind.insert(img.image_id.clone(), U);
            } else if !confs.is_empty() && confs.iter().all(|&c| c >= 0.7) {
                kind.insert(img.image_id.clone(), N);
            }
        }
        let ranked = sched.rank_folder(&store, &folder).map_err(err)?;
        let pos = |b: ConfidenceBand| -> Vec<usize> {
            ranked
                .iter()
                .enumerate()
                .filter(|(_, e)| kind.get(&e.image_id) == Some(&b))
                .map(|(i, _)| i)
                .collect()
        };
        let (u, n) = (pos(U), pos(N));
        for e in &ranked {
            if let Some(b) = kind.get(&e.image_id) {
                ensure!(e.band == Some(*b), "set {set}: {} ranked with band {:?}", e.image_id, e.band);
            }
        }
        if let (Some(last_u), Some(first_n)) = (u.iter().max(), n.iter().min()) {
            ensure!(last_u < first_n, "set {set}: uncertain at {last_u} after normal at {first_n}");
        }
        checked_pairs += u.len() * n.len();
    }
    ensure!(checked_pairs > 0, "no uncertain/normal pairs generated");
    Ok(format!("9 threshold cases exact; 100 sets, {checked_pairs} uncertain-before-normal pairs ordered"))
}

// ---------------------------------------------------------------- 4

fn auto_accept_round_trip() -> Check {
    let store = annotated_store("f", 3, 100, 100).map_err(err)?;
    store.add_image(image("f", "f_003", 100, 100)).map_err(err)?;
    let clock = Arc::new(ManualClock::new(Timestamp(1_000)));
    let platform = Platform::in_memory(store, ServerConfig::default(), clock.clone()).map_err(err)?;
    platform.gateway().seed_stock_models(platform.now()).map_err(err)?;
    let model = platform.gateway().models()[0].model_id.clone();
    let job = platform
        .create_training_job(&model, DatasetSelection::folders(["f"]), None, None)
        .map_err(err)?;
    let claimed = platform
        .gateway()
        .claim_next_job(&WorkerId::new("w"), platform.now())
        .map_err(err)?
        .ok_or("no job to claim")?;
    ensure!(claimed.job_id == job.job_id, "claimed {}", claimed.job_id);

    let target = ImageId::new("f_003");
    let results = platform
        .gateway()
        .post_predictions(
            platform.store(),
            platform.scheduler(),
            &job.job_id,
            vec![WirePrediction {
                image_id: target.clone(),
                label: LabelId::new("ground_vehicles"),
                polygon: Some(rect(20.0, 20.0, 30.0, 25.0)),
                mask_rle: None,
                confidence: 0.92,
            }],
            platform.now(),
        )
        .map_err(err)?;
    let ann_id = match &results[..] {
        [ItemResult::Ingested(o)] => match &o.action {
            IngestAction::AutoAccepted { annotation_id } => annotation_id.clone(),
            other => return Err(format!("ingest action {other:?}")),
        },
        other => return Err(format!("results {other:?}")),
    };
    let ann = platform.store().annotation(&ann_id).ok_or("annotation missing")?;
    ensure!(ann.status == AnnotationStatus::AutoAccepted, "status {:?}", ann.status);

    let mut sel = DatasetSelection::folders(["f"]);
    sel.include_auto_accepted = true;
    let eligible = |store: &AnnotationStore| -> Result<bool, String> {
        Ok(dataset::selected_images(store, &sel)
            .map_err(err)?
            .get(&target)
            .is_some_and(|s| s.annotations.iter().any(|a| a.annotation_id == ann_id)))
    };
    ensure!(eligible(platform.store())?, "auto-accepted annotation not export-eligible");
    clock.advance(MINUTE);
    platform
        .store()
        .qc_reject(&ann_id, "reviewer", "wrong outline", platform.now())
        .map_err(err)?;
    ensure!(!eligible(platform.store())?, "rejected annotation still export-eligible");
    Ok("0.92 -> AutoAccepted -> eligible; after qc_reject -> ineligible".into())
}

// ---------------------------------------------------------------- 5

fn split_determinism() -> Check {
    let mut lines = Vec::new();
    for n in [2usize, 5, 10, 101] {
        let ids: Vec<ImageId> = (0..n).map(|i| ImageId::new(format!("i{i:04}"))).collect();
        let a = dataset::split_ids(ids.clone(), 0.8, 42).map_err(err)?;
        let mut reversed = ids.clone();
        reversed.reverse();
        let b = dataset::split_ids(reversed, 0.8, 42).map_err(err)?;
        let want = (0.8 * n as f64).floor() as usize;
        ensure!(a.train.len() == want, "n={n}: |train| {} want {want}", a.train.len());
        let train: BTreeSet<_> = a.train.iter().collect();
        let eval: BTreeSet<_> = a.eval.iter().collect();
        ensure!(train.is_disjoint(&eval), "n={n}: train and eval overlap");
        let union: BTreeSet<_> = train.union(&eval).copied().collect();
        ensure!(union == ids.iter().collect(), "n={n}: partition does not cover input");
        let (ha, hb) = (hash_of(&(&a.train, &a.eval)), hash_of(&(&b.train, &b.eval)));
        ensure!(ha == hb, "n={n}: same seed gave different splits");
        lines.push(format!("{n}->{want}"));
    }
    Ok(format!("train sizes {} at ratio 0.8; partitions hold; hashes equal", lines.join(", ")))
}

// ---------------------------------------------------------------- 6

const FLIP_TOL: f64 = 1e-9;

fn augmentation_algebra() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6006);
    let (w, h) = (640u32, 480u32);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let cx = rng.random_range(100.0..540.0);
        let cy = rng.random_range(100.0..380.0);
        let p = random_convex(&mut rng, cx, cy);
        let hf = AffineTransform::horizontal_flip(w as f64);
        let vf = AffineTransform::vertical_flip(h as f64);
        for t in [&hf, &vf] {
            let twice = transform_polygon(&transform_polygon(&p, t).map_err(err)?, t).map_err(err)?;
            for (a, b) in p.vertices().iter().zip(twice.vertices()) {
                worst = worst.max((a.x - b.x).abs()).max((a.y - b.y).abs());
            }
        }
        let ann = [bare_annotation("a", p.clone())];
        let (_, _, out) = apply_ops(w, h, &ann, &[ResolvedOp::HorizontalFlip, ResolvedOp::HorizontalFlip], 0.25);
        for (a, b) in p.vertices().iter().zip(out[0].polygon.vertices()) {
            worst = worst.max((a.x - b.x).abs()).max((a.y - b.y).abs());
        }
    }
    ensure!(worst < FLIP_TOL, "flip twice moved a vertex by {worst:e}");

    for (tw, th) in [(320u32, 240u32), (1280, 960), (100, 300), (641, 479)] {
        let p = rect(10.0, 20.0, 200.0, 100.0);
        let (ow, oh, out) = apply_ops(w, h, &[bare_annotation("a", p.clone())], &[ResolvedOp::Resize { width: tw, height: th }], 0.25);
        ensure!((ow, oh) == (tw, th), "resize output {ow}x{oh}");
        let want = p.area() * (tw as f64 / w as f64) * (th as f64 / h as f64);
        let got = out[0].polygon.area();
        ensure!((got - want).abs() <= 1e-9 * want, "resize {tw}x{th}: area {got} want {want}");
    }

    let store = annotated_store("aug", 6, 200, 150).map_err(err)?;
    let spec = AugmentationSpec {
        ops: vec![
            AugmentOp::HorizontalFlip { p: 0.5 },
            AugmentOp::RandomCrop { min_fraction: 0.3 },
            AugmentOp::VerticalFlip { p: 0.5 },
            AugmentOp::RandomCrop { min_fraction: 0.5 },
        ],
        variants_per_image: 40,
        seed: 11,
        min_kept_area_fraction: 0.25,
    };
    let mut vertices = 0usize;
    for img in store.images() {
        for sample in augment(&store, &img.image_id, &spec).map_err(err)? {
            let (ow, oh) = (sample.transform.output_width as f64, sample.transform.output_height as f64);
            for a in &sample.annotations {
                for v in a.polygon.vertices() {
                    ensure!(
                        (0.0..=ow).contains(&v.x) && (0.0..=oh).contains(&v.y),
                        "vertex ({}, {}) outside {ow}x{oh}",
                        v.x,
                        v.y
                    );
                    vertices += 1;
                }
            }
        }
    }

    // A 40×10 box at the origin, cropped from the left.
    let boxed = [bare_annotation("a", rect(0.0, 0.0, 40.0, 10.0))];
    for (x, kept_fraction) in [(0u32, 1.0), (10, 0.75), (29, 0.275), (30, 0.25), (31, 0.225), (35, 0.125), (39, 0.025)] {
        let crop = ResolvedOp::Crop { x, y: 0, width: 100 - x, height: 100 };
        let (_, _, out) = apply_ops(100, 100, &boxed, &[crop], 0.25);
        let should_keep = kept_fraction >= 0.25;
        ensure!(out.len() == usize::from(should_keep), "crop at x={x}: kept {} annotations", out.len());
        if let Some(a) = out.first() {
            ensure!(
                (a.kept_area_fraction - kept_fraction).abs() < 1e-12,
                "crop at x={x}: kept fraction {}",
                a.kept_area_fraction
            );
        }
    }
    Ok(format!(
        "flip twice max error {worst:.1e}; resize area exact; {vertices} cropped vertices in bounds; drop threshold 0.25 ok"
    ))
}

// ---------------------------------------------------------------- 7

const COCO_AREA_TOL: f64 = 1e-6;

fn export_round_trip() -> Check {
    let store = annotated_store("ex", 10, 128, 96).map_err(err)?;
    let sel = DatasetSelection::folders(["ex"]);
    let split = dataset::split(&store, &sel, 0.8, 5).map_err(err)?;
    let tmp = tempfile::tempdir().map_err(err)?;
    let write = |name: &str, format: ExportFormat| -> Result<PathBuf, String> {
        let out = tmp.path().join(name);
        dataset::export(&store, &sel, &split, format, &out, ExportOptions::default()).map_err(err)?;
        Ok(out)
    };
    let canon = write("canon-a", ExportFormat::Canonical)?;
    let canon_b = write("canon-b", ExportFormat::Canonical)?;
    let coco = write("coco-a", ExportFormat::Coco)?;
    let coco_b = write("coco-b", ExportFormat::Coco)?;
    ensure!(files_under(&canon) == files_under(&canon_b), "canonical exports differ");
    ensure!(files_under(&coco) == files_under(&coco_b), "COCO exports differ");

    let fresh = AnnotationStore::in_memory(StoreConfig::default());
    fresh.set_hierarchy(vehicle_hierarchy());
    fresh.add_folder(FolderId::new("ex"));
    import_canonical(&canon, &fresh, Timestamp(99_999)).map_err(err)?;
    let key = |a: &Annotation| {
        (
            a.annotation_id.clone(),
            a.image_id.clone(),
            serde_json::to_string(&a.polygon).unwrap(),
            a.label_id.clone(),
            serde_json::to_string(&a.author).unwrap(),
            a.confidence.to_bits(),
            a.status,
            a.revision,
        )
    };
    let before: BTreeSet<_> = store.annotations().iter().map(key).collect();
    let after: BTreeSet<_> = fresh.annotations().iter().map(key).collect();
    ensure!(before == after, "annotations differ after import: {:?} vs {:?}", before.difference(&after).next(), after.difference(&before).next());
    let images = |s: &AnnotationStore| -> BTreeSet<String> {
        s.images().iter().map(|i| serde_json::to_string(i).unwrap()).collect()
    };
    ensure!(images(&store) == images(&fresh), "image records differ after import");

    let mut worst: f64 = 0.0;
    let mut count = 0;
    for sub in ["train/instances_train.json", "eval/instances_eval.json"] {
        let doc: Value = serde_json::from_slice(&std::fs::read(coco.join(sub)).map_err(err)?).map_err(err)?;
        for a in doc["annotations"].as_array().ok_or("no annotations array")? {
            let seg: Vec<f64> = a["segmentation"][0]
                .as_array()
                .ok_or("no segmentation")?
                .iter()
                .map(|v| v.as_f64().unwrap())
                .collect();
            let area = a["area"].as_f64().ok_or("no area")?;
            worst = worst.max((area - shoelace(&seg)).abs());
            count += 1;
        }
    }
    ensure!(count == store.annotations().len(), "COCO has {count} annotations");
    ensure!(worst <= COCO_AREA_TOL, "COCO area off by {worst:e}");
    Ok(format!(
        "{} annotations round-trip; {count} COCO areas within {COCO_AREA_TOL:e}; repeat exports byte-identical",
        after.len()
    ))
}

// ---------------------------------------------------------------- 8

const TABLE_TOL: f64 = 1e-12;

fn brute_force_total(gt: &[Annotation], preds: &[ModelPrediction], grid: GridSpec) -> f64 {
    fn go(i: usize, gt: &[Annotation], preds: &[ModelPrediction], used: &mut Vec<bool>, grid: GridSpec) -> f64 {
        if i == gt.len() {
            return 0.0;
        }
        let mut best = go(i + 1, gt, preds, used, grid);
        for j in 0..preds.len() {
            if used[j] || preds[j].label_id != gt[i].label_id {
                continue;
            }
            let v = iou(&gt[i].polygon, &preds[j].polygon, grid).unwrap();
            if v > 0.0 {
                used[j] = true;
                best = best.max(v + go(i + 1, gt, preds, used, grid));
                used[j] = false;
            }
        }
        best
    }
    go(0, gt, preds, &mut vec![false; preds.len()], grid)
}

fn evaluation_fixture() -> Check {
    let store = empty_store("t", 0, 0, 0);
    let label = "ground_vehicles";
    let widths = [(20.0, 4.0), (14.0, 5.0), (14.0, 5.0), (19.0, 4.0)];
    let mut preds = Vec::new();
    let mut images = BTreeSet::new();
    for (i, (pw, ph)) in widths.iter().enumerate() {
        let id = format!("t_{i}");
        store.add_image(image("t", &id, 32, 8)).map_err(err)?;
        accepted_human(&store, &id, label, rect(0.0, 0.0, 20.0, 5.0));
        preds.push(prediction(&format!("p{i}"), &id, label, rect(0.0, 0.0, *pw, *ph)));
        images.insert(ImageId::new(id));
    }
    let report = per_class_report(&store, &preds, &ModelId::new("fixture-model"), 1, &images, 0.0).map_err(err)?;
    let row = report.iter().find(|r| r.label_id.as_str() == label).ok_or("no ground vehicle row")?;
    ensure!((row.mean_iou - 0.74).abs() <= TABLE_TOL, "mean IoU {}", row.mean_iou);

    // Up to three objects per side, each prediction a jittered copy of one
    // of three well-separated slots.
    let grid = GridSpec::new(120, 40, 3).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x8008);
    let labels = ["airborne_vehicles", "ground_vehicles"];
    let mut fixtures = 0;
    for ng in 1..=3usize {
        for np in 1..=3usize {
            for _ in 0..20 {
                let gt: Vec<Annotation> = (0..ng)
                    .map(|k| {
                        let mut a = bare_annotation(&format!("a{k}"), rect(5.0 + 40.0 * k as f64, 5.0, 25.0, 25.0));
                        a.label_id = LabelId::new(labels[rng.random_range(0..2)]);
                        a
                    })
                    .collect();
                let ps: Vec<ModelPrediction> = (0..np)
                    .map(|k| {
                        let slot = rng.random_range(0..3) as f64;
                        let p = rect(
                            5.0 + 40.0 * slot + rng.random_range(-6.0..6.0),
                            5.0 + rng.random_range(-4.0..4.0),
                            rng.random_range(15.0..30.0),
                            rng.random_range(15.0..30.0),
                        );
                        prediction(&format!("p{k}"), "img", labels[rng.random_range(0..2)], p)
                    })
                    .collect();
                let greedy: f64 = match_predictions(&gt, &ps, grid, 0.0)
                    .map_err(err)?
                    .pairs
                    .iter()
                    .map(|p| p.iou)
                    .sum();
                let best = brute_force_total(&gt, &ps, grid);
                ensure!((greedy - best).abs() <= TABLE_TOL, "{ng}x{np} fixture: greedy {greedy} optimum {best}");
                fixtures += 1;
            }
        }
    }

    // Overlapping objects can defeat greedy; reported, not asserted.
    let grid = GridSpec::new(32, 16, 3).map_err(err)?;
    let gt = [
        bare_annotation("a1", rect(6.0, 2.0, 14.0, 7.0)),
        bare_annotation("a2", rect(4.0, 0.0, 10.0, 5.0)),
    ];
    let ps = [
        prediction("p1", "img", "ground_vehicles", rect(9.0, 1.0, 14.0, 6.0)),
        prediction("p2", "img", "ground_vehicles", rect(3.0, 2.0, 11.0, 7.0)),
    ];
    let greedy: f64 = match_predictions(&gt, &ps, grid, 0.0).map_err(err)?.pairs.iter().map(|p| p.iou).sum();
    let best = brute_force_total(&gt, &ps, grid);
    Ok(format!(
        "mean IoU of 0.80/0.70/0.70/0.76 = {:.2} (|err| {:.1e}); greedy = optimum on {fixtures} separated fixtures \
         up to 3x3; overlapping 2x2 counterexample (not asserted) greedy {greedy:.4} vs optimum {best:.4}",
        row.mean_iou,
        (row.mean_iou - 0.74).abs()
    ))
}

// ---------------------------------------------------------------- 9

const E2E_TOL: f64 = 1e-9;

fn end_to_end() -> Check {
    let store = annotated_store("e2e", 12, 160, 120).map_err(err)?;
    let clock = Arc::new(ManualClock::new(Timestamp(1_000)));
    let platform = Platform::in_memory(store, ServerConfig::default(), clock.clone()).map_err(err)?;
    platform.gateway().seed_stock_models(platform.now()).map_err(err)?;
    let models: Vec<ModelId> = platform.gateway().models().into_iter().map(|m| m.model_id).collect();
    let worker = WorkerId::new("mock");
    let sel = DatasetSelection::folders(["e2e"]);

    platform.create_training_job(&models[0], sel.clone(), None, Some(3)).map_err(err)?;
    clock.advance(MINUTE);
    platform.run_mock_worker(&worker, 0.0, 1).map_err(err)?.ok_or("no job for noise 0")?;
    let clean = platform.gateway().metrics().model_timeline(&models[0]).map_err(err)?;
    let clean_iou = clean.points.last().ok_or("empty timeline")?.mean_iou;
    ensure!(clean_iou == 1.0, "noise 0 timeline mean IoU {clean_iou}");

    platform.create_training_job(&models[1], sel, None, Some(3)).map_err(err)?;
    clock.advance(MINUTE);
    let run = platform.run_mock_worker(&worker, 10.0, 1).map_err(err)?.ok_or("no job for noise 10")?;
    let report = platform.job_report(&run.job_id).map_err(err)?;
    let mut worst: f64 = 0.0;
    for m in &run.metrics {
        let row = report
            .iter()
            .find(|r| r.label_id == m.label)
            .ok_or_else(|| format!("no recomputed row for {}", m.label))?;
        worst = worst.max((row.mean_iou - m.mean_iou).abs());
        ensure!(
            row.matched + row.missed_ground_truth == m.sample_count as usize,
            "{}: sample count {} vs {}",
            m.label,
            m.sample_count,
            row.matched + row.missed_ground_truth
        );
    }
    ensure!(run.metrics.len() == 3, "{} metric rows", run.metrics.len());
    let noisy = platform.gateway().metrics().model_timeline(&models[1]).map_err(err)?;
    let reported = noisy.points.last().ok_or("empty timeline")?.mean_iou;
    let (num, den) = report.iter().fold((0.0, 0usize), |(n, d), r| {
        let k = r.matched + r.missed_ground_truth;
        (n + r.mean_iou * k as f64, d + k)
    });
    let recomputed = num / den as f64;
    worst = worst.max((reported - recomputed).abs());
    ensure!(worst <= E2E_TOL, "gateway vs recomputation differ by {worst:e}");
    Ok(format!(
        "noise 0 -> {clean_iou}; noise 10 -> {reported:.4} reported, {recomputed:.4} recomputed (|diff| {worst:.1e})"
    ))
}

// ---------------------------------------------------------------- 10

struct Server {
    child: Child,
    base: String,
}

impl Server {
    fn start(root: &Path) -> Result<Self, String> {
        let port = std::net::TcpListener::bind("127.0.0.1:0")
            .and_then(|l| l.local_addr())
            .map_err(err)?
            .port();
        let child = Command::new(env!("CARGO_BIN_EXE_annoforge"))
            .args(["serve", "--listen", &format!("127.0.0.1:{port}"), "--sweep-interval-secs", "3600"])
            .env("ANNOFORGE_DATA_ROOT", root)
            .env("RUST_LOG", "warn")
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .map_err(err)?;
        let mut server = Server {
            child,
            base: format!("http://127.0.0.1:{port}"),
        };
        let deadline = Instant::now() + Duration::from_secs(20);
        while Instant::now() < deadline {
            if let Ok((200, _)) = server.call("GET", "/api/folders", "probe", None) {
                return Ok(server);
            }
            if let Ok(Some(status)) = server.child.try_wait() {
                return Err(format!("server exited early: {status}"));
            }
            std::thread::sleep(Duration::from_millis(50));
        }
        server.kill();
        Err("server did not come up".into())
    }

    fn call(&self, method: &str, path: &str, user: &str, body: Option<Value>) -> Result<(u16, Value), String> {
        let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        let url = format!("{}{path}", self.base);
        let mut resp = match (method, body) {
            ("GET", _) => agent.get(&url).header("x-user-id", user).call(),
            ("POST", Some(b)) => agent.post(&url).header("x-user-id", user).send_json(b),
            ("POST", None) => agent.post(&url).header("x-user-id", user).send_empty(),
            _ => return Err(format!("unsupported method {method}")),
        }
        .map_err(err)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(err)?;
        let value = if text.is_empty() { Value::Null } else { serde_json::from_str(&text).map_err(err)? };
        Ok((status, value))
    }

    fn next_image(&self, user: &str) -> Result<(String, String), String> {
        match self.call("POST", "/api/folders/f/next-image", user, None)? {
            (200, v) => Ok((
                v["image"]["image_id"].as_str().ok_or("no image id")?.to_owned(),
                v["lease_token"].as_str().ok_or("no token")?.to_owned(),
            )),
            (s, v) => Err(format!("next-image for {user}: {s} {v}")),
        }
    }

    /// SIGKILL; nothing gets a chance to flush.
    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.kill();
    }
}

fn restart_safety() -> Check {
    let tmp = tempfile::tempdir().map_err(err)?;
    let root = tmp.path().join("data");
    write_data_root(&root, &[("f", 8)], 64, 48).map_err(err)?;

    let mut first = Server::start(&root)?;
    let (img_a, tok_a) = first.next_image("u1")?;
    let (img_b, tok_b) = first.next_image("u2")?;
    let (img_c, _) = first.next_image("u3")?;
    let submit = json!({
        "lease_token": tok_a,
        "polygon": [[4.0, 4.0], [30.0, 4.0], [30.0, 30.0], [4.0, 30.0]],
        "label_id": "ground_vehicles",
    });
    let (status, ann) = first.call("POST", &format!("/api/images/{img_a}/annotations"), "u1", Some(submit))?;
    ensure!(status == 201, "submit returned {status}: {ann}");
    let ann_id = ann["annotation_id"].as_str().ok_or("no annotation id")?.to_owned();
    let (status, _) = first.call("POST", &format!("/api/qc/{ann_id}/accept"), "reviewer", None)?;
    ensure!(status == 200, "accept returned {status}");
    let (img_d, _) = first.next_image("u1")?;
    first.kill();

    let second = Server::start(&root)?;
    let (status, anns) = second.call("GET", &format!("/api/images/{img_a}/annotations"), "u1", None)?;
    ensure!(status == 200, "annotations returned {status}");
    let kept = anns
        .as_array()
        .ok_or("annotations not a list")?
        .iter()
        .any(|a| a["annotation_id"] == ann_id.as_str() && a["status"] == "accepted");
    ensure!(kept, "accepted annotation lost: {anns}");

    let mut held: BTreeMap<String, String> = BTreeMap::new();
    for user in ["u1", "u2", "u3", "u4", "u5"] {
        let (img, tok) = second.next_image(user)?;
        if user == "u2" {
            ensure!(img == img_b && tok == tok_b, "u2 lost its lease across restart");
        }
        if let Some(other) = held.insert(img.clone(), user.to_owned()) {
            return Err(format!("{img} assigned to {other} and {user}"));
        }
    }
    ensure!(!held.contains_key(&img_a), "annotated image {img_a} handed out again");
    ensure!(held.get(&img_c).map(String::as_str) == Some("u3"), "u3 did not keep {img_c}");
    ensure!(held.get(&img_d).map(String::as_str) == Some("u1"), "u1 did not keep {img_d}");
    Ok(format!(
        "killed with 4 live leases and 1 accepted annotation; after replay 5 users hold 5 distinct images, annotation kept"
    ))
}

// ---------------------------------------------------------------- runner

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Check,
}

const CRITERIA: [Criterion; 10] = [
    Criterion { id: 1, name: "geometry oracle", limit: Some(Duration::from_secs(10)), run: geometry_oracle },
    Criterion { id: 2, name: "lock mutual exclusion", limit: Some(Duration::from_secs(5)), run: lock_exclusion },
    Criterion { id: 3, name: "confidence banding", limit: None, run: banding },
    Criterion { id: 4, name: "auto-accept round trip", limit: None, run: auto_accept_round_trip },
    Criterion { id: 5, name: "split", limit: None, run: split_determinism },
    Criterion { id: 6, name: "augmentation algebra", limit: None, run: augmentation_algebra },
    Criterion { id: 7, name: "export round trip", limit: None, run: export_round_trip },
    Criterion { id: 8, name: "evaluation arithmetic", limit: None, run: evaluation_fixture },
    Criterion { id: 9, name: "end-to-end mock pipeline", limit: Some(Duration::from_secs(30)), run: end_to_end },
    Criterion { id: 10, name: "restart safety", limit: None, run: restart_safety },
];

fn main() -> ExitCode {
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in CRITERIA.iter().filter(|c| filter.is_empty() || filter.contains(&c.id)) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:.2?}, limit {limit:?}")),
            (o, _) => o,
        };
        let (verdict, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        if outcome.is_err() {
            failed += 1;
        }
        println!("criterion {:>2} {verdict} [{:.2}s] {}: {detail}", c.id, elapsed.as_secs_f64(), c.name);
    }
    println!("acceptance: {failed} failed");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
