//! C ABI over the polygon, confidence-band and lease primitives.
//!
//! Every fallible function returns an [`AfStatus`] and writes results
//! through out-pointers. On failure a message is kept per thread and can be
//! read with [`af_last_error_message`]. Objects are opaque handles released
//! with their `_free` function; strings returned by the library are released
//! with [`af_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::time::Duration;

use annoforge::active::{ConfidenceBand, Thresholds};
use annoforge::clock::Timestamp;
use annoforge::domain::{AnnotationState, ImageRecord};
use annoforge::geometry::{iou, GridSpec, Point, Polygon};
use annoforge::ids::{FolderId, ImageId, LeaseToken, UserId};
use annoforge::lock::{LockError, LockManager, TokenCheck};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DegeneratePolygon = 3,
    OutOfRange = 4,
    NoneAvailable = 5,
    UnknownToken = 6,
    LeaseExpired = 7,
    Io = 8,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AfBand {
    AutoAccept = 0,
    Uncertain = 1,
    Normal = 2,
}

/// Opaque polygon handle.
pub struct AfPolygon(Polygon);

/// Opaque in-memory lease table.
pub struct AfLockManager(LockManager);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: AfStatus, msg: impl Into<String>) -> AfStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> AfStatus) -> AfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(AfStatus::Panic, "internal panic"),
    }
}

unsafe fn cstr<'a>(p: *const c_char, what: &str) -> Result<&'a str, AfStatus> {
    if p.is_null() {
        return Err(fail(AfStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(AfStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn out_string(s: &str, out: *mut *mut c_char) -> AfStatus {
    match CString::new(s) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            AfStatus::Ok
        }
        Err(_) => fail(AfStatus::InvalidArgument, "string contains NUL"),
    }
}

fn lock_status(e: LockError) -> AfStatus {
    let status = match &e {
        LockError::NoneAvailable => AfStatus::NoneAvailable,
        LockError::UnknownToken => AfStatus::UnknownToken,
        LockError::LeaseExpired => AfStatus::LeaseExpired,
        LockError::Journal { .. } => AfStatus::Io,
    };
    fail(status, e.to_string())
}

/// Error message from the most recent call on this thread, or null when
/// that call succeeded. Valid until the next call from the same thread.
#[no_mangle]
pub extern "C" fn af_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn af_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Build a polygon from `n_points` interleaved `x, y` pairs.
///
/// # Safety
/// `xy` must point to `2 * n_points` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn af_polygon_new(xy: *const f64, n_points: usize, out: *mut *mut AfPolygon) -> AfStatus {
    guard(|| {
        if xy.is_null() || out.is_null() {
            return fail(AfStatus::NullPointer, "xy or out is null");
        }
        let coords = std::slice::from_raw_parts(xy, n_points * 2);
        let pts: Vec<Point> = coords.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect();
        match Polygon::new(pts) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(AfPolygon(p)));
                AfStatus::Ok
            }
            Err(e) => fail(AfStatus::DegeneratePolygon, e.to_string()),
        }
    })
}

/// # Safety
/// `p` must come from [`af_polygon_new`] and not have been freed. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn af_polygon_free(p: *mut AfPolygon) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn af_polygon_area(p: *const AfPolygon, out: *mut f64) -> AfStatus {
    guard(|| {
        if p.is_null() || out.is_null() {
            return fail(AfStatus::NullPointer, "polygon or out is null");
        }
        *out = (*p).0.area();
        AfStatus::Ok
    })
}

/// Even-odd containment; boundary points count as inside.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn af_polygon_contains(p: *const AfPolygon, x: f64, y: f64, out: *mut bool) -> AfStatus {
    guard(|| {
        if p.is_null() || out.is_null() {
            return fail(AfStatus::NullPointer, "polygon or out is null");
        }
        *out = (*p).0.contains(Point::new(x, y));
        AfStatus::Ok
    })
}

/// Rasterized IoU on a `width × height` image at `supersample` samples per
/// pixel side.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn af_polygon_iou(
    a: *const AfPolygon,
    b: *const AfPolygon,
    width: u32,
    height: u32,
    supersample: u32,
    out: *mut f64,
) -> AfStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return fail(AfStatus::NullPointer, "polygon or out is null");
        }
        let grid = match GridSpec::new(width, height, supersample) {
            Ok(g) => g,
            Err(e) => return fail(AfStatus::InvalidArgument, e.to_string()),
        };
        match iou(&(*a).0, &(*b).0, grid) {
            Ok(v) => {
                *out = v;
                AfStatus::Ok
            }
            Err(e) => fail(AfStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Polygon as a JSON array of `[x, y]` pairs. Free with [`af_string_free`].
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn af_polygon_to_json(p: *const AfPolygon, out: *mut *mut c_char) -> AfStatus {
    guard(|| {
        if p.is_null() || out.is_null() {
            return fail(AfStatus::NullPointer, "polygon or out is null");
        }
        match serde_json::to_string(&(*p).0) {
            Ok(s) => out_string(&s, out),
            Err(e) => fail(AfStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Band for `confidence` under the default thresholds.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn af_confidence_band(confidence: f64, out: *mut AfBand) -> AfStatus {
    guard(|| {
        if out.is_null() {
            return fail(AfStatus::NullPointer, "out is null");
        }
        match Thresholds::default().band(confidence) {
            Ok(b) => {
                *out = match b {
                    ConfidenceBand::AutoAccept => AfBand::AutoAccept,
                    ConfidenceBand::Uncertain => AfBand::Uncertain,
                    ConfidenceBand::Normal => AfBand::Normal,
                };
                AfStatus::Ok
            }
            Err(e) => fail(AfStatus::OutOfRange, e.to_string()),
        }
    })
}

/// In-memory lease table with the given idle TTL.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn af_lock_manager_new(ttl_ms: u64, out: *mut *mut AfLockManager) -> AfStatus {
    guard(|| {
        if out.is_null() {
            return fail(AfStatus::NullPointer, "out is null");
        }
        if ttl_ms == 0 {
            return fail(AfStatus::InvalidArgument, "ttl_ms must be positive");
        }
        *out = Box::into_raw(Box::new(AfLockManager(LockManager::in_memory(Duration::from_millis(ttl_ms)))));
        AfStatus::Ok
    })
}

/// # Safety
/// `m` must come from [`af_lock_manager_new`]. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn af_lock_manager_free(m: *mut AfLockManager) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Lease the first free image among `image_ids` (in order) for `user`.
/// Writes the lease token and image id; free both with [`af_string_free`].
///
/// # Safety
/// `image_ids` must point to `n_images` valid C strings; other pointers must
/// be valid.
#[no_mangle]
pub unsafe extern "C" fn af_lock_acquire(
    m: *const AfLockManager,
    folder: *const c_char,
    user: *const c_char,
    image_ids: *const *const c_char,
    n_images: usize,
    now_ms: i64,
    out_token: *mut *mut c_char,
    out_image: *mut *mut c_char,
) -> AfStatus {
    guard(|| {
        if m.is_null() || out_token.is_null() || out_image.is_null() || (image_ids.is_null() && n_images > 0) {
            return fail(AfStatus::NullPointer, "null argument");
        }
        let (folder, user) = match (cstr(folder, "folder"), cstr(user, "user")) {
            (Ok(f), Ok(u)) => (FolderId::from(f), UserId::from(u)),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let mut catalog = Vec::with_capacity(n_images);
        for i in 0..n_images {
            let id = match cstr(*image_ids.add(i), "image id") {
                Ok(s) => s,
                Err(s) => return s,
            };
            catalog.push(ImageRecord {
                image_id: ImageId::from(id),
                folder_id: folder.clone(),
                file_path: id.to_owned(),
                width: 1,
                height: 1,
                annotation_state: AnnotationState::Unannotated,
            });
        }
        match (*m).0.acquire_next(&folder, &user, Timestamp(now_ms), &catalog, &[]) {
            Ok((image, lease)) => {
                let s = out_string(lease.lease_token.as_str(), out_token);
                if s != AfStatus::Ok {
                    return s;
                }
                out_string(image.image_id.as_str(), out_image)
            }
            Err(e) => lock_status(e),
        }
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn af_lock_heartbeat(m: *const AfLockManager, token: *const c_char, now_ms: i64) -> AfStatus {
    guard(|| {
        if m.is_null() {
            return fail(AfStatus::NullPointer, "manager is null");
        }
        let token = match cstr(token, "token") {
            Ok(t) => LeaseToken::from(t),
            Err(s) => return s,
        };
        match (*m).0.heartbeat(&token, Timestamp(now_ms)) {
            Ok(_) => AfStatus::Ok,
            Err(e) => lock_status(e),
        }
    })
}

/// `released` is true iff a live lease was removed.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn af_lock_release(
    m: *const AfLockManager,
    token: *const c_char,
    now_ms: i64,
    released: *mut bool,
) -> AfStatus {
    guard(|| {
        if m.is_null() || released.is_null() {
            return fail(AfStatus::NullPointer, "null argument");
        }
        let token = match cstr(token, "token") {
            Ok(t) => LeaseToken::from(t),
            Err(s) => return s,
        };
        match (*m).0.release(&token, Timestamp(now_ms)) {
            Ok(r) => {
                *released = r;
                AfStatus::Ok
            }
            Err(e) => lock_status(e),
        }
    })
}

/// `valid` is true iff `token` is a live lease on `image`.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn af_lock_validate(
    m: *const AfLockManager,
    token: *const c_char,
    image: *const c_char,
    now_ms: i64,
    valid: *mut bool,
) -> AfStatus {
    guard(|| {
        if m.is_null() || valid.is_null() {
            return fail(AfStatus::NullPointer, "null argument");
        }
        let (token, image) = match (cstr(token, "token"), cstr(image, "image")) {
            (Ok(t), Ok(i)) => (LeaseToken::from(t), ImageId::from(i)),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        *valid = (*m).0.validate_token(&token, &image, Timestamp(now_ms)) == TokenCheck::Ok;
        AfStatus::Ok
    })
}
