//! Lease-based image locks.
//!
//! A lease is live while `now - last_activity <= ttl`. The same predicate
//! backs the lazy checks in [`LockManager::acquire_next`] and
//! [`LockManager::validate_token`] and the sweep in
//! [`LockManager::expire_stale`]. Every mutation is journaled before it is
//! acknowledged, so a restarted server replays the table and never hands
//! out an image that is still leased.

use std::collections::HashMap;
use std::path::PathBuf;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::domain::{AnnotationState, ImageRecord};
use crate::ids::{FolderId, ImageId, LeaseToken, UserId};
use crate::journal::Journal;

pub const DEFAULT_TTL: Duration = Duration::from_secs(30 * 60);

#[derive(Debug, Error)]
pub enum LockError {
    #[error("no image available")]
    NoneAvailable,
    #[error("unknown lease token")]
    UnknownToken,
    #[error("lease expired")]
    LeaseExpired,
    #[error("lease journal {}: {source}", path.display())]
    Journal {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageLease {
    pub lease_token: LeaseToken,
    pub image_id: ImageId,
    pub folder_id: FolderId,
    pub holder: UserId,
    pub acquired_at: Timestamp,
    pub last_activity: Timestamp,
    pub ttl_ms: i64,
}

impl ImageLease {
    pub fn is_expired(&self, now: Timestamp) -> bool {
        now.since(self.last_activity) > self.ttl_ms
    }

    pub fn expires_at(&self) -> Timestamp {
        Timestamp(self.last_activity.0 + self.ttl_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenCheck {
    Ok,
    Stale,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum LeaseEvent {
    Acquired(ImageLease),
    Heartbeat { token: LeaseToken, at: Timestamp },
    Released { token: LeaseToken },
}

#[derive(Debug, Default)]
struct LeaseTable {
    by_token: HashMap<LeaseToken, ImageLease>,
    by_image: HashMap<ImageId, LeaseToken>,
    journal: Option<Journal<LeaseEvent>>,
}

impl LeaseTable {
    fn log(&mut self, event: &LeaseEvent) -> Result<(), LockError> {
        match &mut self.journal {
            Some(j) => j.append(event).map_err(|source| LockError::Journal {
                path: j.path().to_owned(),
                source,
            }),
            None => Ok(()),
        }
    }

    fn insert(&mut self, lease: ImageLease) {
        self.by_image.insert(lease.image_id.clone(), lease.lease_token.clone());
        self.by_token.insert(lease.lease_token.clone(), lease);
    }

    fn remove(&mut self, token: &LeaseToken) -> Option<ImageLease> {
        let lease = self.by_token.remove(token)?;
        if self.by_image.get(&lease.image_id) == Some(token) {
            self.by_image.remove(&lease.image_id);
        }
        Some(lease)
    }

    fn live_lease_on(&self, image: &ImageId, now: Timestamp) -> Option<&ImageLease> {
        let token = self.by_image.get(image)?;
        self.by_token.get(token).filter(|l| !l.is_expired(now))
    }

    fn apply(&mut self, event: LeaseEvent) {
        match event {
            LeaseEvent::Acquired(lease) => {
                if let Some(old) = self.by_image.get(&lease.image_id).cloned() {
                    self.by_token.remove(&old);
                }
                self.insert(lease);
            }
            LeaseEvent::Heartbeat { token, at } => {
                if let Some(l) = self.by_token.get_mut(&token) {
                    l.last_activity = at;
                }
            }
            LeaseEvent::Released { token } => {
                self.remove(&token);
            }
        }
    }
}

/// The lease table. All operations serialize on one mutex.
#[derive(Debug)]
pub struct LockManager {
    ttl: Duration,
    table: Mutex<LeaseTable>,
}

impl LockManager {
    pub fn in_memory(ttl: Duration) -> Self {
        Self {
            ttl,
            table: Mutex::new(LeaseTable::default()),
        }
    }

    /// Replay the journal at `path`, drop leases already expired at `now`
    /// and compact the file to the surviving leases.
    pub fn open(path: impl Into<PathBuf>, ttl: Duration, now: Timestamp) -> Result<Self, LockError> {
        let path = path.into();
        let journal_err = |source| LockError::Journal {
            path: path.clone(),
            source,
        };
        let (mut journal, events) = Journal::<LeaseEvent>::open(&path).map_err(journal_err)?;
        let mut table = LeaseTable::default();
        for e in events {
            table.apply(e);
        }
        let mut live: Vec<ImageLease> = table
            .by_token
            .values()
            .filter(|l| !l.is_expired(now))
            .cloned()
            .collect();
        live.sort_by(|a, b| a.acquired_at.cmp(&b.acquired_at).then_with(|| a.image_id.cmp(&b.image_id)));
        let compacted: Vec<LeaseEvent> = live.iter().cloned().map(LeaseEvent::Acquired).collect();
        journal.rewrite(&compacted).map_err(journal_err)?;
        let mut table = LeaseTable {
            journal: Some(journal),
            ..Default::default()
        };
        for lease in live {
            table.insert(lease);
        }
        Ok(Self {
            ttl,
            table: Mutex::new(table),
        })
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    /// Lease the first free, unannotated image.
    ///
    /// `catalog` is the folder's images in natural order. When
    /// `priority_order` is non-empty it is the candidate sequence (ids not in
    /// the catalog are ignored); otherwise the catalog order is used. A user
    /// who already holds a live lease in the folder gets that lease back.
    pub fn acquire_next(
        &self,
        folder: &FolderId,
        user: &UserId,
        now: Timestamp,
        catalog: &[ImageRecord],
        priority_order: &[ImageId],
    ) -> Result<(ImageRecord, ImageLease), LockError> {
        let mut table = self.table.lock();
        if let Some(mut held) = held_in_folder(&table, folder, user, now) {
            if let Some(rec) = catalog.iter().find(|r| r.image_id == held.image_id) {
                if held.last_activity < now {
                    table.log(&LeaseEvent::Heartbeat {
                        token: held.lease_token.clone(),
                        at: now,
                    })?;
                    held.last_activity = now;
                    table.insert(held.clone());
                }
                return Ok((rec.clone(), held));
            }
        }

        let by_id: HashMap<&ImageId, &ImageRecord> = catalog.iter().map(|r| (&r.image_id, r)).collect();
        let candidates: Box<dyn Iterator<Item = &ImageRecord>> = if priority_order.is_empty() {
            Box::new(catalog.iter())
        } else {
            Box::new(priority_order.iter().filter_map(|id| by_id.get(id).copied()))
        };
        let chosen = candidates
            .filter(|r| r.annotation_state == AnnotationState::Unannotated)
            .find(|r| table.live_lease_on(&r.image_id, now).is_none())
            .cloned()
            .ok_or(LockError::NoneAvailable)?;

        let lease = ImageLease {
            lease_token: LeaseToken::generate(),
            image_id: chosen.image_id.clone(),
            folder_id: folder.clone(),
            holder: user.clone(),
            acquired_at: now,
            last_activity: now,
            ttl_ms: self.ttl.as_millis() as i64,
        };
        if let Some(stale) = table.by_image.get(&chosen.image_id).cloned() {
            table.log(&LeaseEvent::Released { token: stale.clone() })?;
            table.remove(&stale);
        }
        table.log(&LeaseEvent::Acquired(lease.clone()))?;
        table.insert(lease.clone());
        Ok((chosen, lease))
    }

    pub fn heartbeat(&self, token: &LeaseToken, now: Timestamp) -> Result<ImageLease, LockError> {
        let mut table = self.table.lock();
        let lease = table.by_token.get(token).cloned().ok_or(LockError::UnknownToken)?;
        if lease.is_expired(now) {
            return Err(LockError::LeaseExpired);
        }
        let at = now.max(lease.last_activity);
        table.log(&LeaseEvent::Heartbeat {
            token: token.clone(),
            at,
        })?;
        let lease = table.by_token.get_mut(token).expect("checked above");
        lease.last_activity = at;
        Ok(lease.clone())
    }

    /// Remove the lease. True iff it was still live.
    pub fn release(&self, token: &LeaseToken, now: Timestamp) -> Result<bool, LockError> {
        let mut table = self.table.lock();
        let Some(lease) = table.by_token.get(token) else {
            return Ok(false);
        };
        let was_live = !lease.is_expired(now);
        table.log(&LeaseEvent::Released { token: token.clone() })?;
        table.remove(token);
        Ok(was_live)
    }

    /// Remove every expired lease and return how many there were.
    pub fn expire_stale(&self, now: Timestamp) -> Result<usize, LockError> {
        let mut table = self.table.lock();
        let mut stale: Vec<LeaseToken> = table
            .by_token
            .values()
            .filter(|l| l.is_expired(now))
            .map(|l| l.lease_token.clone())
            .collect();
        stale.sort();
        for token in &stale {
            table.log(&LeaseEvent::Released { token: token.clone() })?;
            table.remove(token);
        }
        Ok(stale.len())
    }

    pub fn validate_token(&self, token: &LeaseToken, image: &ImageId, now: Timestamp) -> TokenCheck {
        let table = self.table.lock();
        match table.by_token.get(token) {
            Some(l) if &l.image_id == image && !l.is_expired(now) => TokenCheck::Ok,
            _ => TokenCheck::Stale,
        }
    }

    pub fn lease(&self, token: &LeaseToken) -> Option<ImageLease> {
        self.table.lock().by_token.get(token).cloned()
    }

    pub fn current_lease(&self, user: &UserId, folder: &FolderId, now: Timestamp) -> Option<ImageLease> {
        held_in_folder(&self.table.lock(), folder, user, now)
    }

    /// Live leases sorted by image id.
    pub fn live_leases(&self, now: Timestamp) -> Vec<ImageLease> {
        let table = self.table.lock();
        let mut out: Vec<ImageLease> = table.by_token.values().filter(|l| !l.is_expired(now)).cloned().collect();
        out.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        out
    }
}

fn held_in_folder(table: &LeaseTable, folder: &FolderId, user: &UserId, now: Timestamp) -> Option<ImageLease> {
    table
        .by_token
        .values()
        .filter(|l| &l.folder_id == folder && &l.holder == user && !l.is_expired(now))
        .min_by_key(|l| l.acquired_at)
        .cloned()
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;
    use std::sync::atomic::{AtomicBool, Ordering};
    use std::sync::Arc;

    use super::*;

    const MIN: i64 = 60_000;

    fn catalog(n: usize) -> Vec<ImageRecord> {
        (0..n)
            .map(|i| ImageRecord {
                image_id: ImageId::new(format!("img{i:03}")),
                folder_id: FolderId::new("f"),
                file_path: format!("folders/f/images/img{i:03}.png"),
                width: 10,
                height: 10,
                annotation_state: AnnotationState::Unannotated,
            })
            .collect()
    }

    fn t(min: i64) -> Timestamp {
        Timestamp(min * MIN)
    }

    fn acquire(m: &LockManager, user: &str, now: Timestamp, cat: &[ImageRecord]) -> Result<ImageLease, LockError> {
        m.acquire_next(&FolderId::new("f"), &UserId::new(user), now, cat, &[])
            .map(|(_, l)| l)
    }

    #[test]
    fn two_users_get_distinct_images() {
        let m = LockManager::in_memory(DEFAULT_TTL);
        let cat = catalog(2);
        let a = acquire(&m, "alice", t(0), &cat).unwrap();
        let b = acquire(&m, "bob", t(0), &cat).unwrap();
        assert_ne!(a.image_id, b.image_id);
        assert!(matches!(acquire(&m, "carol", t(0), &cat), Err(LockError::NoneAvailable)));
    }

    #[test]
    fn reacquire_is_idempotent() {
        let m = LockManager::in_memory(DEFAULT_TTL);
        let cat = catalog(3);
        let a = acquire(&m, "alice", t(0), &cat).unwrap();
        let again = acquire(&m, "alice", t(5), &cat).unwrap();
        assert_eq!(a.lease_token, again.lease_token);
        assert_eq!(a.image_id, again.image_id);
        assert_eq!(again.last_activity, t(5));
    }

    #[test]
    fn priority_order_is_respected_and_annotated_skipped() {
        let m = LockManager::in_memory(DEFAULT_TTL);
        let mut cat = catalog(3);
        cat[2].annotation_state = AnnotationState::Annotated;
        let order = [cat[2].image_id.clone(), cat[1].image_id.clone(), cat[0].image_id.clone()];
        let (rec, _) = m
            .acquire_next(&FolderId::new("f"), &UserId::new("u"), t(0), &cat, &order)
            .unwrap();
        assert_eq!(rec.image_id.as_str(), "img001");
    }

    #[test]
    fn heartbeat_slides_the_window() {
        let m = LockManager::in_memory(DEFAULT_TTL);
        let cat = catalog(1);
        let l = acquire(&m, "alice", t(0), &cat).unwrap();
        let l = m.heartbeat(&l.lease_token, t(29)).unwrap();
        assert_eq!(l.expires_at(), t(59));
        assert_eq!(m.validate_token(&l.lease_token, &l.image_id, t(59)), TokenCheck::Ok);
        assert_eq!(
            m.validate_token(&l.lease_token, &l.image_id, Timestamp(t(59).0 + 1)),
            TokenCheck::Stale
        );
    }

    #[test]
    fn heartbeat_after_ttl_fails() {
        let m = LockManager::in_memory(DEFAULT_TTL);
        let l = acquire(&m, "alice", t(0), &catalog(1)).unwrap();
        assert!(matches!(m.heartbeat(&l.lease_token, t(31)), Err(LockError::LeaseExpired)));
        assert!(matches!(
            m.heartbeat(&LeaseToken::new("nope"), t(0)),
            Err(LockError::UnknownToken)
        ));
    }

    #[test]
    fn exactly_ttl_is_still_live() {
        let m = LockManager::in_memory(DEFAULT_TTL);
        let cat = catalog(1);
        acquire(&m, "alice", t(0), &cat).unwrap();
        assert!(matches!(acquire(&m, "bob", t(30), &cat), Err(LockError::NoneAvailable)));
        assert!(acquire(&m, "bob", Timestamp(t(30).0 + 1), &cat).is_ok());
    }

    #[test]
    fn release_semantics() {
        let m = LockManager::in_memory(DEFAULT_TTL);
        let cat = catalog(2);
        let a = acquire(&m, "alice", t(0), &cat).unwrap();
        assert!(m.release(&a.lease_token, t(1)).unwrap());
        assert!(!m.release(&a.lease_token, t(1)).unwrap());
        let b = acquire(&m, "bob", t(0), &cat).unwrap();
        assert!(!m.release(&b.lease_token, t(45)).unwrap());
    }

    #[test]
    fn expire_stale_frees_images() {
        let m = LockManager::in_memory(DEFAULT_TTL);
        let cat = catalog(1);
        assert_eq!(m.expire_stale(t(0)).unwrap(), 0);
        let a = acquire(&m, "alice", t(0), &cat).unwrap();
        assert_eq!(m.expire_stale(t(10)).unwrap(), 0);
        assert_eq!(m.expire_stale(t(31)).unwrap(), 1);
        let b = acquire(&m, "bob", t(31), &cat).unwrap();
        assert_eq!(a.image_id, b.image_id);
        assert_ne!(a.lease_token, b.lease_token);
    }

    #[test]
    fn validate_token_checks_image() {
        let m = LockManager::in_memory(DEFAULT_TTL);
        let cat = catalog(2);
        let a = acquire(&m, "alice", t(0), &cat).unwrap();
        assert_eq!(m.validate_token(&a.lease_token, &a.image_id, t(1)), TokenCheck::Ok);
        assert_eq!(
            m.validate_token(&a.lease_token, &cat[1].image_id, t(1)),
            TokenCheck::Stale
        );
    }

    #[test]
    fn journal_replay_keeps_live_leases_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("leases.jsonl");
        let cat = catalog(3);
        let (a, b) = {
            let m = LockManager::open(&path, DEFAULT_TTL, t(0)).unwrap();
            let a = acquire(&m, "alice", t(0), &cat).unwrap();
            let b = acquire(&m, "bob", t(0), &cat).unwrap();
            m.heartbeat(&b.lease_token, t(20)).unwrap();
            let c = acquire(&m, "carol", t(0), &cat).unwrap();
            m.release(&c.lease_token, t(1)).unwrap();
            (a, b)
        };
        let m = LockManager::open(&path, DEFAULT_TTL, t(40)).unwrap();
        let live = m.live_leases(t(40));
        assert_eq!(live.len(), 1);
        assert_eq!(live[0].lease_token, b.lease_token);
        assert!(m.lease(&a.lease_token).is_none());
        let again = acquire(&m, "dave", t(40), &cat).unwrap();
        assert_ne!(again.image_id, b.image_id);
    }

    #[test]
    fn eight_way_mutual_exclusion() {
        let m = Arc::new(LockManager::in_memory(DEFAULT_TTL));
        let cat = Arc::new(catalog(100));
        let held: Arc<Vec<AtomicBool>> = Arc::new((0..100).map(|_| AtomicBool::new(false)).collect());
        let handles: Vec<_> = (0..8)
            .map(|u| {
                let (m, cat, held) = (m.clone(), cat.clone(), held.clone());
                std::thread::spawn(move || {
                    let user = format!("user{u}");
                    for i in 0..1000 {
                        let lease = acquire(&m, &user, t(0), &cat).unwrap();
                        let idx: usize = lease.image_id.as_str()[3..].parse().unwrap();
                        assert!(!held[idx].swap(true, Ordering::SeqCst), "double lease on {idx}");
                        if i % 3 != 0 {
                            std::thread::yield_now();
                        }
                        held[idx].store(false, Ordering::SeqCst);
                        assert!(m.release(&lease.lease_token, t(0)).unwrap());
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(m.live_leases(t(0)).is_empty());
    }

    #[test]
    fn live_leases_never_share_an_image() {
        let m = LockManager::in_memory(DEFAULT_TTL);
        let cat = catalog(5);
        for (i, user) in ["a", "b", "c", "d", "e"].iter().enumerate() {
            acquire(&m, user, t(i as i64 * 10), &cat).unwrap();
        }
        let live = m.live_leases(t(45));
        let ids: HashSet<_> = live.iter().map(|l| &l.image_id).collect();
        assert_eq!(ids.len(), live.len());
    }
}
