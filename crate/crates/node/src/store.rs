use std::collections::{HashMap, HashSet, VecDeque};
use std::time::{Duration, Instant};

use uuid::Uuid;

/// Lifetime of a stored key unless configured otherwise.
pub const DEFAULT_TTL: Duration = Duration::from_secs(600);

/// How many expired identifiers are remembered to tell "expired" apart
/// from "never existed".
const TOMBSTONES: usize = 10_000;

#[derive(Clone, PartialEq, Eq)]
pub struct StoredKey {
    pub key_id: Uuid,
    pub material: Vec<u8>,
    /// Node on the other end of the link that produced this key.
    pub peer: String,
    pub stored_at: Instant,
    pub ttl: Duration,
}

impl StoredKey {
    pub fn expired_at(&self, now: Instant) -> bool {
        now > self.stored_at + self.ttl
    }
}

impl std::fmt::Debug for StoredKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StoredKey")
            .field("key_id", &self.key_id)
            .field("bytes", &self.material.len())
            .field("peer", &self.peer)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LookupError {
    #[error("key {0} not found")]
    NotFound(Uuid),
    #[error("key {0} has expired")]
    Expired(Uuid),
    #[error("key {key_id} was not shared with {requester}")]
    WrongPeer { key_id: Uuid, requester: String },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InsertError {
    #[error("key {0} already stored")]
    Duplicate(Uuid),
    #[error("key store full ({0} keys)")]
    Full(usize),
}

/// Keys addressed by identifier, each living for a fixed TTL.
#[derive(Debug)]
pub struct KeyStore {
    keys: HashMap<Uuid, StoredKey>,
    capacity: usize,
    expired: HashSet<Uuid>,
    expired_order: VecDeque<Uuid>,
}

impl KeyStore {
    pub fn new(capacity: usize) -> Self {
        Self {
            keys: HashMap::new(),
            capacity,
            expired: HashSet::new(),
            expired_order: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn insert(&mut self, key: StoredKey) -> Result<(), InsertError> {
        if self.keys.contains_key(&key.key_id) || self.expired.contains(&key.key_id) {
            return Err(InsertError::Duplicate(key.key_id));
        }
        if self.keys.len() >= self.capacity {
            self.purge(Instant::now());
            if self.keys.len() >= self.capacity {
                return Err(InsertError::Full(self.capacity));
            }
        }
        self.keys.insert(key.key_id, key);
        Ok(())
    }

    /// Looks up a key on behalf of `requester`, which must be the node the
    /// key was shared with.
    pub fn get(&mut self, key_id: Uuid, requester: &str, now: Instant) -> Result<StoredKey, LookupError> {
        match self.keys.get(&key_id) {
            Some(key) if key.expired_at(now) => {
                self.bury(key_id);
                Err(LookupError::Expired(key_id))
            }
            Some(key) if key.peer != requester => Err(LookupError::WrongPeer {
                key_id,
                requester: requester.to_owned(),
            }),
            Some(key) => Ok(key.clone()),
            None if self.expired.contains(&key_id) => Err(LookupError::Expired(key_id)),
            None => Err(LookupError::NotFound(key_id)),
        }
    }

    /// Live keys shared with `peer`, or all live keys for `None`.
    pub fn count(&self, peer: Option<&str>, now: Instant) -> usize {
        self.keys
            .values()
            .filter(|k| !k.expired_at(now) && peer.is_none_or(|p| k.peer == p))
            .count()
    }

    /// Drops every expired key; returns how many were removed.
    pub fn purge(&mut self, now: Instant) -> usize {
        let expired: Vec<Uuid> = self
            .keys
            .values()
            .filter(|k| k.expired_at(now))
            .map(|k| k.key_id)
            .collect();
        for id in &expired {
            self.bury(*id);
        }
        expired.len()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    fn bury(&mut self, key_id: Uuid) {
        if let Some(mut key) = self.keys.remove(&key_id) {
            key.material.fill(0);
        }
        if self.expired.insert(key_id) {
            self.expired_order.push_back(key_id);
            if self.expired_order.len() > TOMBSTONES {
                if let Some(old) = self.expired_order.pop_front() {
                    self.expired.remove(&old);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(peer: &str, stored_at: Instant, ttl_s: u64) -> StoredKey {
        StoredKey {
            key_id: Uuid::new_v4(),
            material: vec![0xAB; 32],
            peer: peer.into(),
            stored_at,
            ttl: Duration::from_secs(ttl_s),
        }
    }

    #[test]
    fn purge_keeps_live_keys() {
        let t0 = Instant::now();
        let mut store = KeyStore::new(100);
        for _ in 0..3 {
            store.insert(key("B", t0, 1)).unwrap();
        }
        for _ in 0..2 {
            store.insert(key("B", t0, 600)).unwrap();
        }
        let later = t0 + Duration::from_secs(5);
        assert_eq!(store.count(Some("B"), later), 2);
        assert_eq!(store.purge(later), 3);
        assert_eq!(store.len(), 2);
    }

    #[test]
    fn expired_and_missing_are_distinguished() {
        let t0 = Instant::now();
        let mut store = KeyStore::new(10);
        let k = key("B", t0, 1);
        let id = k.key_id;
        store.insert(k).unwrap();
        assert!(store.get(id, "B", t0).is_ok());
        let later = t0 + Duration::from_secs(2);
        assert_eq!(store.get(id, "B", later), Err(LookupError::Expired(id)));
        assert_eq!(store.get(id, "B", later), Err(LookupError::Expired(id)));
        let other = Uuid::new_v4();
        assert_eq!(store.get(other, "B", later), Err(LookupError::NotFound(other)));
        assert!(store.is_empty());
    }

    #[test]
    fn only_the_peer_may_read() {
        let t0 = Instant::now();
        let mut store = KeyStore::new(10);
        let k = key("B", t0, 60);
        let id = k.key_id;
        store.insert(k).unwrap();
        assert!(matches!(store.get(id, "C", t0), Err(LookupError::WrongPeer { .. })));
    }

    #[test]
    fn duplicates_and_overflow_rejected() {
        let t0 = Instant::now();
        let mut store = KeyStore::new(1);
        let k = key("B", t0, 60);
        store.insert(k.clone()).unwrap();
        assert_eq!(store.insert(k), Err(InsertError::Duplicate(store.keys.keys().next().copied().unwrap())));
        assert!(matches!(store.insert(key("B", t0, 60)), Err(InsertError::Full(1))));
    }

    #[test]
    fn debug_output_hides_material() {
        let k = key("B", Instant::now(), 1);
        assert!(!format!("{k:?}").contains("171"));
    }
}
