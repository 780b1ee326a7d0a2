//! Byte-budgeted LRU cache for transcoded segments.

use std::collections::{BTreeMap, HashMap};

use crate::content::{SegmentDescriptor, SegmentPayload};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("payload of {size} bytes exceeds cache capacity of {capacity} bytes")]
pub struct TooLarge {
    pub size: u64,
    pub capacity: u64,
}

struct Entry {
    payload: SegmentPayload,
    mark: u64,
}

/// LRU cache bounded by the sum of payload sizes.
///
/// Every `get` hit and every `put` stamps the entry with a fresh mark from a
/// monotone counter; eviction removes the smallest mark first.
pub struct SegmentCache {
    capacity: u64,
    current: u64,
    clock: u64,
    entries: HashMap<SegmentDescriptor, Entry>,
    by_mark: BTreeMap<u64, SegmentDescriptor>,
}

impl SegmentCache {
    pub fn new(capacity: u64) -> Self {
        Self {
            capacity,
            current: 0,
            clock: 0,
            entries: HashMap::new(),
            by_mark: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn current_bytes(&self) -> u64 {
        self.current
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, desc: &SegmentDescriptor) -> bool {
        self.entries.contains_key(desc)
    }

    fn next_mark(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    /// Returns the payload and refreshes its mark.
    pub fn get(&mut self, desc: &SegmentDescriptor) -> Option<SegmentPayload> {
        let mark = self.next_mark();
        let entry = self.entries.get_mut(desc)?;
        let old = std::mem::replace(&mut entry.mark, mark);
        let payload = entry.payload;
        let key = self.by_mark.remove(&old).expect("mark index in sync");
        self.by_mark.insert(mark, key);
        Some(payload)
    }

    /// Inserts `payload`, evicting oldest marks until it fits. Returns the
    /// evicted descriptors in eviction order. Re-inserting an existing key
    /// replaces it without counting it as evicted.
    pub fn put(
        &mut self,
        desc: SegmentDescriptor,
        payload: SegmentPayload,
    ) -> Result<Vec<SegmentDescriptor>, TooLarge> {
        let size = payload.len();
        if size > self.capacity {
            tracing::warn!(segment = %desc, size, capacity = self.capacity, "payload larger than cache");
            return Err(TooLarge {
                size,
                capacity: self.capacity,
            });
        }
        if let Some(old) = self.entries.remove(&desc) {
            self.by_mark.remove(&old.mark);
            self.current -= old.payload.len();
        }
        let mut evicted = Vec::new();
        while self.current + size > self.capacity {
            let (_, victim) = self
                .by_mark
                .pop_first()
                .expect("non-empty while over budget");
            let entry = self.entries.remove(&victim).expect("mark index in sync");
            self.current -= entry.payload.len();
            evicted.push(victim);
        }
        let mark = self.next_mark();
        self.by_mark.insert(mark, desc.clone());
        self.entries.insert(desc, Entry { payload, mark });
        self.current += size;
        Ok(evicted)
    }
}
