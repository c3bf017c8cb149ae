//! Volatile write-through cache fronting a persistent [`Backend`].
//!
//! Resident entries live in a slab and are threaded onto two structures at
//! once: a doubly linked eviction queue (oldest/least-recent at the head) and
//! a chained hash index of `bucket_count` buckets. Every save is committed to
//! the backend before the volatile tier is touched, so dropping the cache at
//! any point loses nothing.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::store::StoreError;

/// Eviction policy for a full cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Policy {
    /// Evict the least recently accessed entry. Hits and saves refresh recency.
    Lru,
    /// Evict the oldest inserted entry. Accesses never reorder the queue.
    Fifo,
}

impl FromStr for Policy {
    type Err = CacheError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lru" => Ok(Policy::Lru),
            "fifo" => Ok(Policy::Fifo),
            other => Err(CacheError::InvalidConfig(format!("unknown policy {other:?}"))),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Lru => "lru",
            Policy::Fifo => "fifo",
        })
    }
}

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("invalid cache config: {0}")]
    InvalidConfig(String),
    #[error("id is empty")]
    EmptyId,
    #[error("id is {len} bytes, limit is {max}")]
    IdTooLong { len: usize, max: usize },
    #[error("value is {len} bytes, limit is {max}")]
    ValueTooLong { len: usize, max: usize },
    #[error("id not found")]
    NotFound,
    #[error("backing store failure: {0}")]
    Store(#[source] StoreError),
}

/// Sizing and policy of a cache. All bounds are maxima and must be at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheConfig {
    pub capacity: usize,
    pub bucket_count: usize,
    pub id_size: usize,
    pub value_size: usize,
    pub policy: Policy,
}

impl CacheConfig {
    pub fn new(
        capacity: usize,
        bucket_count: usize,
        id_size: usize,
        value_size: usize,
        policy: Policy,
    ) -> Result<Self, CacheError> {
        let config = CacheConfig {
            capacity,
            bucket_count,
            id_size,
            value_size,
            policy,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CacheError> {
        let bounds = [
            ("capacity", self.capacity),
            ("bucket_count", self.bucket_count),
            ("id_size", self.id_size),
            ("value_size", self.value_size),
        ];
        for (name, v) in bounds {
            if v == 0 {
                return Err(CacheError::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// Persistent tier behind a [`Cache`].
///
/// `read` must report absence as [`StoreError::NotFound`]; any other error is
/// treated as a store failure and propagated.
pub trait Backend {
    fn read(&mut self, id: &[u8]) -> Result<Vec<u8>, StoreError>;
    fn write(&mut self, id: &[u8], value: &[u8]) -> Result<(), StoreError>;
}

impl<B: Backend + ?Sized> Backend for &mut B {
    fn read(&mut self, id: &[u8]) -> Result<Vec<u8>, StoreError> {
        (**self).read(id)
    }

    fn write(&mut self, id: &[u8], value: &[u8]) -> Result<(), StoreError> {
        (**self).write(id, value)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn read(&mut self, id: &[u8]) -> Result<Vec<u8>, StoreError> {
        (**self).read(id)
    }

    fn write(&mut self, id: &[u8], value: &[u8]) -> Result<(), StoreError> {
        (**self).write(id, value)
    }
}

/// Non-durable backend, for tests and benchmarks that isolate the volatile tier.
#[derive(Debug, Default, Clone)]
pub struct MemoryBackend {
    objects: std::collections::HashMap<Vec<u8>, Vec<u8>>,
}

impl MemoryBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }
}

impl Backend for MemoryBackend {
    fn read(&mut self, id: &[u8]) -> Result<Vec<u8>, StoreError> {
        self.objects.get(id).cloned().ok_or(StoreError::NotFound)
    }

    fn write(&mut self, id: &[u8], value: &[u8]) -> Result<(), StoreError> {
        self.objects.insert(id.to_vec(), value.to_vec());
        Ok(())
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    /// Queries for ids present in neither tier.
    pub not_found: u64,
    /// Queries that failed because the backend errored on read.
    pub store_failures: u64,
    pub evictions: u64,
    pub saves: u64,
}

/// Which tier answered a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tier {
    Volatile,
    Backend,
}

#[derive(Debug)]
struct Entry {
    id: Vec<u8>,
    value: Vec<u8>,
    prev: Option<usize>,
    next: Option<usize>,
    chain: Option<usize>,
}

pub struct Cache<B> {
    config: CacheConfig,
    slots: Vec<Option<Entry>>,
    free_slots: Vec<usize>,
    buckets: Vec<Option<usize>>,
    head: Option<usize>,
    tail: Option<usize>,
    len: usize,
    store: B,
    stats: CacheStats,
}

impl<B: fmt::Debug> fmt::Debug for Cache<B> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Cache")
            .field("config", &self.config)
            .field("len", &self.len)
            .field("stats", &self.stats)
            .field("store", &self.store)
            .finish()
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl<B: Backend> Cache<B> {
    /// Builds an empty cache over `store`. The store is neither read nor written.
    pub fn init(config: CacheConfig, store: B) -> Result<Self, CacheError> {
        config.validate()?;
        Ok(Cache {
            config,
            slots: Vec::with_capacity(config.capacity.min(4096)),
            free_slots: Vec::new(),
            buckets: vec![None; config.bucket_count],
            head: None,
            tail: None,
            len: 0,
            store,
            stats: CacheStats::default(),
        })
    }

    /// Drops every volatile entry and hands the backend back untouched.
    pub fn free(self) -> B {
        self.store
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn store(&self) -> &B {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut B {
        &mut self.store
    }

    /// True if `id` is resident. Does not touch recency or stats.
    pub fn contains(&self, id: &[u8]) -> bool {
        self.find(id).is_some()
    }

    /// Resident ids in eviction order: the next victim comes first.
    pub fn resident_ids(&self) -> Vec<Vec<u8>> {
        let mut out = Vec::with_capacity(self.len);
        let mut cur = self.head;
        while let Some(i) = cur {
            let e = self.entry(i);
            out.push(e.id.clone());
            cur = e.next;
        }
        out
    }

    pub fn query(&mut self, id: &[u8]) -> Result<Vec<u8>, CacheError> {
        self.lookup(id).map(|(value, _)| value)
    }

    /// Like [`Cache::query`], also reporting whether it was a hit or a miss.
    pub fn lookup(&mut self, id: &[u8]) -> Result<(Vec<u8>, Tier), CacheError> {
        self.check_id(id)?;
        if let Some(i) = self.find(id) {
            self.stats.hits += 1;
            if self.config.policy == Policy::Lru {
                self.touch(i);
            }
            return Ok((self.entry(i).value.clone(), Tier::Volatile));
        }
        match self.store.read(id) {
            Ok(value) => {
                self.stats.misses += 1;
                if value.len() <= self.config.value_size {
                    self.insert(id.to_vec(), value.clone());
                }
                Ok((value, Tier::Backend))
            }
            Err(StoreError::NotFound) => {
                self.stats.not_found += 1;
                Err(CacheError::NotFound)
            }
            Err(e) => {
                self.stats.store_failures += 1;
                Err(CacheError::Store(e))
            }
        }
    }

    /// Writes through to the backend, then makes `id` resident.
    ///
    /// If the backend write fails the volatile tier is left as it was.
    pub fn save_object(&mut self, id: &[u8], value: &[u8]) -> Result<(), CacheError> {
        self.check_id(id)?;
        if id.is_empty() {
            return Err(CacheError::EmptyId);
        }
        if value.len() > self.config.value_size {
            return Err(CacheError::ValueTooLong {
                len: value.len(),
                max: self.config.value_size,
            });
        }
        self.store.write(id, value).map_err(CacheError::Store)?;
        self.stats.saves += 1;
        match self.find(id) {
            Some(i) => {
                self.entry_mut(i).value = value.to_vec();
                if self.config.policy == Policy::Lru {
                    self.touch(i);
                }
            }
            None => self.insert(id.to_vec(), value.to_vec()),
        }
        Ok(())
    }

    fn check_id(&self, id: &[u8]) -> Result<(), CacheError> {
        if id.len() > self.config.id_size {
            return Err(CacheError::IdTooLong {
                len: id.len(),
                max: self.config.id_size,
            });
        }
        Ok(())
    }

    fn bucket_of(&self, id: &[u8]) -> usize {
        (fnv1a(id) % self.config.bucket_count as u64) as usize
    }

    fn entry(&self, i: usize) -> &Entry {
        self.slots[i].as_ref().expect("live slot")
    }

    fn entry_mut(&mut self, i: usize) -> &mut Entry {
        self.slots[i].as_mut().expect("live slot")
    }

    fn find(&self, id: &[u8]) -> Option<usize> {
        let mut cur = self.buckets[self.bucket_of(id)];
        while let Some(i) = cur {
            let e = self.entry(i);
            if e.id == id {
                return Some(i);
            }
            cur = e.chain;
        }
        None
    }

    fn insert(&mut self, id: Vec<u8>, value: Vec<u8>) {
        if self.len >= self.config.capacity {
            self.evict();
        }
        let bucket = self.bucket_of(&id);
        let entry = Entry {
            id,
            value,
            prev: None,
            next: None,
            chain: self.buckets[bucket],
        };
        let i = match self.free_slots.pop() {
            Some(i) => {
                self.slots[i] = Some(entry);
                i
            }
            None => {
                self.slots.push(Some(entry));
                self.slots.len() - 1
            }
        };
        self.buckets[bucket] = Some(i);
        self.push_back(i);
        self.len += 1;
    }

    fn evict(&mut self) {
        let Some(victim) = self.head else { return };
        self.unlink(victim);
        self.unchain(victim);
        self.slots[victim] = None;
        self.free_slots.push(victim);
        self.len -= 1;
        self.stats.evictions += 1;
    }

    fn touch(&mut self, i: usize) {
        if self.tail != Some(i) {
            self.unlink(i);
            self.push_back(i);
        }
    }

    fn push_back(&mut self, i: usize) {
        let old_tail = self.tail;
        {
            let e = self.entry_mut(i);
            e.prev = old_tail;
            e.next = None;
        }
        match old_tail {
            Some(t) => self.entry_mut(t).next = Some(i),
            None => self.head = Some(i),
        }
        self.tail = Some(i);
    }

    fn unlink(&mut self, i: usize) {
        let (prev, next) = {
            let e = self.entry(i);
            (e.prev, e.next)
        };
        match prev {
            Some(p) => self.entry_mut(p).next = next,
            None => self.head = next,
        }
        match next {
            Some(n) => self.entry_mut(n).prev = prev,
            None => self.tail = prev,
        }
    }

    fn unchain(&mut self, i: usize) {
        let bucket = self.bucket_of(&self.entry(i).id);
        let after = self.entry(i).chain;
        if self.buckets[bucket] == Some(i) {
            self.buckets[bucket] = after;
            return;
        }
        let mut cur = self.buckets[bucket];
        while let Some(c) = cur {
            let next = self.entry(c).chain;
            if next == Some(i) {
                self.entry_mut(c).chain = after;
                return;
            }
            cur = next;
        }
        unreachable!("resident entry missing from its bucket");
    }

    #[cfg(test)]
    fn check_structure(&self) {
        let mut queued = 0;
        let mut cur = self.head;
        let mut prev = None;
        while let Some(i) = cur {
            let e = self.entry(i);
            assert_eq!(e.prev, prev);
            assert_eq!(self.find(&e.id), Some(i));
            queued += 1;
            prev = cur;
            cur = e.next;
        }
        assert_eq!(self.tail, prev);
        let chained: usize = (0..self.buckets.len())
            .map(|b| {
                let mut n = 0;
                let mut cur = self.buckets[b];
                while let Some(i) = cur {
                    assert_eq!(self.bucket_of(&self.entry(i).id), b);
                    n += 1;
                    cur = self.entry(i).chain;
                }
                n
            })
            .sum();
        assert_eq!(queued, self.len);
        assert_eq!(chained, self.len);
        assert!(self.len <= self.config.capacity);
    }
}
