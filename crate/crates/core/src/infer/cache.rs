use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HFC1";

#[derive(Debug, Clone)]
struct Entry {
    vector: Vec<f32>,
    version: u64,
    model_id: u64,
    seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub stores: u64,
    pub evictions: u64,
}

/// Hidden features of visited nodes, keyed by `(layer, node)` and stamped
/// with the graph version and model id that produced them.
///
/// Lookups take `&self` and may run concurrently; stores need `&mut self`.
/// Beyond `capacity` entries the least recently stored one is evicted.
#[derive(Debug)]
pub struct HiddenFeatureCache {
    capacity: usize,
    max_age: u64,
    entries: HashMap<(u32, u32), Entry>,
    order: VecDeque<(u32, u32, u64)>,
    next_seq: u64,
    widths: HashMap<u32, usize>,
    hits: AtomicU64,
    misses: AtomicU64,
    stores: AtomicU64,
    evictions: AtomicU64,
}

impl HiddenFeatureCache {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            max_age: 0,
            entries: HashMap::new(),
            order: VecDeque::new(),
            next_seq: 0,
            widths: HashMap::new(),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            stores: AtomicU64::new(0),
            evictions: AtomicU64::new(0),
        }
    }

    /// Entries stored up to `max_age` graph versions ago are still served.
    /// The default of 0 requires an exact version match.
    pub fn with_max_age(mut self, max_age: u64) -> Self {
        self.max_age = max_age;
        self
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn max_age(&self) -> u64 {
        self.max_age
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            stores: self.stores.load(Ordering::Relaxed),
            evictions: self.evictions.load(Ordering::Relaxed),
        }
    }

    pub fn clear(&mut self) {
        self.entries.clear();
        self.order.clear();
        self.widths.clear();
    }

    /// Vector of `node` at `layer` if it was produced by `model_id` on a
    /// graph version within `max_age` of `version`.
    pub fn lookup(&self, layer: usize, node: usize, version: u64, model_id: u64) -> Option<&[f32]> {
        let fresh = self
            .entries
            .get(&(layer as u32, node as u32))
            .filter(|e| e.model_id == model_id && e.version <= version && version - e.version <= self.max_age);
        match fresh {
            Some(e) => {
                self.hits.fetch_add(1, Ordering::Relaxed);
                Some(&e.vector)
            }
            None => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                None
            }
        }
    }

    pub fn store(&mut self, layer: usize, node: usize, vector: &[f32], version: u64, model_id: u64) -> Result<()> {
        let (layer, node) = (layer as u32, node as u32);
        match self.widths.get(&layer) {
            Some(&w) if w != vector.len() => {
                return Err(Error::Cache(format!(
                    "layer {layer} holds width {w}, got a vector of width {}",
                    vector.len()
                )));
            }
            Some(_) => {}
            None => {
                self.widths.insert(layer, vector.len());
            }
        }
        self.stores.fetch_add(1, Ordering::Relaxed);
        if self.capacity == 0 {
            return Ok(());
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.entries.insert(
            (layer, node),
            Entry {
                vector: vector.to_vec(),
                version,
                model_id,
                seq,
            },
        );
        self.order.push_back((layer, node, seq));
        while self.entries.len() > self.capacity {
            let (l, n, s) = self.order.pop_front().expect("order tracks every entry");
            if self.entries.get(&(l, n)).is_some_and(|e| e.seq == s) {
                self.entries.remove(&(l, n));
                self.evictions.fetch_add(1, Ordering::Relaxed);
            }
        }
        if self.order.len() > 2 * self.entries.len() + 64 {
            let entries = &self.entries;
            self.order
                .retain(|(l, n, s)| entries.get(&(*l, *n)).is_some_and(|e| e.seq == *s));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.capacity as u64).to_le_bytes());
        out.extend_from_slice(&self.max_age.to_le_bytes());
        let live: Vec<&(u32, u32, u64)> = self
            .order
            .iter()
            .filter(|(l, n, s)| self.entries.get(&(*l, *n)).is_some_and(|e| e.seq == *s))
            .collect();
        out.extend_from_slice(&(live.len() as u64).to_le_bytes());
        for (l, n, _) in live {
            let e = &self.entries[&(*l, *n)];
            out.extend_from_slice(&l.to_le_bytes());
            out.extend_from_slice(&n.to_le_bytes());
            out.extend_from_slice(&e.version.to_le_bytes());
            out.extend_from_slice(&e.model_id.to_le_bytes());
            out.extend_from_slice(&(e.vector.len() as u32).to_le_bytes());
            for v in &e.vector {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Parse {
                offset: 0,
                field: "magic",
                msg: "not an HFC1 cache file".into(),
            });
        }
        let capacity = r.u64("capacity")? as usize;
        let max_age = r.u64("max_age")?;
        let count = r.u64("count")?;
        let mut cache = HiddenFeatureCache::new(capacity).with_max_age(max_age);
        for _ in 0..count {
            let layer = r.u32("layer")? as usize;
            let node = r.u32("node")? as usize;
            let version = r.u64("version")?;
            let model_id = r.u64("model_id")?;
            let width = r.u32("width")? as usize;
            let raw = r.take(width * 4, "vector")?;
            let vector: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            cache.store(layer, node, &vector, version, model_id)?;
        }
        if r.pos != bytes.len() {
            return Err(Error::Parse {
                offset: r.pos,
                field: "trailer",
                msg: "trailing bytes".into(),
            });
        }
        cache.stores.store(0, Ordering::Relaxed);
        Ok(cache)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Parse {
                offset: self.pos,
                field,
                msg: "unexpected end of file".into(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn u64(&mut self, field: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
}
