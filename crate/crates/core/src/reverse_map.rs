//! Reverse map from minirun IDs to the keys that produced them.
//!
//! Each minirun ID owns a list of entries in minirun rank order, so the
//! fingerprint at rank `i` of a minirun was inserted for the key at position
//! `i` of its list. Entries may carry a value (the merged setup, where the map
//! doubles as the backing store) or only the key (the split setup, where
//! values live in a caller-owned store).
//!
//! The map is consulted only on inserts, deletes and positive filter
//! matches. Every `get`, `list`, `insert` and `remove` bumps an access counter
//! so callers can verify that negative lookups never touch it.
//!
//! A map opened with [`ReverseMap::open`] is additionally backed by an
//! append-only record log; the in-memory index is rebuilt by replaying it.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::fingerprint::{FilterConfig, MinirunId};

const SNAPSHOT_MAGIC: &[u8; 4] = b"AQFM";
const LOG_MAGIC: &[u8; 4] = b"AQFL";
const VERSION: u32 = 1;
const NO_VALUE: u32 = u32::MAX;
const OP_INSERT: u8 = 1;
const OP_REMOVE: u8 = 2;
const OP_SET_VALUE: u8 = 3;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MapEntry {
    pub key: u64,
    pub value: Option<Vec<u8>>,
}

struct RecordLog {
    path: PathBuf,
    out: BufWriter<File>,
}

pub struct ReverseMap {
    qbits: u32,
    lists: BTreeMap<MinirunId, Vec<MapEntry>>,
    len: usize,
    accesses: AtomicU64,
    log: Option<RecordLog>,
}

impl std::fmt::Debug for ReverseMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReverseMap")
            .field("qbits", &self.qbits)
            .field("ids", &self.lists.len())
            .field("entries", &self.len)
            .field("log", &self.log.as_ref().map(|l| &l.path))
            .finish()
    }
}

/// Clones the contents into an in-memory map; the record log is not shared.
impl Clone for ReverseMap {
    fn clone(&self) -> Self {
        Self {
            qbits: self.qbits,
            lists: self.lists.clone(),
            len: self.len,
            accesses: AtomicU64::new(self.accesses()),
            log: None,
        }
    }
}

/// Equality of contents; access counters and backends are ignored.
impl PartialEq for ReverseMap {
    fn eq(&self, other: &Self) -> bool {
        self.qbits == other.qbits && self.lists == other.lists
    }
}

impl Eq for ReverseMap {}

fn pack_id(id: MinirunId, qbits: u32) -> u64 {
    (id.quotient << (64 - qbits)) | id.remainder
}

fn unpack_id(packed: u64, qbits: u32) -> MinirunId {
    MinirunId {
        quotient: packed >> (64 - qbits),
        remainder: packed & crate::fingerprint::low_mask(64 - qbits),
    }
}

fn write_entry(w: &mut Writer, e: &MapEntry) {
    w.u32(8);
    w.u64(e.key);
    match &e.value {
        Some(v) => {
            w.u32(v.len() as u32);
            w.bytes(v);
        }
        None => w.u32(NO_VALUE),
    }
}

fn read_entry(r: &mut Reader<'_>) -> Result<MapEntry> {
    if r.u32()? != 8 {
        return Err(Error::Format("map keys must be 8 bytes".into()));
    }
    let key = r.u64()?;
    let value = match r.u32()? {
        NO_VALUE => None,
        n => Some(r.take(n as usize)?.to_vec()),
    };
    Ok(MapEntry { key, value })
}

impl ReverseMap {
    /// An empty in-memory map for filters with `qbits` quotient bits.
    pub fn new(qbits: u32) -> Self {
        Self {
            qbits,
            lists: BTreeMap::new(),
            len: 0,
            accesses: AtomicU64::new(0),
            log: None,
        }
    }

    pub fn for_config(cfg: &FilterConfig) -> Self {
        Self::new(cfg.qbits)
    }

    /// Opens (or creates) a log-backed map at `path`, replaying any existing
    /// records into memory. Later mutations are appended to the log.
    pub fn open(path: impl AsRef<Path>, qbits: u32) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut map = Self::new(qbits);
        let exists = path.exists() && std::fs::metadata(&path)?.len() > 0;
        if exists {
            let mut buf = Vec::new();
            File::open(&path)?.read_to_end(&mut buf)?;
            map.replay(&buf)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        let mut out = BufWriter::new(file);
        if !exists {
            let mut w = Writer::default();
            w.bytes(LOG_MAGIC);
            w.u32(VERSION);
            w.u8(qbits as u8);
            out.write_all(&w.buf)?;
            out.flush()?;
        }
        map.log = Some(RecordLog { path, out });
        Ok(map)
    }

    fn replay(&mut self, buf: &[u8]) -> Result<()> {
        let mut r = Reader::new(buf);
        r.magic(LOG_MAGIC)?;
        if r.u32()? != VERSION {
            return Err(Error::Format("unsupported log version".into()));
        }
        if r.u8()? as u32 != self.qbits {
            return Err(Error::ConfigMismatch);
        }
        while !r.is_at_end() {
            let op = r.u8()?;
            let id = unpack_id(r.u64()?, self.qbits);
            let rank = r.u32()? as usize;
            match op {
                OP_INSERT => {
                    let e = read_entry(&mut r)?;
                    self.apply_insert(id, rank, e)?;
                }
                OP_REMOVE => {
                    self.apply_remove(id, rank)?;
                }
                OP_SET_VALUE => {
                    let e = read_entry(&mut r)?;
                    self.slot_mut(id, rank)?.value = e.value;
                }
                other => return Err(Error::Format(format!("unknown log op {other}"))),
            }
        }
        Ok(())
    }

    fn append(&mut self, op: u8, id: MinirunId, rank: usize, entry: Option<&MapEntry>) -> Result<()> {
        if let Some(log) = &mut self.log {
            let mut w = Writer::default();
            w.u8(op);
            w.u64(pack_id(id, self.qbits));
            w.u32(rank as u32);
            if let Some(e) = entry {
                write_entry(&mut w, e);
            }
            log.out.write_all(&w.buf)?;
        }
        Ok(())
    }

    /// Flushes buffered log records to disk.
    pub fn flush(&mut self) -> Result<()> {
        if let Some(log) = &mut self.log {
            log.out.flush()?;
        }
        Ok(())
    }

    pub fn log_path(&self) -> Option<&Path> {
        self.log.as_ref().map(|l| l.path.as_path())
    }

    pub fn qbits(&self) -> u32 {
        self.qbits
    }

    /// Total entries across all lists.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn id_count(&self) -> usize {
        self.lists.len()
    }

    pub fn accesses(&self) -> u64 {
        self.accesses.load(Ordering::Relaxed)
    }

    pub fn reset_accesses(&self) {
        self.accesses.store(0, Ordering::Relaxed);
    }

    #[inline]
    fn touch(&self) {
        self.accesses.fetch_add(1, Ordering::Relaxed);
    }

    fn apply_insert(&mut self, id: MinirunId, rank: usize, entry: MapEntry) -> Result<()> {
        let list = self.lists.entry(id).or_default();
        if rank > list.len() {
            let len = list.len();
            if len == 0 {
                self.lists.remove(&id);
            }
            return Err(Error::RankOutOfBounds { rank, len });
        }
        list.insert(rank, entry);
        self.len += 1;
        Ok(())
    }

    fn apply_remove(&mut self, id: MinirunId, rank: usize) -> Result<MapEntry> {
        let list = self.lists.get_mut(&id).ok_or(Error::NotFound { id, rank })?;
        if rank >= list.len() {
            return Err(Error::NotFound { id, rank });
        }
        let e = list.remove(rank);
        if list.is_empty() {
            self.lists.remove(&id);
        }
        self.len -= 1;
        Ok(e)
    }

    fn slot_mut(&mut self, id: MinirunId, rank: usize) -> Result<&mut MapEntry> {
        self.lists
            .get_mut(&id)
            .and_then(|l| l.get_mut(rank))
            .ok_or(Error::NotFound { id, rank })
    }

    /// Inserts at position `rank`; later entries shift back by one.
    pub fn insert(&mut self, id: MinirunId, rank: usize, key: u64, value: Option<Vec<u8>>) -> Result<()> {
        self.touch();
        let entry = MapEntry { key, value };
        self.append(OP_INSERT, id, rank, Some(&entry))?;
        self.apply_insert(id, rank, entry)
    }

    pub fn get(&self, id: MinirunId, rank: usize) -> Result<&MapEntry> {
        self.touch();
        self.lists
            .get(&id)
            .and_then(|l| l.get(rank))
            .ok_or(Error::NotFound { id, rank })
    }

    /// Removes the entry at `rank`; later entries shift forward by one.
    pub fn remove(&mut self, id: MinirunId, rank: usize) -> Result<MapEntry> {
        self.touch();
        let e = self.apply_remove(id, rank)?;
        self.append(OP_REMOVE, id, rank, None)?;
        Ok(e)
    }

    pub fn set_value(&mut self, id: MinirunId, rank: usize, value: Option<Vec<u8>>) -> Result<()> {
        self.touch();
        let key = self.slot_mut(id, rank)?.key;
        let entry = MapEntry { key, value };
        self.append(OP_SET_VALUE, id, rank, Some(&entry))?;
        self.slot_mut(id, rank)?.value = entry.value;
        Ok(())
    }

    /// The whole list for `id` (empty if absent).
    pub fn list(&self, id: MinirunId) -> &[MapEntry] {
        self.touch();
        self.lists.get(&id).map_or(&[], |l| l.as_slice())
    }

    /// Rank of `key` within the list for `id`.
    pub fn position(&self, id: MinirunId, key: u64) -> Option<usize> {
        self.list(id).iter().position(|e| e.key == key)
    }

    /// All lists in minirun ID order, without counting accesses.
    pub fn iter(&self) -> impl Iterator<Item = (&MinirunId, &[MapEntry])> {
        self.lists.iter().map(|(id, l)| (id, l.as_slice()))
    }

    /// Per-ID concatenation; for shared IDs `a`'s entries come first.
    pub fn concat(a: &ReverseMap, b: &ReverseMap) -> Result<ReverseMap> {
        if a.qbits != b.qbits {
            return Err(Error::ConfigMismatch);
        }
        let mut out = a.clone();
        out.reset_accesses();
        for (id, list) in &b.lists {
            out.lists.entry(*id).or_default().extend(list.iter().cloned());
        }
        out.len = a.len + b.len;
        Ok(out)
    }

    /// Builds a map from `(id, entry)` pairs grouped in rank order.
    pub fn from_entries(qbits: u32, entries: impl IntoIterator<Item = (MinirunId, MapEntry)>) -> Self {
        let mut m = Self::new(qbits);
        for (id, e) in entries {
            m.lists.entry(id).or_default().push(e);
            m.len += 1;
        }
        m
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(SNAPSHOT_MAGIC);
        w.u32(VERSION);
        w.u64(self.lists.len() as u64);
        for (id, list) in &self.lists {
            w.u8(self.qbits as u8);
            w.u64(pack_id(*id, self.qbits));
            w.u32(list.len() as u32);
            for e in list {
                write_entry(&mut w, e);
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(SNAPSHOT_MAGIC)?;
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let records = r.u64()?;
        let mut map: Option<ReverseMap> = None;
        let mut prev: Option<MinirunId> = None;
        for _ in 0..records {
            let qbits = r.u8()? as u32;
            if !(1..=crate::fingerprint::MAX_QBITS).contains(&qbits) {
                return Err(Error::Format(format!("bad qbits {qbits}")));
            }
            let m = map.get_or_insert_with(|| ReverseMap::new(qbits));
            if m.qbits != qbits {
                return Err(Error::Format("mixed qbits in map snapshot".into()));
            }
            let id = unpack_id(r.u64()?, qbits);
            if prev.is_some_and(|p| p >= id) {
                return Err(Error::Format("map records out of order".into()));
            }
            prev = Some(id);
            let n = r.u32()? as usize;
            if n == 0 {
                return Err(Error::Format("empty map record".into()));
            }
            let list = (0..n).map(|_| read_entry(&mut r)).collect::<Result<Vec<_>>>()?;
            m.len += list.len();
            m.lists.insert(id, list);
        }
        r.finish()?;
        // An empty snapshot does not record qbits; the caller re-tags it.
        Ok(map.unwrap_or_else(|| ReverseMap::new(0)))
    }

    /// Re-labels an empty map decoded from a snapshot with the filter's qbits.
    pub(crate) fn with_qbits(mut self, qbits: u32) -> Result<Self> {
        if self.lists.is_empty() {
            self.qbits = qbits;
        } else if self.qbits != qbits {
            return Err(Error::ConfigMismatch);
        }
        Ok(self)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

impl Drop for ReverseMap {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}
