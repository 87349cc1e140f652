//! The adaptive filter: slot array plus reverse map.
//!
//! A lookup whose fingerprint matches but whose map entry names a different
//! key is a false positive. With adaptation enabled the matching fingerprint
//! is extended with chunks of its owner's hash until it no longer prefixes
//! the query, so the same query never matches it again.

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::fingerprint::{
    common_chunks, extension_chunk, BitSource, FilterConfig, Fingerprint, HashStream, MinirunId,
};
use crate::reverse_map::{MapEntry, ReverseMap};
use crate::slots::{QueryResult, SlotArray, SpaceReport};

const SNAPSHOT_MAGIC: &[u8; 4] = b"AQFS";
const SNAPSHOT_VERSION: u32 = 1;
const FLAG_TAGGED: u8 = 1;
const FLAG_EXTRA: u8 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Policy {
    /// Extend fingerprints on detected false positives.
    pub auto_adapt: bool,
    /// Cap on extension chunks per fingerprint.
    pub max_extensions: usize,
    /// Re-inserting a stored key bumps its count instead of adding a fingerprint.
    pub dedupe_keys: bool,
    /// After a delete, trim surviving minirun siblings to the shortest
    /// extensions that keep them distinct.
    pub shorten_on_delete: bool,
}

impl Default for Policy {
    fn default() -> Self {
        Self {
            auto_adapt: true,
            max_extensions: 56,
            dedupe_keys: false,
            shorten_on_delete: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Lookup {
    NotPresent,
    Present { value: Option<Vec<u8>> },
    /// Matched only other keys' fingerprints, all of which were extended.
    FalsePositiveCorrected,
    /// Matched only other keys' fingerprints; adaptation was disabled.
    FalsePositive,
}

impl Lookup {
    pub fn is_present(&self) -> bool {
        matches!(self, Lookup::Present { .. })
    }

    /// The filter reported a fingerprint match, whether or not the key is stored.
    pub fn filter_matched(&self) -> bool {
        !matches!(self, Lookup::NotPresent)
    }

    pub fn is_false_positive(&self) -> bool {
        matches!(self, Lookup::FalsePositive | Lookup::FalsePositiveCorrected)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AdaptStats {
    /// Lookups that matched some other key's fingerprint.
    pub false_positives: u64,
    /// Fingerprints extended.
    pub adaptations: u64,
    pub chunks_added: u64,
}

#[derive(Clone, Debug)]
pub struct AdaptiveFilter {
    arr: SlotArray,
    map: ReverseMap,
    policy: Policy,
    stats: AdaptStats,
}

impl PartialEq for AdaptiveFilter {
    fn eq(&self, other: &Self) -> bool {
        self.arr == other.arr && self.map == other.map && self.policy == other.policy
    }
}

impl AdaptiveFilter {
    pub fn new(cfg: FilterConfig) -> Result<Self> {
        Self::with_policy(cfg, Policy::default())
    }

    pub fn with_policy(cfg: FilterConfig, policy: Policy) -> Result<Self> {
        Ok(Self::from_parts(SlotArray::new(cfg)?, ReverseMap::for_config(&cfg), policy))
    }

    /// Uses `map` as the reverse map, e.g. one opened with [`ReverseMap::open`].
    pub fn with_map(cfg: FilterConfig, policy: Policy, map: ReverseMap) -> Result<Self> {
        if map.qbits() != cfg.qbits || !map.is_empty() {
            return Err(Error::InvalidParams("map must be empty and match qbits".into()));
        }
        Ok(Self::from_parts(SlotArray::new(cfg)?, map, policy))
    }

    pub(crate) fn from_parts(arr: SlotArray, map: ReverseMap, policy: Policy) -> Self {
        Self {
            arr,
            map,
            policy,
            stats: AdaptStats::default(),
        }
    }

    pub fn config(&self) -> &FilterConfig {
        self.arr.config()
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn policy_mut(&mut self) -> &mut Policy {
        &mut self.policy
    }

    pub fn slots(&self) -> &SlotArray {
        &self.arr
    }

    pub fn map(&self) -> &ReverseMap {
        &self.map
    }

    pub fn stats(&self) -> AdaptStats {
        self.stats
    }

    pub fn map_accesses(&self) -> u64 {
        self.map.accesses()
    }

    /// Stored fingerprints (not counting multiplicities).
    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn load_factor(&self) -> f64 {
        self.arr.load_factor()
    }

    pub fn space_report(&self) -> SpaceReport {
        self.arr.space_report()
    }

    pub fn set_max_occupied(&mut self, limit: usize) {
        self.arr.set_max_occupied(limit);
    }

    #[inline]
    pub fn stream(&self, key: u64) -> HashStream {
        HashStream::new(key, self.config().seed)
    }

    pub fn insert(&mut self, key: u64, value: Option<Vec<u8>>) -> Result<()> {
        self.insert_tagged(key, value, false)
    }

    pub(crate) fn insert_tagged(&mut self, key: u64, value: Option<Vec<u8>>, tag: bool) -> Result<()> {
        let s = self.stream(key);
        let mut fp = Fingerprint::baseline(&s, self.config());
        let id = fp.id();
        if self.policy.dedupe_keys {
            if let Some(rank) = self.map.position(id, key) {
                let count = self.arr.get_count(id, rank)?;
                self.arr.set_count(id, rank, count + 1)?;
                if value.is_some() {
                    self.map.set_value(id, rank, value)?;
                }
                return Ok(());
            }
        }
        fp.tag = tag;
        self.insert_fingerprint(fp, key, value).map(|_| ())
    }

    /// Inserts a fully formed fingerprint owned by `key`.
    pub(crate) fn insert_fingerprint(&mut self, fp: Fingerprint, key: u64, value: Option<Vec<u8>>) -> Result<usize> {
        let id = fp.id();
        let rank = self.arr.insert_fp(&fp)?;
        if let Err(e) = self.map.insert(id, rank, key, value) {
            self.arr.remove_fp(id, rank)?;
            return Err(match e {
                Error::RankOutOfBounds { .. } => Error::MapInconsistency { id, rank },
                e => e,
            });
        }
        Ok(rank)
    }

    /// Filter-only membership test: never consults the map or adapts.
    pub fn may_contain(&self, key: u64) -> bool {
        self.arr.query_fp(&self.stream(key)).is_positive()
    }

    pub fn lookup(&mut self, key: u64) -> Result<Lookup> {
        if !self.policy.auto_adapt {
            let r = self.lookup_frozen(key)?;
            self.note_fp(r == Lookup::FalsePositive);
            return Ok(r);
        }
        let s = self.stream(key);
        let id = MinirunId::of(&s, self.config());
        let mut from = 0;
        let mut corrected = false;
        loop {
            let (rank, ext_len) = match self.arr.query_from(&s, from) {
                QueryResult::Negative => break,
                QueryResult::Positive { rank, ext_len, .. } => (rank, ext_len),
            };
            let entry = self.owner(id, rank)?;
            if entry.key == key {
                let value = entry.value.clone();
                return Ok(Lookup::Present { value });
            }
            let owner = entry.key;
            self.adapt_from(id, rank, ext_len, owner, &s)?;
            corrected = true;
            from = rank + 1;
        }
        self.note_fp(corrected);
        Ok(if corrected {
            Lookup::FalsePositiveCorrected
        } else {
            Lookup::NotPresent
        })
    }

    fn note_fp(&mut self, hit: bool) {
        if hit {
            self.stats.false_positives += 1;
        }
    }

    pub(crate) fn owner(&self, id: MinirunId, rank: usize) -> Result<&MapEntry> {
        self.map.get(id, rank).map_err(|_| Error::MapInconsistency { id, rank })
    }

    /// Lookup that never adapts; every match is checked against the map.
    pub fn lookup_frozen(&self, key: u64) -> Result<Lookup> {
        let s = self.stream(key);
        let id = MinirunId::of(&s, self.config());
        let mut from = 0;
        let mut matched = false;
        while let QueryResult::Positive { rank, .. } = self.arr.query_from(&s, from) {
            let entry = self.owner(id, rank)?;
            if entry.key == key {
                return Ok(Lookup::Present {
                    value: entry.value.clone(),
                });
            }
            matched = true;
            from = rank + 1;
        }
        Ok(if matched {
            Lookup::FalsePositive
        } else {
            Lookup::NotPresent
        })
    }

    /// Extends the fingerprint at `(id, rank)`, owned by `owner_key`, until it
    /// no longer prefixes `query`. Returns the number of chunks added.
    pub fn adapt<S: BitSource + ?Sized>(
        &mut self,
        id: MinirunId,
        rank: usize,
        owner_key: u64,
        query: &S,
    ) -> Result<usize> {
        let fp = self.arr.fingerprint(id, rank)?;
        let owner = self.stream(owner_key);
        if !crate::fingerprint::is_prefix(&fp, &owner, self.config()) {
            return Err(Error::MapInconsistency { id, rank });
        }
        self.adapt_from(id, rank, fp.ext.len(), owner_key, query)
    }

    pub(crate) fn adapt_from<S: BitSource + ?Sized>(
        &mut self,
        id: MinirunId,
        rank: usize,
        ext_len: usize,
        owner_key: u64,
        query: &S,
    ) -> Result<usize> {
        let cfg = *self.config();
        let owner = self.stream(owner_key);
        let max = self.policy.max_extensions;
        let shared = (ext_len..max)
            .take_while(|&i| extension_chunk(&owner, &cfg, i) == extension_chunk(query, &cfg, i))
            .count();
        let target = ext_len + shared + 1;
        if target > max {
            return Err(Error::AdaptationExhausted(max));
        }
        let chunks: Vec<u64> = (ext_len..target).map(|i| extension_chunk(&owner, &cfg, i)).collect();
        self.arr.extend_fp(id, rank, &chunks)?;
        self.stats.adaptations += 1;
        self.stats.chunks_added += chunks.len() as u64;
        Ok(chunks.len())
    }

    /// Removes one occurrence of `key`.
    pub fn delete(&mut self, key: u64) -> Result<()> {
        let s = self.stream(key);
        let id = MinirunId::of(&s, self.config());
        let rank = self.map.position(id, key).ok_or(Error::KeyNotFound(key))?;
        let count = self.arr.get_count(id, rank)?;
        if count > 1 {
            return self.arr.set_count(id, rank, count - 1);
        }
        self.arr.remove_fp(id, rank)?;
        self.map.remove(id, rank)?;
        if self.policy.shorten_on_delete {
            self.shorten_minirun(id)?;
        }
        Ok(())
    }

    fn shorten_minirun(&mut self, id: MinirunId) -> Result<()> {
        let cfg = *self.config();
        let fps = self.arr.minirun(id);
        let owners: Vec<HashStream> = self.map.list(id).iter().map(|e| self.stream(e.key)).collect();
        if owners.len() != fps.len() {
            return Err(Error::MapInconsistency { id, rank: owners.len().min(fps.len()) });
        }
        for (i, fp) in fps.iter().enumerate() {
            let cur = fp.ext.len();
            let need = (0..owners.len())
                .filter(|&j| j != i)
                .map(|j| common_chunks(&owners[i], &owners[j], &cfg, cur) + 1)
                .max()
                .unwrap_or(0)
                .min(cur);
            if need < cur {
                self.arr.truncate_ext(id, i, need)?;
            }
        }
        Ok(())
    }

    /// Stored `(fingerprint, map entry)` pairs in filter order.
    pub fn entries(&self) -> Result<Vec<(Fingerprint, MapEntry)>> {
        let fps = self.arr.fingerprints();
        let entries = self.map.iter().flat_map(|(_, l)| l.iter().cloned());
        let mut out = Vec::with_capacity(fps.len());
        let mut it = entries;
        for fp in fps {
            let e = it.next().ok_or(Error::MapInconsistency { id: fp.id(), rank: 0 })?;
            out.push((fp, e));
        }
        if it.next().is_some() {
            return Err(Error::InvalidParams("reverse map has extra entries".into()));
        }
        Ok(out)
    }

    /// Checks that map lists mirror miniruns and that every stored key's
    /// stream extends its fingerprint.
    pub fn check_consistency(&self) -> Result<()> {
        let cfg = *self.config();
        let fps = self.arr.fingerprints();
        let mut i = 0;
        for (id, list) in self.map.iter() {
            for (rank, e) in list.iter().enumerate() {
                let fp = fps.get(i).ok_or(Error::MapInconsistency { id: *id, rank })?;
                if fp.id() != *id || !crate::fingerprint::is_prefix(fp, &self.stream(e.key), &cfg) {
                    return Err(Error::MapInconsistency { id: *id, rank });
                }
                i += 1;
            }
        }
        if i != fps.len() {
            let fp = &fps[i];
            return Err(Error::MapInconsistency { id: fp.id(), rank: 0 });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.snapshot_with(None)
    }

    pub(crate) fn snapshot_with(&self, extra: Option<&[u8]>) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(SNAPSHOT_MAGIC);
        w.u32(SNAPSHOT_VERSION);
        let mut flags = 0;
        if self.arr.is_tagged() {
            flags |= FLAG_TAGGED;
        }
        if extra.is_some() {
            flags |= FLAG_EXTRA;
        }
        w.u8(flags);
        w.u8(self.policy.auto_adapt as u8);
        w.u32(self.policy.max_extensions as u32);
        w.u8(self.policy.dedupe_keys as u8);
        w.u8(self.policy.shorten_on_delete as u8);
        w.u64(self.arr.max_occupied() as u64);
        if let Some(extra) = extra {
            w.blob(extra);
        }
        w.blob(&self.arr.to_bytes());
        w.blob(&self.map.to_bytes());
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (f, extra) = Self::restore(bytes)?;
        if extra.is_some() {
            return Err(Error::Format("snapshot carries a yes/no parameter block".into()));
        }
        Ok(f)
    }

    pub(crate) fn restore(bytes: &[u8]) -> Result<(Self, Option<Vec<u8>>)> {
        let mut r = Reader::new(bytes);
        r.magic(SNAPSHOT_MAGIC)?;
        let version = r.u32()?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let flags = r.u8()?;
        if flags & !(FLAG_TAGGED | FLAG_EXTRA) != 0 {
            return Err(Error::Format(format!("unknown flags {flags:#x}")));
        }
        let flag = |b: u8| -> Result<bool> {
            match b {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(Error::Format("bad policy flag".into())),
            }
        };
        let policy = Policy {
            auto_adapt: flag(r.u8()?)?,
            max_extensions: r.u32()? as usize,
            dedupe_keys: flag(r.u8()?)?,
            shorten_on_delete: flag(r.u8()?)?,
        };
        let max_occupied = r.u64()? as usize;
        let extra = if flags & FLAG_EXTRA != 0 {
            Some(r.blob()?.to_vec())
        } else {
            None
        };
        let mut arr = SlotArray::from_bytes_tagged(r.blob()?, flags & FLAG_TAGGED != 0)?;
        let map = ReverseMap::from_bytes(r.blob()?)?.with_qbits(arr.config().qbits)?;
        r.finish()?;
        arr.set_max_occupied(max_occupied);
        if arr.max_occupied() != max_occupied {
            return Err(Error::Format("load limit exceeds the hard cap".into()));
        }
        Ok((Self::from_parts(arr, map, policy), extra))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fingerprint::split;

    fn cfg(q: u32, r: u32) -> FilterConfig {
        FilterConfig::new(q, r, 0x5eed).unwrap()
    }

    /// First key after `start` whose baseline fingerprint matches `target`'s
    /// and whose first `ext` extension chunks also match.
    fn collider(c: &FilterConfig, target: u64, ext: usize, start: u64) -> u64 {
        let t = HashStream::new(target, c.seed);
        (start..)
            .find(|&k| {
                let s = HashStream::new(k, c.seed);
                k != target
                    && split(&s, c) == split(&t, c)
                    && (0..ext).all(|i| extension_chunk(&s, c, i) == extension_chunk(&t, c, i))
            })
            .unwrap()
    }

    #[test]
    fn insert_and_lookup() {
        let mut f = AdaptiveFilter::new(cfg(8, 4)).unwrap();
        f.insert(7, Some(b"seven".to_vec())).unwrap();
        assert_eq!(
            f.lookup(7).unwrap(),
            Lookup::Present {
                value: Some(b"seven".to_vec())
            }
        );
    }

    #[test]
    fn negative_lookup_skips_map() {
        let c = cfg(8, 4);
        let mut f = AdaptiveFilter::new(c).unwrap();
        f.insert(1, None).unwrap();
        let before = f.map_accesses();
        let miss = (2..).find(|&k| !f.may_contain(k)).unwrap();
        assert_eq!(f.lookup(miss).unwrap(), Lookup::NotPresent);
        assert_eq!(f.map_accesses(), before);
    }

    #[test]
    fn engineered_collisions_share_minirun() {
        let c = cfg(8, 4);
        let mut f = AdaptiveFilter::new(c).unwrap();
        let y = collider(&c, 1, 0, 2);
        f.insert(1, None).unwrap();
        f.insert(y, None).unwrap();
        let id = MinirunId::of(&f.stream(1), &c);
        assert_eq!(f.slots().minirun_len(id), 2);
        assert_eq!(f.map().list(id).len(), 2);
    }

    #[test]
    fn false_positive_is_corrected_once() {
        let c = cfg(8, 4);
        let mut f = AdaptiveFilter::new(c).unwrap();
        f.insert(1, None).unwrap();
        let y = collider(&c, 1, 0, 2);
        let map_before = f.map().to_bytes();
        assert_eq!(f.lookup(y).unwrap(), Lookup::FalsePositiveCorrected);
        assert_eq!(f.lookup(y).unwrap(), Lookup::NotPresent);
        assert_eq!(f.map().to_bytes(), map_before);
        assert!(f.lookup(1).unwrap().is_present());
    }

    #[test]
    fn adapt_chunk_counts() {
        let c = cfg(8, 4);
        let mut f = AdaptiveFilter::new(c).unwrap();
        f.insert(1, None).unwrap();
        let id = MinirunId::of(&f.stream(1), &c);
        let y1 = {
            let t = f.stream(1);
            (2..)
                .find(|&k| {
                    let s = f.stream(k);
                    split(&s, &c) == split(&t, &c) && extension_chunk(&s, &c, 0) != extension_chunk(&t, &c, 0)
                })
                .unwrap()
        };
        assert_eq!(f.adapt(id, 0, 1, &f.stream(y1)).unwrap(), 1);

        let mut g = AdaptiveFilter::new(c).unwrap();
        g.insert(1, None).unwrap();
        let y2 = {
            let t = g.stream(1);
            (2..)
                .find(|&k| {
                    let s = g.stream(k);
                    split(&s, &c) == split(&t, &c)
                        && extension_chunk(&s, &c, 0) == extension_chunk(&t, &c, 0)
                        && extension_chunk(&s, &c, 1) != extension_chunk(&t, &c, 1)
                })
                .unwrap()
        };
        assert_eq!(g.adapt(id, 0, 1, &g.stream(y2)).unwrap(), 2);
        let snapshot = g.slots().clone();
        assert!(matches!(
            g.adapt(id, 0, 1, &g.stream(1)),
            Err(Error::AdaptationExhausted(56))
        ));
        assert_eq!(g.slots(), &snapshot);
    }

    #[test]
    fn non_adaptive_reports_false_positive() {
        let c = cfg(8, 4);
        let policy = Policy {
            auto_adapt: false,
            ..Policy::default()
        };
        let mut f = AdaptiveFilter::with_policy(c, policy).unwrap();
        f.insert(1, None).unwrap();
        let y = collider(&c, 1, 0, 2);
        assert_eq!(f.lookup(y).unwrap(), Lookup::FalsePositive);
        assert_eq!(f.lookup(y).unwrap(), Lookup::FalsePositive);
        assert_eq!(f.stats().false_positives, 2);
    }

    #[test]
    fn present_key_behind_colliders() {
        let c = cfg(8, 4);
        let mut f = AdaptiveFilter::new(c).unwrap();
        let y = collider(&c, 1, 0, 2);
        f.insert(y, None).unwrap();
        f.insert(1, None).unwrap();
        assert!(f.lookup(1).unwrap().is_present());
        assert!(f.lookup(y).unwrap().is_present());
        assert!(f.lookup_frozen(1).unwrap().is_present());
    }

    #[test]
    fn dedupe_counts() {
        let c = cfg(8, 4);
        let policy = Policy {
            dedupe_keys: true,
            ..Policy::default()
        };
        let mut f = AdaptiveFilter::with_policy(c, policy).unwrap();
        f.insert(5, None).unwrap();
        f.insert(5, None).unwrap();
        let id = MinirunId::of(&f.stream(5), &c);
        assert_eq!(f.slots().minirun_len(id), 1);
        assert_eq!(f.slots().get_count(id, 0).unwrap(), 2);
        f.delete(5).unwrap();
        assert_eq!(f.slots().get_count(id, 0).unwrap(), 1);
        assert!(f.lookup(5).unwrap().is_present());
        f.delete(5).unwrap();
        assert_eq!(f.lookup(5).unwrap(), Lookup::NotPresent);
        assert!(f.slots().is_empty());
        assert!(matches!(f.delete(5), Err(Error::KeyNotFound(5))));
    }

    #[test]
    fn shorten_on_delete_trims_lone_survivor() {
        let c = cfg(8, 4);
        let policy = Policy {
            shorten_on_delete: true,
            ..Policy::default()
        };
        let mut f = AdaptiveFilter::with_policy(c, policy).unwrap();
        let y = collider(&c, 1, 1, 2);
        f.insert(1, None).unwrap();
        f.insert(y, None).unwrap();
        let id = MinirunId::of(&f.stream(1), &c);
        f.adapt(id, 0, 1, &f.stream(y)).unwrap();
        f.adapt(id, 1, y, &f.stream(1)).unwrap();
        assert!(f.slots().minirun(id).iter().all(|fp| fp.ext.len() >= 2));
        f.delete(1).unwrap();
        let left = f.slots().minirun(id);
        assert_eq!(left.len(), 1);
        assert!(left[0].ext.is_empty());
        assert_eq!(f.space_report().extension_slots, 0);
        f.check_consistency().unwrap();
    }

    #[test]
    fn snapshot_roundtrip() {
        let c = cfg(10, 6);
        let mut f = AdaptiveFilter::new(c).unwrap();
        for k in 0..500u64 {
            f.insert(k, (k % 3 == 0).then(|| k.to_le_bytes().to_vec())).unwrap();
        }
        for k in 1000..5000u64 {
            f.lookup(k).unwrap();
        }
        let bytes = f.to_bytes();
        let g = AdaptiveFilter::from_bytes(&bytes).unwrap();
        assert_eq!(f, g);
        assert_eq!(g.to_bytes(), bytes);
        g.check_consistency().unwrap();
    }
}
