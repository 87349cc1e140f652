//! Reference models for tests: a linear-scan slot decoder that ignores block
//! offsets, and a logical model of the adaptive filter that stores
//! fingerprints as owner keys plus prefix lengths.

use std::collections::BTreeMap;

use crate::filter::Lookup;
use crate::fingerprint::{extension_chunk, split, FilterConfig, Fingerprint, HashStream, MinirunId};
use crate::slots::SlotArray;

/// One run recovered by [`decode`]: its quotient, physical start slot,
/// length in slots, and fingerprints in slot order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodedRun {
    pub quotient: u64,
    pub start: usize,
    pub len: usize,
    pub fingerprints: Vec<Fingerprint>,
}

/// Rebuilds every run by sweeping raw slots once, starting from a position
/// where no run is open. Panics on any metadata inconsistency.
pub fn decode(arr: &SlotArray) -> Vec<DecodedRun> {
    let n = arr.nslots();
    let cfg = *arr.config();
    let rmask = cfg.remainder_mask();
    let slots: Vec<_> = (0..n).map(|i| arr.slot(i)).collect();

    // open(p) = occupied bits minus run terminators before p; its minimum
    // marks a point between runs.
    let mut open = 0i64;
    let (mut best, mut at) = (0i64, 0usize);
    for (i, s) in slots.iter().enumerate() {
        open += s.occupied as i64 - (s.runend && !s.extension) as i64;
        if open < best {
            best = open;
            at = i + 1;
        }
    }
    assert_eq!(open, 0, "occupied and runend counts differ");
    let mut start = at % n;
    let mut pending = std::collections::VecDeque::new();
    // trailing extension slots belong to the run that just closed; their
    // occupied bits still open runs further on
    let mut skipped = 0;
    while slots[start].extension && skipped < n {
        if slots[start].occupied {
            pending.push_back(start as u64);
        }
        start = (start + 1) % n;
        skipped += 1;
    }

    let mut runs: Vec<DecodedRun> = Vec::new();
    let mut cur: Option<DecodedRun> = None;
    // counter digits seen on the current fingerprint
    let mut digits = 0;
    for step in 0..n {
        let i = (start + step) % n;
        let s = slots[i];
        if s.occupied && step < n - skipped {
            pending.push_back(i as u64);
        }
        if s.extension {
            let run = cur.as_mut().expect("extension slot outside a run");
            let fp = run.fingerprints.last_mut().unwrap();
            if s.runend {
                fp.count += s.payload << (cfg.rbits as usize * digits);
                digits += 1;
            } else {
                assert_eq!(digits, 0, "extension after counter digit");
                fp.ext.push(s.payload);
            }
            run.len += 1;
            continue;
        }
        if pending.is_empty() {
            assert!(!s.runend, "runend on empty slot {i}");
            if let Some(run) = cur.take() {
                runs.push(run);
            }
            continue;
        }
        let q = *pending.front().unwrap();
        let run = match &mut cur {
            Some(r) if r.quotient == q => r,
            _ => {
                if let Some(done) = cur.take() {
                    runs.push(done);
                }
                cur.insert(DecodedRun {
                    quotient: q,
                    start: i,
                    len: 0,
                    fingerprints: Vec::new(),
                })
            }
        };
        run.fingerprints.push(Fingerprint {
            quotient: q,
            remainder: s.payload & rmask,
            ext: Vec::new(),
            count: 0,
            tag: arr.is_tagged() && (s.payload >> cfg.rbits) & 1 == 1,
        });
        run.len += 1;
        digits = 0;
        if s.runend {
            pending.pop_front();
        }
    }
    assert!(pending.is_empty(), "runs left open after a full sweep");
    if let Some(run) = cur.take() {
        runs.push(run);
    }
    for run in &mut runs {
        for fp in &mut run.fingerprints {
            // digits encode count - 1
            fp.count += 1;
        }
    }
    runs.sort_by_key(|r| r.quotient);
    runs
}

/// All fingerprints from [`decode`], in run order.
pub fn decode_fingerprints(arr: &SlotArray) -> Vec<Fingerprint> {
    decode(arr).into_iter().flat_map(|r| r.fingerprints).collect()
}

/// Checks structural invariants: slot accounting, in-run remainder order and
/// agreement of the indexed run lookup with the linear decoder.
pub fn check_invariants(arr: &SlotArray) {
    let runs = decode(arr);
    let n = arr.nslots();
    let used: usize = runs.iter().map(|r| r.len).sum();
    assert_eq!(used, arr.occupied_slots(), "occupied slot count");
    let occ = (0..n).filter(|&i| arr.slot(i).occupied).count();
    assert_eq!(occ, runs.len(), "occupied bits vs runs");
    for r in &runs {
        assert!(
            r.fingerprints.windows(2).all(|w| w[0].remainder <= w[1].remainder),
            "run {} not sorted",
            r.quotient
        );
        let got = arr.find_run(r.quotient).expect("occupied quotient without run");
        assert_eq!(*got.start() % n, r.start, "run {} start", r.quotient);
        assert_eq!(got.end() - got.start() + 1, r.len, "run {} length", r.quotient);
    }
}

/// Logical model of an adaptive filter: per minirun ID, owner keys with
/// their extension counts, in rank order.
#[derive(Clone, Debug, Default)]
pub struct ModelFilter {
    cfg: Option<FilterConfig>,
    lists: BTreeMap<MinirunId, Vec<(u64, usize)>>,
}

impl ModelFilter {
    pub fn new(cfg: FilterConfig) -> Self {
        Self {
            cfg: Some(cfg),
            lists: BTreeMap::new(),
        }
    }

    fn cfg(&self) -> FilterConfig {
        self.cfg.expect("model without config")
    }

    fn stream(&self, key: u64) -> HashStream {
        HashStream::new(key, self.cfg().seed)
    }

    fn id(&self, key: u64) -> MinirunId {
        let (quotient, remainder) = split(&self.stream(key), &self.cfg());
        MinirunId { quotient, remainder }
    }

    /// Whether the first `ext` chunks of `owner`'s stream match `key`'s.
    fn prefixes(&self, owner: u64, ext: usize, key: u64) -> bool {
        let c = self.cfg();
        let (a, b) = (self.stream(owner), self.stream(key));
        (0..ext).all(|i| extension_chunk(&a, &c, i) == extension_chunk(&b, &c, i))
    }

    pub fn insert(&mut self, key: u64) {
        let id = self.id(key);
        self.lists.entry(id).or_default().push((key, 0));
    }

    pub fn delete(&mut self, key: u64) -> bool {
        let id = self.id(key);
        let Some(list) = self.lists.get_mut(&id) else {
            return false;
        };
        let Some(pos) = list.iter().position(|e| e.0 == key) else {
            return false;
        };
        list.remove(pos);
        if list.is_empty() {
            self.lists.remove(&id);
        }
        true
    }

    /// Whether any stored fingerprint prefixes `key`'s stream.
    pub fn matches(&self, key: u64) -> bool {
        self.lists
            .get(&self.id(key))
            .is_some_and(|l| l.iter().any(|&(o, ext)| self.prefixes(o, ext, key)))
    }

    /// Adapting lookup: extends matching fingerprints of other owners, in
    /// rank order, until the key's own entry or the end of the minirun.
    pub fn lookup(&mut self, key: u64) -> Lookup {
        let id = self.id(key);
        let c = self.cfg();
        let s = self.stream(key);
        let mut corrected = false;
        let Some(list) = self.lists.get(&id).cloned() else {
            return Lookup::NotPresent;
        };
        let mut updated = list.clone();
        for (rank, &(owner, ext)) in list.iter().enumerate() {
            if !self.prefixes(owner, ext, key) {
                continue;
            }
            if owner == key {
                self.lists.insert(id, updated);
                return Lookup::Present { value: None };
            }
            let o = self.stream(owner);
            let mut len = ext;
            while extension_chunk(&o, &c, len) == extension_chunk(&s, &c, len) {
                len += 1;
            }
            updated[rank].1 = len + 1;
            corrected = true;
        }
        self.lists.insert(id, updated);
        if corrected {
            Lookup::FalsePositiveCorrected
        } else {
            Lookup::NotPresent
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = u64> + '_ {
        self.lists.values().flat_map(|l| l.iter().map(|e| e.0))
    }

    pub fn len(&self) -> usize {
        self.lists.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    /// Expected fingerprints in filter order.
    pub fn fingerprints(&self) -> Vec<Fingerprint> {
        let c = self.cfg();
        self.lists
            .values()
            .flat_map(|l| l.iter())
            .map(|&(o, ext)| Fingerprint::with_extensions(&self.stream(o), &c, ext))
            .collect()
    }
}
