//! The physical slot array.
//!
//! `2^q` slots, each holding an `r`-bit payload (plus an optional membership
//! tag bit) and three metadata bits:
//!
//! * `occupied[i]`: some stored fingerprint has quotient `i`.
//! * `runend[i]`: on a remainder slot, the last fingerprint of its run. On an
//!   extension-marked slot, distinguishes a counter digit (`1`) from a hash
//!   extension chunk (`0`).
//! * `extension[i]`: the slot continues the fingerprint that precedes it.
//!
//! A fingerprint occupies its remainder slot, then its extension chunks in
//! stream order, then the little-endian base-`2^r` digits of `count - 1`
//! (no digits for a singleton). Runs are kept in quotient order with linear
//! probing and wrap around the end of the array. Within a run fingerprints
//! are ordered by remainder; fingerprints sharing a remainder (a minirun)
//! keep insertion order, which is the rank order the reverse map mirrors.
//!
//! Positions named "linear" below are unwrapped slot indices: a run whose
//! quotient is near the end of the array may continue past `nslots`, and the
//! physical slot is `pos % nslots`.
//!
//! Every 64-slot block carries an 8-bit saturating offset: the number of
//! slots at the start of the block occupied by runs of earlier quotients.
//! Saturated offsets are recomputed from the preceding block on demand.

use std::ops::RangeInclusive;

use crate::bits::{self, select_in_word, words_for, PackedInts};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::fingerprint::{extension_chunk, low_mask, split, BitSource, FilterConfig, Fingerprint, MinirunId};

/// Hard cap on the fraction of occupied slots.
pub const MAX_LOAD: f64 = 0.95;
/// Size of the fixed snapshot header, counted in every space report.
pub const HEADER_BITS: u64 = 26 * 8;
const SNAPSHOT_MAGIC: &[u8; 4] = b"AQF1";
const SNAPSHOT_VERSION: u32 = 1;
const SATURATED: u8 = u8::MAX;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Remainder,
    Extension,
    Counter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Cell {
    kind: Kind,
    value: u64,
}

/// One fingerprint inside a decoded run: `[start]` is the remainder slot,
/// `(start, ext_end)` the extension chunks, `[ext_end, end)` counter digits.
#[derive(Clone, Copy, Debug)]
struct Span {
    start: usize,
    ext_end: usize,
    end: usize,
}

/// Outcome of probing the array with a hash stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueryResult {
    Negative,
    Positive {
        /// Minirun rank of the first stored fingerprint that prefixes the stream.
        rank: usize,
        /// Number of extension chunks on that fingerprint.
        ext_len: usize,
        tag: bool,
    },
}

impl QueryResult {
    pub fn is_positive(&self) -> bool {
        matches!(self, QueryResult::Positive { .. })
    }
}

/// Raw contents of one physical slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlotBits {
    pub occupied: bool,
    pub runend: bool,
    pub extension: bool,
    pub payload: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpaceReport {
    pub total_bits: u64,
    pub metadata_bits: u64,
    pub remainder_bits: u64,
    pub extension_slots: u64,
    pub counter_slots: u64,
    /// Stored fingerprints (remainder slots).
    pub items: u64,
    pub load_factor: f64,
    /// `total_bits / items`, or 0 for an empty array.
    pub bits_per_item: f64,
}

/// Placement of one run, in linear slot positions (`end` inclusive).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunLayout {
    pub quotient: u64,
    pub start: usize,
    pub end: usize,
}

/// A run being rewritten plus every run that follows it contiguously.
struct Region {
    anchor: usize,
    start: usize,
    anchor_cells: Vec<Cell>,
    cells: Vec<Cell>,
    /// (linear quotient, cells start, cells end)
    runs: Vec<(usize, usize, usize)>,
    last_q: usize,
    decoded_end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlotArray {
    cfg: FilterConfig,
    tagged: bool,
    nslots: usize,
    mask: usize,
    occupied: Vec<u64>,
    runend: Vec<u64>,
    extension: Vec<u64>,
    offsets: Vec<u8>,
    payload: PackedInts,
    used: usize,
    limit: usize,
}

fn counter_digits(count: u64, rbits: u32) -> Vec<u64> {
    let mut v = count - 1;
    let mut out = Vec::new();
    while v > 0 {
        out.push(v & low_mask(rbits));
        v = if rbits >= 64 { 0 } else { v >> rbits };
    }
    out
}

fn counter_value(digits: impl Iterator<Item = u64>, rbits: u32) -> u64 {
    digits
        .enumerate()
        .fold(0u64, |acc, (i, d)| acc | (d << (rbits as usize * i)))
        + 1
}

fn default_limit(nslots: usize) -> usize {
    ((nslots as f64 * MAX_LOAD) as usize).min(nslots - 1)
}

fn zeroed(len: usize) -> Result<Vec<u64>> {
    let mut v = Vec::new();
    v.try_reserve_exact(len)
        .map_err(|_| Error::InvalidConfig(format!("cannot allocate {len} words")))?;
    v.resize(len, 0);
    Ok(v)
}

impl SlotArray {
    pub fn new(cfg: FilterConfig) -> Result<Self> {
        Self::with_tag(cfg, false)
    }

    /// A tagged array widens every slot payload by one bit that records a
    /// per-fingerprint membership flag.
    pub fn with_tag(cfg: FilterConfig, tagged: bool) -> Result<Self> {
        cfg.validate()?;
        let nslots = cfg.nslots();
        let width = cfg.rbits + tagged as u32;
        let nwords = words_for(nslots);
        // PackedInts::new allocates infallibly; probe first.
        zeroed(words_for(nslots * width as usize))?;
        Ok(Self {
            cfg,
            tagged,
            nslots,
            mask: nslots - 1,
            occupied: zeroed(nwords)?,
            runend: zeroed(nwords)?,
            extension: zeroed(nwords)?,
            offsets: vec![0; nslots.div_ceil(64)],
            payload: PackedInts::new(width, nslots),
            used: 0,
            limit: default_limit(nslots),
        })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    pub fn is_tagged(&self) -> bool {
        self.tagged
    }

    pub fn nslots(&self) -> usize {
        self.nslots
    }

    /// Slots holding a remainder, extension or counter.
    pub fn occupied_slots(&self) -> usize {
        self.used
    }

    pub fn max_occupied(&self) -> usize {
        self.limit
    }

    /// Lowers the occupied-slot cap below the default load limit.
    pub fn set_max_occupied(&mut self, limit: usize) {
        self.limit = limit.min(default_limit(self.nslots));
    }

    pub fn load_factor(&self) -> f64 {
        self.used as f64 / self.nslots as f64
    }

    pub fn is_empty(&self) -> bool {
        self.used == 0
    }

    /// Bits per slot including metadata.
    pub fn slot_bits(&self) -> u32 {
        self.cfg.rbits + self.tagged as u32 + 3
    }

    pub fn slot(&self, i: usize) -> SlotBits {
        SlotBits {
            occupied: bits::get(&self.occupied, i),
            runend: bits::get(&self.runend, i),
            extension: bits::get(&self.extension, i),
            payload: self.payload.get(i),
        }
    }

    pub fn block_offset(&self, block: usize) -> u8 {
        self.offsets[block]
    }

    pub fn nblocks(&self) -> usize {
        self.offsets.len()
    }

    // ---- navigation ----

    #[inline]
    fn phys(&self, pos: usize) -> usize {
        pos & self.mask
    }

    #[inline]
    fn is_occupied(&self, q: usize) -> bool {
        bits::get(&self.occupied, q)
    }

    #[inline]
    fn ext_at(&self, pos: usize) -> bool {
        bits::get(&self.extension, self.phys(pos))
    }

    #[inline]
    fn block_len(&self) -> usize {
        self.nslots.min(64)
    }

    /// Exact offset of `block`, recomputing saturated values.
    fn offset(&self, block: usize) -> usize {
        let o = self.offsets[block];
        if o != SATURATED {
            return o as usize;
        }
        let nb = self.offsets.len();
        let prev = if block == 0 { nb - 1 } else { block - 1 };
        let free = self.first_free(prev * 64 + 63);
        let base = if block == 0 { self.nslots } else { block * 64 };
        free.saturating_sub(base)
    }

    /// First linear position after the runs of every quotient up to and
    /// including `y` that reach into `y`'s block.
    fn first_free(&self, y: usize) -> usize {
        let block = y >> 6;
        let base = block << 6;
        let off = self.offset(block);
        let bit = y & 63;
        let word = self.occupied[block];
        let below = if bit == 63 { word } else { word & ((2u64 << bit) - 1) };
        let k = below.count_ones() as usize;
        if k == 0 {
            base + off
        } else {
            let e = self.select_runend(base + off, k);
            self.fp_end(e) + 1
        }
    }

    /// Linear start of the run for quotient `x` (or where it would start).
    fn run_start(&self, x: usize) -> usize {
        if x & 63 == 0 {
            x + self.offset(x >> 6)
        } else {
            self.first_free(x - 1).max(x)
        }
    }

    /// Linear position of the `k`-th (1-based) run-terminating remainder slot
    /// at or after `from`.
    fn select_runend(&self, from: usize, mut k: usize) -> usize {
        debug_assert!(k >= 1);
        let mut p = from;
        loop {
            let i = self.phys(p);
            let (w, bit) = (i >> 6, i & 63);
            let avail = (64 - bit).min(self.nslots - i);
            let mut word = (self.runend[w] & !self.extension[w]) >> bit;
            if avail < 64 {
                word &= low_mask(avail as u32);
            }
            let c = word.count_ones() as usize;
            if c >= k {
                return p + select_in_word(word, (k - 1) as u32) as usize;
            }
            k -= c;
            p += avail;
            debug_assert!(p < from + 2 * self.nslots, "runend select overran");
        }
    }

    /// Last linear slot of the fingerprint whose remainder sits at `pos`.
    #[inline]
    fn fp_end(&self, pos: usize) -> usize {
        let mut p = pos;
        while self.ext_at(p + 1) {
            p += 1;
        }
        p
    }

    /// First occupied quotient strictly after `after` and no later than
    /// `upto`, in linear coordinates.
    fn next_occupied_upto(&self, after: usize, upto: usize) -> Option<usize> {
        let mut p = after + 1;
        while p <= upto {
            let i = self.phys(p);
            let (w, bit) = (i >> 6, i & 63);
            let avail = (64 - bit).min(self.nslots - i);
            let mut word = self.occupied[w] >> bit;
            if avail < 64 {
                word &= low_mask(avail as u32);
            }
            if word != 0 {
                let cand = p + word.trailing_zeros() as usize;
                return (cand <= upto).then_some(cand);
            }
            p += avail;
        }
        None
    }

    fn read_cell(&self, pos: usize) -> (Cell, bool) {
        let i = self.phys(pos);
        let ext = bits::get(&self.extension, i);
        let end = bits::get(&self.runend, i);
        let kind = match (ext, end) {
            (false, _) => Kind::Remainder,
            (true, false) => Kind::Extension,
            (true, true) => Kind::Counter,
        };
        (
            Cell {
                kind,
                value: self.payload.get(i),
            },
            end && !ext,
        )
    }

    /// Decodes the run starting at `pos`, returning the linear end (exclusive).
    fn decode_run(&self, pos: usize, out: &mut Vec<Cell>) -> usize {
        let mut p = pos;
        loop {
            let (cell, last) = self.read_cell(p);
            debug_assert_eq!(cell.kind, Kind::Remainder, "run decode at {p}");
            out.push(cell);
            p += 1;
            while self.ext_at(p) {
                out.push(self.read_cell(p).0);
                p += 1;
            }
            if last {
                return p;
            }
        }
    }

    fn load_region(&self, x: usize) -> Region {
        let start = self.run_start(x);
        let mut anchor_cells = Vec::new();
        let mut pos = start;
        if self.is_occupied(x) {
            pos = self.decode_run(start, &mut anchor_cells);
        }
        let mut reg = Region {
            anchor: x,
            start,
            anchor_cells,
            cells: Vec::new(),
            runs: Vec::new(),
            last_q: x,
            decoded_end: pos,
        };
        self.decode_contiguous(&mut reg, pos);
        reg
    }

    /// Appends runs that continue the cluster at `pos`.
    fn decode_contiguous(&self, reg: &mut Region, mut pos: usize) {
        let horizon = reg.anchor + self.nslots - 1;
        while let Some(q) = self.next_occupied_upto(reg.last_q, pos.min(horizon)) {
            let a = reg.cells.len();
            pos = self.decode_run(pos, &mut reg.cells);
            reg.runs.push((q, a, reg.cells.len()));
            reg.last_q = q;
        }
        reg.decoded_end = pos;
    }

    /// Writes a rewritten region back, absorbing any following clusters the
    /// new contents collide with.
    fn commit(&mut self, mut reg: Region) {
        let (placed, new_end) = loop {
            let mut p = reg.start + reg.anchor_cells.len();
            let mut placed = Vec::with_capacity(reg.runs.len());
            for &(q, a, b) in &reg.runs {
                let st = p.max(q);
                placed.push(st);
                p = st + (b - a);
            }
            if p > reg.decoded_end {
                let horizon = (reg.anchor + self.nslots - 1).min(p - 1);
                if let Some(q) = self.next_occupied_upto(reg.last_q, horizon) {
                    self.decode_contiguous_from(&mut reg, q);
                    continue;
                }
            }
            break (placed, p);
        };
        debug_assert!(new_end - reg.anchor < self.nslots, "region wrapped onto itself");

        let clear_end = new_end.max(reg.decoded_end);
        for p in reg.start..clear_end {
            let i = self.phys(p);
            bits::set(&mut self.runend, i, false);
            bits::set(&mut self.extension, i, false);
            self.payload.set(i, 0);
        }

        // (linear quotient, start, end exclusive) of every written run
        let mut layout = Vec::with_capacity(reg.runs.len() + 1);
        if !reg.anchor_cells.is_empty() {
            self.write_run(reg.start, &reg.anchor_cells);
            layout.push((reg.anchor, reg.start, reg.start + reg.anchor_cells.len()));
        }
        bits::set(&mut self.occupied, reg.anchor, !reg.anchor_cells.is_empty());
        for (&(q, a, b), &st) in reg.runs.iter().zip(&placed) {
            let cells = &reg.cells[a..b];
            self.write_run(st, cells);
            layout.push((q, st, st + cells.len()));
        }

        // Earlier runs end exactly at the region start when they reach it.
        let blk = self.block_len();
        let mut base = (reg.anchor / blk + 1) * blk;
        let mut idx = 0;
        let mut cover = reg.start;
        while base < clear_end {
            while idx < layout.len() && layout[idx].0 < base {
                cover = layout[idx].2;
                idx += 1;
            }
            let off = cover.saturating_sub(base);
            let block = self.phys(base) >> 6;
            self.offsets[block] = off.min(SATURATED as usize) as u8;
            base += blk;
        }
    }

    fn decode_contiguous_from(&self, reg: &mut Region, q: usize) {
        let a = reg.cells.len();
        let pos = self.decode_run(q, &mut reg.cells);
        reg.runs.push((q, a, reg.cells.len()));
        reg.last_q = q;
        self.decode_contiguous(reg, pos);
    }

    fn write_run(&mut self, start: usize, cells: &[Cell]) {
        let last_rem = cells
            .iter()
            .rposition(|c| c.kind == Kind::Remainder)
            .expect("run without remainder");
        for (k, c) in cells.iter().enumerate() {
            let i = self.phys(start + k);
            self.payload.set(i, c.value);
            match c.kind {
                Kind::Remainder => bits::set(&mut self.runend, i, k == last_rem),
                Kind::Extension => bits::set(&mut self.extension, i, true),
                Kind::Counter => {
                    bits::set(&mut self.extension, i, true);
                    bits::set(&mut self.runend, i, true);
                }
            }
        }
    }

    // ---- fingerprint encoding ----

    fn check_fp(&self, fp: &Fingerprint) -> Result<()> {
        let rmask = self.cfg.remainder_mask();
        if fp.quotient as usize >= self.nslots
            || fp.remainder > rmask
            || fp.ext.iter().any(|&c| c > rmask)
        {
            return Err(Error::InvalidParams(format!(
                "fingerprint does not fit q={} r={}",
                self.cfg.qbits, self.cfg.rbits
            )));
        }
        if fp.count == 0 {
            return Err(Error::InvalidParams("count must be at least 1".into()));
        }
        if fp.tag && !self.tagged {
            return Err(Error::InvalidParams("tag on an untagged array".into()));
        }
        Ok(())
    }

    fn encode_fp(&self, fp: &Fingerprint) -> Vec<Cell> {
        let mut cells = Vec::with_capacity(1 + fp.ext.len());
        cells.push(Cell {
            kind: Kind::Remainder,
            value: fp.remainder | ((fp.tag as u64) << self.cfg.rbits),
        });
        cells.extend(fp.ext.iter().map(|&value| Cell {
            kind: Kind::Extension,
            value,
        }));
        cells.extend(
            counter_digits(fp.count, self.cfg.rbits)
                .into_iter()
                .map(|value| Cell {
                    kind: Kind::Counter,
                    value,
                }),
        );
        cells
    }

    fn spans(cells: &[Cell]) -> Vec<Span> {
        let mut out: Vec<Span> = Vec::new();
        for (i, c) in cells.iter().enumerate() {
            match c.kind {
                Kind::Remainder => out.push(Span {
                    start: i,
                    ext_end: i + 1,
                    end: i + 1,
                }),
                Kind::Extension => {
                    let s = out.last_mut().expect("extension before remainder");
                    s.ext_end = i + 1;
                    s.end = i + 1;
                }
                Kind::Counter => out.last_mut().expect("counter before remainder").end = i + 1,
            }
        }
        out
    }

    #[inline]
    fn remainder_of(&self, c: &Cell) -> u64 {
        c.value & self.cfg.remainder_mask()
    }

    fn find_member(&self, cells: &[Cell], id: MinirunId, rank: usize) -> Result<Span> {
        Self::spans(cells)
            .into_iter()
            .filter(|s| self.remainder_of(&cells[s.start]) == id.remainder)
            .nth(rank)
            .ok_or(Error::NotFound { id, rank })
    }

    fn decode_span(&self, quotient: u64, cells: &[Cell], s: Span) -> Fingerprint {
        let head = cells[s.start].value;
        Fingerprint {
            quotient,
            remainder: head & self.cfg.remainder_mask(),
            ext: cells[s.start + 1..s.ext_end].iter().map(|c| c.value).collect(),
            count: counter_value(cells[s.ext_end..s.end].iter().map(|c| c.value), self.cfg.rbits),
            tag: self.tagged && (head >> self.cfg.rbits) & 1 == 1,
        }
    }

    /// Rewrites the run of `quotient` through `edit`, enforcing the load cap.
    fn edit_run<T>(
        &mut self,
        quotient: u64,
        edit: impl FnOnce(&Self, &mut Vec<Cell>) -> Result<T>,
    ) -> Result<T> {
        if quotient as usize >= self.nslots {
            return Err(Error::InvalidParams(format!("quotient {quotient} out of range")));
        }
        let mut reg = self.load_region(quotient as usize);
        let old = reg.anchor_cells.len();
        let out = edit(self, &mut reg.anchor_cells)?;
        let new = reg.anchor_cells.len();
        if new > old && self.used + (new - old) > self.limit {
            return Err(Error::FilterFull {
                used: self.used,
                limit: self.limit,
                needed: new - old,
            });
        }
        self.used = self.used + new - old;
        self.commit(reg);
        Ok(out)
    }

    fn ensure_room(&self, needed: usize) -> Result<()> {
        if self.used + needed > self.limit {
            Err(Error::FilterFull {
                used: self.used,
                limit: self.limit,
                needed,
            })
        } else {
            Ok(())
        }
    }

    // ---- public operations ----

    /// Physical slot range of the run for `quotient`, in linear positions.
    pub fn find_run(&self, quotient: u64) -> Option<RangeInclusive<usize>> {
        let x = quotient as usize;
        if x >= self.nslots || !self.is_occupied(x) {
            return None;
        }
        let start = self.run_start(x);
        let end = self.select_runend(start, 1);
        Some(start..=self.fp_end(end))
    }

    /// Inserts `fp` at the end of its minirun and returns its rank.
    pub fn insert_fp(&mut self, fp: &Fingerprint) -> Result<usize> {
        self.check_fp(fp)?;
        let new_cells = self.encode_fp(fp);
        self.ensure_room(new_cells.len())?;
        self.edit_run(fp.quotient, |arr, cells| {
            let spans = Self::spans(cells);
            let mut rank = 0;
            let mut at = cells.len();
            for s in &spans {
                let rem = arr.remainder_of(&cells[s.start]);
                if rem == fp.remainder {
                    rank += 1;
                } else if rem > fp.remainder {
                    at = s.start;
                    break;
                }
            }
            cells.splice(at..at, new_cells);
            Ok(rank)
        })
    }

    pub fn query_fp<S: BitSource + ?Sized>(&self, stream: &S) -> QueryResult {
        self.query_from(stream, 0)
    }

    /// First fingerprint at rank `>= min_rank` of the stream's minirun that
    /// prefixes the stream.
    pub fn query_from<S: BitSource + ?Sized>(&self, stream: &S, min_rank: usize) -> QueryResult {
        let (q, rem) = split(stream, &self.cfg);
        let x = q as usize;
        if !self.is_occupied(x) {
            return QueryResult::Negative;
        }
        let rmask = self.cfg.remainder_mask();
        let mut p = self.run_start(x);
        let mut rank = 0;
        loop {
            let i = self.phys(p);
            let head = self.payload.get(i);
            let last = bits::get(&self.runend, i);
            let r0 = head & rmask;
            if r0 > rem {
                return QueryResult::Negative;
            }
            p += 1;
            if r0 == rem && rank >= min_rank {
                let mut chunks = 0;
                let mut matched = true;
                while self.ext_at(p) {
                    let j = self.phys(p);
                    if !bits::get(&self.runend, j) {
                        if matched && self.payload.get(j) != extension_chunk(stream, &self.cfg, chunks) {
                            matched = false;
                        }
                        chunks += 1;
                    }
                    p += 1;
                }
                if matched {
                    return QueryResult::Positive {
                        rank,
                        ext_len: chunks,
                        tag: self.tagged && (head >> self.cfg.rbits) & 1 == 1,
                    };
                }
            } else {
                while self.ext_at(p) {
                    p += 1;
                }
            }
            if r0 == rem {
                rank += 1;
            }
            if last {
                return QueryResult::Negative;
            }
        }
    }

    /// Reads the fingerprints of the run for `quotient`.
    fn read_run(&self, quotient: u64) -> Vec<Cell> {
        let mut cells = Vec::new();
        let x = quotient as usize;
        if x < self.nslots && self.is_occupied(x) {
            self.decode_run(self.run_start(x), &mut cells);
        }
        cells
    }

    pub fn fingerprint(&self, id: MinirunId, rank: usize) -> Result<Fingerprint> {
        let cells = self.read_run(id.quotient);
        let s = self.find_member(&cells, id, rank)?;
        Ok(self.decode_span(id.quotient, &cells, s))
    }

    pub fn minirun_len(&self, id: MinirunId) -> usize {
        let cells = self.read_run(id.quotient);
        cells
            .iter()
            .filter(|c| c.kind == Kind::Remainder && self.remainder_of(c) == id.remainder)
            .count()
    }

    /// Fingerprints of one minirun in rank order.
    pub fn minirun(&self, id: MinirunId) -> Vec<Fingerprint> {
        let cells = self.read_run(id.quotient);
        Self::spans(&cells)
            .into_iter()
            .filter(|s| self.remainder_of(&cells[s.start]) == id.remainder)
            .map(|s| self.decode_span(id.quotient, &cells, s))
            .collect()
    }

    /// Appends extension chunks to a fingerprint; returns its new extension count.
    pub fn extend_fp(&mut self, id: MinirunId, rank: usize, chunks: &[u64]) -> Result<usize> {
        if chunks.iter().any(|&c| c > self.cfg.remainder_mask()) {
            return Err(Error::InvalidParams("extension chunk wider than r".into()));
        }
        self.ensure_room(chunks.len())?;
        self.edit_run(id.quotient, |arr, cells| {
            let s = arr.find_member(cells, id, rank)?;
            let new = chunks.iter().map(|&value| Cell {
                kind: Kind::Extension,
                value,
            });
            cells.splice(s.ext_end..s.ext_end, new);
            Ok(s.ext_end - s.start - 1 + chunks.len())
        })
    }

    /// Drops extension chunks beyond the first `len`; returns the number removed.
    pub fn truncate_ext(&mut self, id: MinirunId, rank: usize, len: usize) -> Result<usize> {
        self.edit_run(id.quotient, |arr, cells| {
            let s = arr.find_member(cells, id, rank)?;
            let keep = s.start + 1 + len;
            if keep >= s.ext_end {
                return Ok(0);
            }
            cells.drain(keep..s.ext_end);
            Ok(s.ext_end - keep)
        })
    }

    pub fn get_count(&self, id: MinirunId, rank: usize) -> Result<u64> {
        Ok(self.fingerprint(id, rank)?.count)
    }

    pub fn set_count(&mut self, id: MinirunId, rank: usize, count: u64) -> Result<()> {
        if count == 0 {
            return Err(Error::InvalidParams("count must be at least 1".into()));
        }
        let digits = counter_digits(count, self.cfg.rbits);
        self.edit_run(id.quotient, |arr, cells| {
            let s = arr.find_member(cells, id, rank)?;
            let new = digits.iter().map(|&value| Cell {
                kind: Kind::Counter,
                value,
            });
            cells.splice(s.ext_end..s.end, new);
            Ok(())
        })
    }

    pub fn remove_fp(&mut self, id: MinirunId, rank: usize) -> Result<Fingerprint> {
        self.edit_run(id.quotient, |arr, cells| {
            let s = arr.find_member(cells, id, rank)?;
            let fp = arr.decode_span(id.quotient, cells, s);
            cells.drain(s.start..s.end);
            Ok(fp)
        })
    }

    /// Every stored fingerprint, ordered by quotient, remainder, then rank.
    pub fn fingerprints(&self) -> Vec<Fingerprint> {
        let mut out = Vec::new();
        let mut cells = Vec::new();
        for (w, &word) in self.occupied.iter().enumerate() {
            let mut word = word;
            while word != 0 {
                let x = w * 64 + word.trailing_zeros() as usize;
                word &= word - 1;
                cells.clear();
                self.decode_run(self.run_start(x), &mut cells);
                out.extend(
                    Self::spans(&cells)
                        .into_iter()
                        .map(|s| self.decode_span(x as u64, &cells, s)),
                );
            }
        }
        out
    }

    /// Placement of every run, ordered by quotient.
    pub fn layout(&self) -> Vec<RunLayout> {
        (0..self.nslots as u64)
            .filter_map(|q| {
                self.find_run(q).map(|r| RunLayout {
                    quotient: q,
                    start: *r.start(),
                    end: *r.end(),
                })
            })
            .collect()
    }

    pub fn space_report(&self) -> SpaceReport {
        let n = self.nslots as u64;
        let width = (self.cfg.rbits + self.tagged as u32) as u64;
        let offset_bits = n * 8 / 64;
        let metadata_bits = 3 * n + offset_bits;
        let remainder_bits = n * width;
        let total_bits = metadata_bits + remainder_bits + HEADER_BITS;
        let (mut extension_slots, mut counter_slots) = (0u64, 0u64);
        for (e, r) in self.extension.iter().zip(&self.runend) {
            extension_slots += (e & !r).count_ones() as u64;
            counter_slots += (e & r).count_ones() as u64;
        }
        let items = self.used as u64 - extension_slots - counter_slots;
        SpaceReport {
            total_bits,
            metadata_bits,
            remainder_bits,
            extension_slots,
            counter_slots,
            items,
            load_factor: self.load_factor(),
            bits_per_item: if items == 0 {
                0.0
            } else {
                total_bits as f64 / items as f64
            },
        }
    }

    /// Builds an array from fingerprints sorted by `(quotient, remainder)` in
    /// one placement pass. Equal ids keep input order as their minirun ranks.
    pub fn bulk_load<I>(cfg: FilterConfig, tagged: bool, fps: I) -> Result<Self>
    where
        I: IntoIterator<Item = Fingerprint>,
    {
        let mut arr = Self::with_tag(cfg, tagged)?;
        let mut cells: Vec<Cell> = Vec::new();
        let mut runs: Vec<(usize, usize, usize)> = Vec::new();
        let mut prev: Option<(u64, u64)> = None;
        for (idx, fp) in fps.into_iter().enumerate() {
            arr.check_fp(&fp)?;
            let key = (fp.quotient, fp.remainder);
            if prev.is_some_and(|p| key < p) {
                return Err(Error::UnsortedInput(idx));
            }
            prev = Some(key);
            let enc = arr.encode_fp(&fp);
            if cells.len() + enc.len() > arr.limit {
                return Err(Error::FilterFull {
                    used: cells.len(),
                    limit: arr.limit,
                    needed: enc.len(),
                });
            }
            let q = fp.quotient as usize;
            if runs.last().map(|r| r.0) != Some(q) {
                runs.push((q, cells.len(), cells.len()));
            }
            cells.extend(enc);
            runs.last_mut().unwrap().2 = cells.len();
        }

        // Runs past the end wrap into the front; push the front back until
        // the spill fits.
        let n = arr.nslots;
        let mut front = 0;
        let starts = loop {
            let mut p = front;
            let starts: Vec<usize> = runs
                .iter()
                .map(|&(q, a, b)| {
                    let st = p.max(q);
                    p = st + (b - a);
                    st
                })
                .collect();
            let spill = p.saturating_sub(n);
            if spill <= front {
                break starts;
            }
            front = spill;
        };

        let mut layout = Vec::with_capacity(runs.len());
        for (&(q, a, b), &st) in runs.iter().zip(&starts) {
            arr.write_run(st, &cells[a..b]);
            bits::set(&mut arr.occupied, q, true);
            layout.push((q, st, st + (b - a)));
        }
        arr.used = cells.len();
        arr.offsets = offsets_from_layout(n, &layout);
        Ok(arr)
    }

    // ---- snapshots ----

    /// Serializes to the `AQF1` format. The tag flag is not part of this
    /// format; tagged arrays are wrapped by a container that records it.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(SNAPSHOT_MAGIC);
        w.u32(SNAPSHOT_VERSION);
        w.u8(self.cfg.qbits as u8);
        w.u8(self.cfg.rbits as u8);
        w.u64(self.cfg.seed);
        w.u64(self.used as u64);
        w.words(&self.occupied);
        w.words(&self.runend);
        w.words(&self.extension);
        w.blob(&self.offsets);
        w.words(self.payload.words());
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_bytes_tagged(bytes, false)
    }

    pub fn from_bytes_tagged(bytes: &[u8], tagged: bool) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(SNAPSHOT_MAGIC)?;
        let version = r.u32()?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let qbits = r.u8()? as u32;
        let rbits = r.u8()? as u32;
        let seed = r.u64()?;
        let cfg = FilterConfig::new(qbits, rbits, seed)?;
        let mut arr = Self::with_tag(cfg, tagged)?;
        let used = r.u64()? as usize;
        if used >= arr.nslots {
            return Err(Error::Format(format!("occupied count {used} exceeds array")));
        }
        let nwords = words_for(arr.nslots);
        arr.occupied = r.words(nwords)?;
        arr.runend = r.words(nwords)?;
        arr.extension = r.words(nwords)?;
        let offsets = r.blob()?;
        if offsets.len() != arr.offsets.len() {
            return Err(Error::Format("block offset length mismatch".into()));
        }
        arr.offsets.copy_from_slice(offsets);
        let width = rbits + tagged as u32;
        let payload = r.words(words_for(arr.nslots * width as usize))?;
        arr.payload = PackedInts::from_words(width, arr.nslots, payload)
            .ok_or_else(|| Error::Format("payload length mismatch".into()))?;
        r.finish()?;
        arr.used = used;
        Ok(arr)
    }
}

/// Block offsets for a complete placement given as
/// `(quotient, linear start, linear end exclusive)` runs.
fn offsets_from_layout(nslots: usize, runs: &[(usize, usize, usize)]) -> Vec<u8> {
    let blk = nslots.min(64);
    let mut offsets = vec![0u8; nslots.div_ceil(64)];
    for &(q, _, end) in runs {
        let mut base = (q / blk + 1) * blk;
        while base < end {
            let block = (base % nslots) >> 6;
            let off = (end - base).min(SATURATED as usize) as u8;
            offsets[block] = offsets[block].max(off);
            base += blk;
        }
    }
    offsets
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fingerprint::HashStream;

    fn cfg(q: u32, r: u32) -> FilterConfig {
        FilterConfig::new(q, r, 9).unwrap()
    }

    fn fp(q: u64, rem: u64) -> Fingerprint {
        Fingerprint {
            quotient: q,
            remainder: rem,
            ext: vec![],
            count: 1,
            tag: false,
        }
    }

    fn id(q: u64, rem: u64) -> MinirunId {
        MinirunId {
            quotient: q,
            remainder: rem,
        }
    }

    #[test]
    fn fresh_array_space() {
        let a = SlotArray::new(cfg(4, 4)).unwrap();
        let s = a.space_report();
        assert_eq!(s.total_bits, 16 * 7 + 2 + HEADER_BITS);
        assert_eq!(a.nslots(), 16);
        let a = SlotArray::new(cfg(20, 9)).unwrap();
        assert_eq!(
            a.space_report().total_bits,
            (1 << 20) * 12 + (1 << 14) * 8 + HEADER_BITS
        );
        assert!(matches!(
            SlotArray::new(FilterConfig { qbits: 0, rbits: 4, seed: 0 }),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn canonical_placement_and_append() {
        let mut a = SlotArray::new(cfg(4, 4)).unwrap();
        assert_eq!(a.find_run(3), None);
        assert_eq!(a.insert_fp(&fp(3, 0xA)).unwrap(), 0);
        assert_eq!(a.find_run(3), Some(3..=3));
        let s = a.slot(3);
        assert!(s.occupied && s.runend && !s.extension);
        assert_eq!(s.payload, 0xA);
        assert_eq!(a.insert_fp(&fp(3, 0xA)).unwrap(), 1);
        assert_eq!(a.find_run(3), Some(3..=4));
        assert!(!a.slot(3).runend && a.slot(4).runend);
        assert_eq!(a.slot(4).payload, 0xA);
    }

    #[test]
    fn extension_and_counter_slots() {
        let mut a = SlotArray::new(cfg(4, 4)).unwrap();
        a.insert_fp(&fp(5, 3)).unwrap();
        assert_eq!(a.extend_fp(id(5, 3), 0, &[7]).unwrap(), 1);
        assert_eq!(a.find_run(5), Some(5..=6));
        let s = a.slot(6);
        assert!(s.extension && !s.runend && s.payload == 7);

        a.set_count(id(5, 3), 0, 2).unwrap();
        assert_eq!(a.find_run(5), Some(5..=7));
        let c = a.slot(7);
        assert!(c.extension && c.runend && c.payload == 1);
        assert_eq!(a.get_count(id(5, 3), 0).unwrap(), 2);
        a.set_count(id(5, 3), 0, 1).unwrap();
        assert_eq!(a.find_run(5), Some(5..=6));
        assert_eq!(a.get_count(id(5, 3), 0).unwrap(), 1);
    }

    #[test]
    fn counter_roundtrip_many() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand::rngs::StdRng::seed_from_u64(3);
        for r in [4u32, 9] {
            let mut a = SlotArray::new(cfg(6, r)).unwrap();
            a.insert_fp(&fp(10, 1)).unwrap();
            for _ in 0..10_000 {
                let c = rng.random_range(1..=1u64 << 20);
                a.set_count(id(10, 1), 0, c).unwrap();
                assert_eq!(a.get_count(id(10, 1), 0).unwrap(), c);
                let slots = if c == 1 { 0 } else { (64 - (c - 1).leading_zeros()).div_ceil(r) };
                assert_eq!(a.occupied_slots(), 1 + slots as usize);
            }
        }
    }

    #[test]
    fn remove_middle_of_minirun() {
        let mut a = SlotArray::new(cfg(5, 4)).unwrap();
        for e in 1..=3 {
            a.insert_fp(&fp(2, 9)).unwrap();
            a.extend_fp(id(2, 9), e - 1, &[e as u64]).unwrap();
        }
        let removed = a.remove_fp(id(2, 9), 1).unwrap();
        assert_eq!(removed.ext, vec![2]);
        let left: Vec<_> = a.minirun(id(2, 9)).into_iter().map(|f| f.ext).collect();
        assert_eq!(left, vec![vec![1], vec![3]]);
    }

    #[test]
    fn insert_remove_restores_empty() {
        let mut a = SlotArray::new(cfg(6, 5)).unwrap();
        let empty = a.clone();
        a.insert_fp(&fp(63, 4)).unwrap();
        a.insert_fp(&fp(63, 2)).unwrap();
        a.insert_fp(&fp(0, 1)).unwrap();
        assert_eq!(a.find_run(63), Some(63..=64));
        assert_eq!(a.find_run(0), Some(1..=1));
        a.remove_fp(id(63, 2), 0).unwrap();
        a.remove_fp(id(0, 1), 0).unwrap();
        a.remove_fp(id(63, 4), 0).unwrap();
        assert_eq!(a, empty);
        assert!(matches!(a.remove_fp(id(1, 1), 0), Err(Error::NotFound { .. })));
    }

    #[test]
    fn query_finds_first_prefix_match() {
        let c = cfg(8, 4);
        let mut a = SlotArray::new(c).unwrap();
        assert_eq!(a.query_fp(&HashStream::new(1, 9)), QueryResult::Negative);
        let s = HashStream::new(77, c.seed);
        a.insert_fp(&Fingerprint::baseline(&s, &c)).unwrap();
        assert_eq!(
            a.query_fp(&s),
            QueryResult::Positive { rank: 0, ext_len: 0, tag: false }
        );
        let chunk = extension_chunk(&s, &c, 0);
        a.extend_fp(MinirunId::of(&s, &c), 0, &[chunk]).unwrap();
        assert_eq!(
            a.query_fp(&s),
            QueryResult::Positive { rank: 0, ext_len: 1, tag: false }
        );
    }

    #[test]
    fn full_array_rejects_insert() {
        let mut a = SlotArray::new(cfg(3, 4)).unwrap();
        assert_eq!(a.max_occupied(), 7);
        for i in 0..7 {
            a.insert_fp(&fp(i % 8, 1)).unwrap();
        }
        assert!(matches!(a.insert_fp(&fp(0, 2)), Err(Error::FilterFull { .. })));
    }

    #[test]
    fn bulk_load_wraps_spill() {
        let c = cfg(4, 4);
        let fps: Vec<_> = [(13, 1), (14, 1), (14, 2), (15, 0), (15, 3), (0, 5), (1, 1)]
            .iter()
            .map(|&(q, r)| fp(q, r))
            .collect();
        let mut sorted = fps.clone();
        sorted.sort_by_key(|f| (f.quotient, f.remainder));
        let bulk = SlotArray::bulk_load(c, false, sorted.clone()).unwrap();
        let mut seq = SlotArray::new(c).unwrap();
        for f in &fps {
            seq.insert_fp(f).unwrap();
        }
        assert_eq!(bulk.fingerprints(), seq.fingerprints());
        assert_eq!(bulk, seq);
        let unsorted = vec![fp(3, 1), fp(2, 1)];
        assert!(matches!(
            SlotArray::bulk_load(c, false, unsorted),
            Err(Error::UnsortedInput(1))
        ));
    }

    #[test]
    fn snapshot_roundtrip() {
        let c = cfg(7, 5);
        let mut a = SlotArray::new(c).unwrap();
        for k in 0..60u64 {
            let s = HashStream::new(k, c.seed);
            a.insert_fp(&Fingerprint::baseline(&s, &c)).unwrap();
        }
        let bytes = a.to_bytes();
        let b = SlotArray::from_bytes(&bytes).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.to_bytes(), bytes);
        assert!(SlotArray::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(SlotArray::from_bytes(&bad), Err(Error::Format(_))));
    }
}

#[cfg(test)]
mod oracle_tests {
    use super::*;
    use crate::fingerprint::HashStream;
    use crate::testing::{check_invariants, decode_fingerprints};

    #[test]
    fn sequential_inserts_match_decoder() {
        for q in [6u32, 8, 10] {
            let c = FilterConfig::new(q, 5, 8).unwrap();
            let mut a = SlotArray::new(c).unwrap();
            let mut expect = Vec::new();
            for k in 0..a.max_occupied() as u64 {
                let fp = Fingerprint::baseline(&HashStream::new(k, 8), &c);
                a.insert_fp(&fp).unwrap();
                expect.push(fp);
                check_invariants(&a);
                let mut e = expect.clone();
                e.sort_by_key(|f| (f.quotient, f.remainder));
                assert_eq!(decode_fingerprints(&a), e, "q={q} after key {k}");
            }
        }
    }
}
