//! Whole-filter operations: merge, bulk load and rebuild.

use crate::error::{Error, Result};
use crate::filter::{AdaptiveFilter, Policy};
use crate::fingerprint::{FilterConfig, Fingerprint, HashStream, MinirunId, MAX_QBITS};
use crate::reverse_map::{MapEntry, ReverseMap};
use crate::slots::SlotArray;

/// Load above which a merge doubles the table.
pub const MERGE_GROW_LOAD: f64 = 0.90;

fn assemble(
    cfg: FilterConfig,
    tagged: bool,
    policy: Policy,
    items: Vec<(Fingerprint, MapEntry)>,
) -> Result<AdaptiveFilter> {
    let arr = SlotArray::bulk_load(cfg, tagged, items.iter().map(|(fp, _)| fp.clone()))?;
    let map = ReverseMap::from_entries(cfg.qbits, items.into_iter().map(|(fp, e)| (fp.id(), e)));
    Ok(AdaptiveFilter::from_parts(arr, map, policy))
}

/// Merges two filters built with the same configuration. Equal minirun IDs
/// keep `a`'s entries ahead of `b`'s. When the combined load would exceed
/// [`MERGE_GROW_LOAD`] the output takes one more quotient bit; fingerprints
/// are then re-sliced from their owners' hashes with the same number of
/// extension chunks, so every prior correction still holds.
pub fn merge(a: &AdaptiveFilter, b: &AdaptiveFilter) -> Result<AdaptiveFilter> {
    let cfg = *a.config();
    if cfg != *b.config() || a.slots().is_tagged() != b.slots().is_tagged() {
        return Err(Error::ConfigMismatch);
    }
    let tagged = a.slots().is_tagged();
    let used = a.slots().occupied_slots() + b.slots().occupied_slots();
    let ea = a.entries()?;
    let eb = b.entries()?;

    if (used as f64) <= MERGE_GROW_LOAD * cfg.nslots() as f64 {
        let mut out = Vec::with_capacity(ea.len() + eb.len());
        let (mut ia, mut ib) = (ea.into_iter().peekable(), eb.into_iter().peekable());
        loop {
            let take_a = match (ia.peek(), ib.peek()) {
                (Some((fa, _)), Some((fb, _))) => fa.id() <= fb.id(),
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => break,
            };
            out.push(if take_a { ia.next() } else { ib.next() }.unwrap());
        }
        return assemble(cfg, tagged, *a.policy(), out);
    }

    if cfg.qbits + 1 > MAX_QBITS || cfg.qbits + 1 + cfg.rbits > 64 {
        return Err(Error::FilterFull {
            used,
            limit: a.slots().max_occupied(),
            needed: 0,
        });
    }
    let wide = FilterConfig::new(cfg.qbits + 1, cfg.rbits, cfg.seed)?;
    let mut out: Vec<(Fingerprint, MapEntry)> = ea
        .into_iter()
        .chain(eb)
        .map(|(fp, e)| {
            let s = HashStream::new(e.key, cfg.seed);
            let mut wfp = Fingerprint::with_extensions(&s, &wide, fp.ext.len());
            wfp.count = fp.count;
            wfp.tag = fp.tag;
            (wfp, e)
        })
        .collect();
    out.sort_by_key(|(fp, _)| fp.id());
    assemble(wide, tagged, *a.policy(), out)
}

/// Sorts `(key, value)` items by the minirun ID of their baseline fingerprint
/// under `cfg`, the order [`bulk_load`] expects. Equal IDs keep input order.
pub fn sort_by_hash(items: &mut [(u64, Option<Vec<u8>>)], cfg: &FilterConfig) {
    items.sort_by_cached_key(|(k, _)| MinirunId::of(&HashStream::new(*k, cfg.seed), cfg));
}

/// Builds a filter from items already sorted by hash in one placement pass.
/// With `policy.dedupe_keys`, repeated keys become counts.
pub fn bulk_load<I>(items: I, cfg: FilterConfig, policy: Policy) -> Result<AdaptiveFilter>
where
    I: IntoIterator<Item = (u64, Option<Vec<u8>>)>,
{
    cfg.validate()?;
    let mut out: Vec<(Fingerprint, MapEntry)> = Vec::new();
    // start of the current minirun within `out`
    let mut group = 0;
    for (idx, (key, value)) in items.into_iter().enumerate() {
        let fp = Fingerprint::baseline(&HashStream::new(key, cfg.seed), &cfg);
        if let Some((last, _)) = out.last() {
            match fp.id().cmp(&last.id()) {
                std::cmp::Ordering::Less => return Err(Error::UnsortedInput(idx)),
                std::cmp::Ordering::Greater => group = out.len(),
                std::cmp::Ordering::Equal => {}
            }
        }
        if policy.dedupe_keys {
            if let Some((dup, e)) = out[group..].iter_mut().find(|(_, e)| e.key == key) {
                dup.count += 1;
                if value.is_some() {
                    e.value = value;
                }
                continue;
            }
        }
        out.push((fp, MapEntry { key, value }));
    }
    assemble(cfg, false, policy, out)
}

/// Re-inserts every stored key under `new_seed` with an unextended
/// fingerprint, keeping counts, values, membership tags and table geometry.
pub fn rebuild(f: &AdaptiveFilter, new_seed: u64) -> Result<AdaptiveFilter> {
    let old = *f.config();
    let cfg = FilterConfig::new(old.qbits, old.rbits, new_seed)?;
    let mut items: Vec<(Fingerprint, MapEntry)> = f
        .entries()?
        .into_iter()
        .map(|(fp, e)| {
            let mut nfp = Fingerprint::baseline(&HashStream::new(e.key, new_seed), &cfg);
            nfp.count = fp.count;
            nfp.tag = fp.tag;
            (nfp, e)
        })
        .collect();
    items.sort_by_key(|(fp, _)| fp.id());
    let mut out = assemble(cfg, f.slots().is_tagged(), *f.policy(), items)?;
    out.set_max_occupied(f.slots().max_occupied());
    Ok(out)
}
