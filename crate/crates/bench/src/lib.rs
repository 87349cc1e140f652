//! Deterministic fixtures shared by the benchmarks.

use aqf_core::{bulk_load, fmix64, sort_by_hash, AdaptiveFilter, FilterConfig, Policy, MAX_LOAD};

/// `n` distinct pseudo-random keys; different `stream`s never overlap.
pub fn keys(n: usize, stream: u64) -> Vec<u64> {
    (0..n as u64).map(|i| fmix64(i ^ (stream << 40))).collect()
}

/// Keys that fill a `2^qbits` table to `load` (capped at the load limit).
pub fn fill_keys(qbits: u32, load: f64, stream: u64) -> Vec<u64> {
    let n = ((1u64 << qbits) as f64 * load.min(MAX_LOAD)) as usize;
    keys(n, stream)
}

/// Value-less items in the order `bulk_load` expects.
pub fn sorted_items(keys: &[u64], cfg: &FilterConfig) -> Vec<(u64, Option<Vec<u8>>)> {
    let mut items: Vec<_> = keys.iter().map(|&k| (k, None)).collect();
    sort_by_hash(&mut items, cfg);
    items
}

pub fn filled(qbits: u32, rbits: u32, load: f64, policy: Policy) -> (AdaptiveFilter, Vec<u64>) {
    let cfg = FilterConfig::new(qbits, rbits, 1).expect("valid config");
    let ks = fill_keys(qbits, load, 0);
    let f = bulk_load(sorted_items(&ks, &cfg), cfg, policy).expect("fits");
    (f, ks)
}
