//! Prefilled filters, instantaneous-FPR measurement, adaptation traces and churn.

use std::collections::HashSet;
use std::time::Instant;

use aqf_core::{bulk_load, sort_by_hash, AdaptiveFilter, FilterConfig, Policy};
use anyhow::{bail, ensure};
use rand::rngs::StdRng;
use rand::seq::index;
use rand::{Rng, SeedableRng};

use crate::report::TraceRow;
use crate::workload::{Dist, KeyGen};

/// A filter together with the exact set of keys it stores.
pub struct Prefilled {
    pub filter: AdaptiveFilter,
    pub keys: Vec<u64>,
    pub stored: HashSet<u64>,
}

impl Prefilled {
    /// Fills a fresh filter to `load` of its slots with distinct uniform keys.
    pub fn uniform(cfg: FilterConfig, policy: Policy, load: f64, seed: u64) -> anyhow::Result<Self> {
        ensure!(load > 0.0 && load <= 1.0, "load must lie in (0, 1], got {load}");
        let n = ((cfg.nslots() as f64 * load) as usize).min(AdaptiveFilter::new(cfg)?.slots().max_occupied());
        let mut rng = StdRng::seed_from_u64(seed);
        let mut stored = HashSet::with_capacity(n);
        let mut keys = Vec::with_capacity(n);
        while keys.len() < n {
            let k = rng.random();
            if stored.insert(k) {
                keys.push(k);
            }
        }
        Self::from_keys(cfg, policy, keys)
    }

    /// Bulk-loads `keys`; duplicates are dropped.
    pub fn from_keys(cfg: FilterConfig, policy: Policy, keys: Vec<u64>) -> anyhow::Result<Self> {
        let mut stored = HashSet::with_capacity(keys.len());
        let keys: Vec<u64> = keys.into_iter().filter(|k| stored.insert(*k)).collect();
        let mut items: Vec<(u64, Option<Vec<u8>>)> = keys.iter().map(|&k| (k, None)).collect();
        sort_by_hash(&mut items, &cfg);
        let filter = bulk_load(items, cfg, policy)?;
        Ok(Self { filter, keys, stored })
    }

    /// Number of stored keys that the filter does not report.
    pub fn false_negatives(&self) -> usize {
        self.keys.iter().filter(|&&k| !self.filter.may_contain(k)).count()
    }

    /// Extension and counter bits per stored item.
    pub fn extra_bits_per_item(&self) -> f64 {
        let rep = self.filter.space_report();
        if rep.items == 0 {
            return 0.0;
        }
        let slot = self.filter.slots().slot_bits() as f64;
        (rep.extension_slots + rep.counter_slots) as f64 * slot / rep.items as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub sets: usize,
    pub size: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            sets: 20,
            size: 100_000,
        }
    }
}

/// Mean false-positive fraction over independent probe sets drawn from
/// `probes`, with the filter frozen. Stored keys are excluded.
pub fn instantaneous_fpr(p: &Prefilled, probes: &mut KeyGen, cfg: ProbeConfig) -> f64 {
    let mut total = 0.0;
    for _ in 0..cfg.sets {
        let (mut neg, mut fp) = (0u64, 0u64);
        for _ in 0..cfg.size {
            let k = probes.next_key();
            if p.stored.contains(&k) {
                continue;
            }
            neg += 1;
            fp += p.filter.may_contain(k) as u64;
        }
        if neg > 0 {
            total += fp as f64 / neg as f64;
        }
    }
    total / cfg.sets.max(1) as f64
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceConfig {
    pub dist: Dist,
    /// Adapting queries to run.
    pub queries: u64,
    pub measure_every_pct: f64,
    pub probe: ProbeConfig,
    /// Fixes the zipfian rank-to-key mapping.
    pub universe_seed: u64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChurnConfig {
    pub interval_pct: f64,
    /// Fraction of live items replaced per event.
    pub replace_pct: f64,
    pub seed: u64,
}

impl ChurnConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        ensure!(
            self.interval_pct > 0.0 && self.interval_pct <= 100.0,
            "interval_pct must lie in (0, 100], got {}",
            self.interval_pct
        );
        ensure!(
            (0.0..1.0).contains(&self.replace_pct),
            "replace_pct must lie in [0, 1), got {}",
            self.replace_pct
        );
        Ok(())
    }
}

/// Operation counts at which to act every `pct` percent of `total`,
/// including 0 and `total`.
fn marks(total: u64, pct: f64) -> Vec<u64> {
    let mut out = vec![0];
    if total > 0 {
        let steps = (100.0 / pct).ceil() as u64;
        for i in 1..=steps {
            let at = ((i as f64 * pct / 100.0) * total as f64).round().min(total as f64) as u64;
            if at > *out.last().unwrap() {
                out.push(at);
            }
        }
    }
    out
}

/// Runs adapting queries and measures the instantaneous FPR at checkpoints.
pub fn run_adaptation_trace(p: &mut Prefilled, cfg: &TraceConfig) -> anyhow::Result<Vec<TraceRow>> {
    drive(p, cfg, None)
}

/// As [`run_adaptation_trace`], deleting and replacing `replace_pct` of the
/// live items every `interval_pct` of the queries. Every checkpoint also
/// verifies that no live key is missing.
pub fn run_churn(p: &mut Prefilled, cfg: &TraceConfig, churn: &ChurnConfig) -> anyhow::Result<Vec<TraceRow>> {
    churn.validate()?;
    drive(p, cfg, Some(churn))
}

fn drive(p: &mut Prefilled, cfg: &TraceConfig, churn: Option<&ChurnConfig>) -> anyhow::Result<Vec<TraceRow>> {
    ensure!(
        cfg.measure_every_pct > 0.0 && cfg.measure_every_pct <= 100.0,
        "measure_every_pct must lie in (0, 100]"
    );
    let mut queries = KeyGen::new(cfg.dist, cfg.universe_seed, cfg.seed)?;
    let mut probes = KeyGen::new(cfg.dist, cfg.universe_seed, cfg.seed ^ 0x9e37_79b9_7f4a_7c15)?;
    let checkpoints = marks(cfg.queries, cfg.measure_every_pct);
    let events = match churn {
        Some(c) if c.replace_pct > 0.0 => marks(cfg.queries, c.interval_pct)[1..].to_vec(),
        _ => Vec::new(),
    };
    let mut churn_rng = StdRng::seed_from_u64(churn.map_or(0, |c| c.seed));
    let base_accesses = p.filter.map_accesses();
    let start = Instant::now();
    let mut rows = Vec::with_capacity(checkpoints.len());
    let (mut ci, mut ei) = (0, 0);
    let mut done = 0u64;
    loop {
        if ci < checkpoints.len() && checkpoints[ci] == done {
            if churn.is_some() {
                let missing = p.false_negatives();
                if missing > 0 {
                    bail!("{missing} live keys missing at {done} ops");
                }
            }
            rows.push(TraceRow {
                ops: done,
                fpr: instantaneous_fpr(p, &mut probes, cfg.probe),
                extra_bits_per_item: p.extra_bits_per_item(),
                map_accesses: p.filter.map_accesses() - base_accesses,
                wall_nanos: start.elapsed().as_nanos() as u64,
            });
            ci += 1;
        }
        if ei < events.len() && events[ei] == done {
            replace(p, churn.unwrap().replace_pct, &mut churn_rng)?;
            ei += 1;
        }
        if done == cfg.queries {
            break;
        }
        p.filter.lookup(queries.next_key())?;
        done += 1;
    }
    Ok(rows)
}

fn replace(p: &mut Prefilled, frac: f64, rng: &mut StdRng) -> anyhow::Result<()> {
    let n = (p.keys.len() as f64 * frac) as usize;
    let mut picked = index::sample(rng, p.keys.len(), n).into_vec();
    picked.sort_unstable_by(|a, b| b.cmp(a));
    for i in picked {
        let k = p.keys.swap_remove(i);
        p.stored.remove(&k);
        p.filter.delete(k)?;
    }
    let mut added = 0;
    while added < n {
        let k = rng.random();
        if p.stored.insert(k) {
            p.filter.insert(k, None)?;
            p.keys.push(k);
            added += 1;
        }
    }
    Ok(())
}
