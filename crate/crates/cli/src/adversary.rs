//! Adversarial replay: an attacker collects false positives during a warmup
//! of benign traffic and then replays them during the attack phase.

use std::time::Instant;

use anyhow::ensure;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::experiment::Prefilled;
use crate::workload::{Dist, KeyGen};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdversaryConfig {
    pub warmup: u64,
    /// Queries in the attack phase.
    pub attack: u64,
    /// Probability that an attack-phase query is a replayed false positive.
    pub adv_frac: f64,
    /// Simulated cost of each query the filter answers positively.
    pub latency_nanos: u64,
    pub seed: u64,
}

impl AdversaryConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        ensure!(
            (0.0..=1.0).contains(&self.adv_frac),
            "adv_frac must lie in [0, 1], got {}",
            self.adv_frac
        );
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdversaryReport {
    pub warmup_false_positives: u64,
    /// Distinct false positives the adversary collected.
    pub pool: usize,
    pub attack_queries: u64,
    pub adversarial_queries: u64,
    pub attack_false_positives: u64,
    /// Attack-phase queries the filter answered positively.
    pub positives: u64,
    pub simulated_nanos: u64,
    pub wall_nanos: u64,
    pub effective_qps: f64,
    /// The pool was empty, so every attack query was benign.
    pub degenerate: bool,
}

impl AdversaryReport {
    pub fn fp_rate(&self) -> f64 {
        if self.attack_queries == 0 {
            0.0
        } else {
            self.attack_false_positives as f64 / self.attack_queries as f64
        }
    }
}

pub fn run_adversary(p: &mut Prefilled, cfg: &AdversaryConfig) -> anyhow::Result<AdversaryReport> {
    cfg.validate()?;
    let mut benign = KeyGen::new(Dist::Uniform, 0, cfg.seed)?;
    let mut rng = StdRng::seed_from_u64(cfg.seed ^ 0xad7e_55a7);
    let mut pool = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut rep = AdversaryReport::default();

    for _ in 0..cfg.warmup {
        let k = benign.next_key();
        if p.filter.lookup(k)?.is_false_positive() {
            rep.warmup_false_positives += 1;
            if seen.insert(k) {
                pool.push(k);
            }
        }
    }
    rep.pool = pool.len();
    rep.degenerate = pool.is_empty() && cfg.adv_frac > 0.0;

    let start = Instant::now();
    for _ in 0..cfg.attack {
        let adversarial = !pool.is_empty() && rng.random_bool(cfg.adv_frac);
        let k = if adversarial {
            rep.adversarial_queries += 1;
            pool[rng.random_range(0..pool.len())]
        } else {
            benign.next_key()
        };
        let r = p.filter.lookup(k)?;
        if r.filter_matched() {
            rep.positives += 1;
        }
        if r.is_false_positive() {
            rep.attack_false_positives += 1;
        }
    }
    rep.attack_queries = cfg.attack;
    rep.wall_nanos = start.elapsed().as_nanos() as u64;
    rep.simulated_nanos = rep.positives * cfg.latency_nanos;
    let secs = (rep.wall_nanos + rep.simulated_nanos) as f64 / 1e9;
    rep.effective_qps = if secs > 0.0 { cfg.attack as f64 / secs } else { 0.0 };
    Ok(rep)
}
