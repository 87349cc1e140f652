//! Key generators for experiments.
//!
//! Zipfian keys are ranks drawn from `P(rank) ∝ rank^-s` over `1..=universe`,
//! mapped through a seeded bijection of `u64` so that hot keys land at
//! unrelated hash positions.

use std::fmt;
use std::str::FromStr;

use aqf_core::fmix64;
use anyhow::{bail, Context};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Zipf};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Dist {
    Uniform,
    Zipf { s: f64, universe: u64 },
}

impl Dist {
    pub fn validate(&self) -> anyhow::Result<()> {
        if let Dist::Zipf { s, universe } = *self {
            if !(s > 1.0 && s.is_finite()) {
                bail!("zipf exponent must exceed 1, got {s}");
            }
            if universe == 0 {
                bail!("zipf universe must be non-empty");
            }
        }
        Ok(())
    }
}

impl FromStr for Dist {
    type Err = anyhow::Error;

    /// `uniform` or `zipf:S:U`.
    fn from_str(text: &str) -> anyhow::Result<Self> {
        let d = match text.split(':').collect::<Vec<_>>()[..] {
            ["uniform"] => Dist::Uniform,
            ["zipf", s, u] => Dist::Zipf {
                s: s.parse().with_context(|| format!("bad zipf exponent {s:?}"))?,
                universe: parse_count(u).with_context(|| format!("bad zipf universe {u:?}"))?,
            },
            _ => bail!("expected `uniform` or `zipf:S:U`, got {text:?}"),
        };
        d.validate()?;
        Ok(d)
    }
}

impl fmt::Display for Dist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dist::Uniform => write!(f, "uniform"),
            Dist::Zipf { s, universe } => write!(f, "zipf:{s}:{universe}"),
        }
    }
}

/// Parses integers such as `1000000`, `1e6` or `1_000_000`.
pub fn parse_count(text: &str) -> anyhow::Result<u64> {
    let t = text.replace('_', "");
    if let Ok(v) = t.parse::<u64>() {
        return Ok(v);
    }
    let f: f64 = t.parse().with_context(|| format!("not a count: {text:?}"))?;
    if !(f >= 0.0 && f.fract() == 0.0 && f < 2f64.powi(64)) {
        bail!("not a non-negative integer: {text:?}");
    }
    Ok(f as u64)
}

/// Seeded key stream. `universe_seed` fixes the rank-to-key permutation;
/// `seed` drives sampling, so independent streams over the same universe
/// share their hot keys.
pub struct KeyGen {
    rng: StdRng,
    zipf: Option<Zipf<f64>>,
    universe_seed: u64,
}

impl KeyGen {
    pub fn new(dist: Dist, universe_seed: u64, seed: u64) -> anyhow::Result<Self> {
        dist.validate()?;
        let zipf = match dist {
            Dist::Uniform => None,
            Dist::Zipf { s, universe } => Some(Zipf::new(universe as f64, s)?),
        };
        Ok(Self {
            rng: StdRng::seed_from_u64(seed),
            zipf,
            universe_seed,
        })
    }

    /// Key of zipfian rank `rank` (1-based).
    pub fn rank_key(universe_seed: u64, rank: u64) -> u64 {
        fmix64(rank ^ fmix64(universe_seed))
    }

    pub fn next_key(&mut self) -> u64 {
        match &self.zipf {
            None => self.rng.random(),
            Some(z) => Self::rank_key(self.universe_seed, z.sample(&mut self.rng) as u64),
        }
    }

    pub fn take(&mut self, n: usize) -> Vec<u64> {
        (0..n).map(|_| self.next_key()).collect()
    }
}

/// `count` keys drawn from `dist`, reproducible per seed.
pub fn gen_workload(dist: Dist, count: usize, seed: u64) -> anyhow::Result<Vec<u64>> {
    Ok(KeyGen::new(dist, seed, seed.wrapping_add(1))?.take(count))
}

/// Reads raw little-endian u64 keys.
pub fn read_keys(path: &std::path::Path) -> anyhow::Result<Vec<u64>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.len() % 8 != 0 {
        bail!("{}: length {} is not a multiple of 8", path.display(), bytes.len());
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
