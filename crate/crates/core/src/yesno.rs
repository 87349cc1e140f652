//! Yes/no-list filtering.
//!
//! Every fingerprint carries one membership bit (YES = 1). A query answers
//! YES exactly when the first fingerprint that prefixes its hash is tagged.
//! The static builder inserts the YES list, then queries every NO key and
//! extends whichever YES fingerprints it collides with. Slots for those
//! extensions are reserved up front from the adaptivity budget; running out
//! of them fails the build.

use std::collections::{HashMap, HashSet};
use std::f64::consts::LOG2_E;

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::filter::{AdaptiveFilter, Policy};
use crate::fingerprint::{common_bits_from, common_chunks, FilterConfig, Fingerprint, HashStream, MinirunId};
use crate::reverse_map::ReverseMap;
use crate::slots::{QueryResult, SlotArray, SpaceReport, MAX_LOAD};

/// Default multiplier on the adaptivity budget.
pub const DEFAULT_SLACK: f64 = 1.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct YesNoParams {
    /// YES-list size.
    pub n: u64,
    /// NO-list size.
    pub m: u64,
    /// Target false-positive rate for keys outside both lists.
    pub epsilon: f64,
    /// Universe size; only used to check the lower bound's applicability.
    pub universe: f64,
}

impl YesNoParams {
    pub fn new(n: u64, m: u64, epsilon: f64, universe: f64) -> Result<Self> {
        let p = Self {
            n,
            m,
            epsilon,
            universe,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidParams("the YES list must be non-empty".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidParams(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Expected NO-list false positives per YES key: `epsilon * m / n`.
    pub fn mu(&self) -> f64 {
        self.epsilon * self.m as f64 / self.n as f64
    }

    /// Whether `universe >= n^2/epsilon + m^2`, the regime where the lower
    /// bound applies. Advisory only.
    pub fn universe_is_adequate(&self) -> bool {
        let (n, m) = (self.n as f64, self.m as f64);
        self.universe >= n * n / self.epsilon + m * m
    }
}

/// Bits reserved for adaptivity: `ceil(slack * n * (2 + log2 e + log2(1 + mu)))`.
pub fn adaptivity_budget(p: &YesNoParams, slack: f64) -> Result<u64> {
    p.validate()?;
    if !(slack >= 1.0 && slack.is_finite()) {
        return Err(Error::InvalidParams(format!("slack must be at least 1, got {slack}")));
    }
    Ok((slack * p.n as f64 * (2.0 + LOG2_E + p.mu().ln_1p() * LOG2_E)).ceil() as u64)
}

/// Upper bound on the expected bits spent correcting NO-list collisions:
/// `n * (1 + log2 e + log2(1 + mu))`.
pub fn expected_adaptivity_bits(p: &YesNoParams) -> Result<f64> {
    p.validate()?;
    Ok(p.n as f64 * (1.0 + LOG2_E + p.mu().ln_1p() * LOG2_E))
}

/// Space lower bound for any static yes/no filter, without the additive
/// constant: `n * log2(max(1/epsilon, m/n)) + log2(e) * min(epsilon * m, n)`.
pub fn lower_bound_bits(p: &YesNoParams) -> Result<f64> {
    p.validate()?;
    if p.epsilon > 0.5 {
        return Err(Error::InvalidParams(format!(
            "the lower bound needs epsilon <= 1/2, got {}",
            p.epsilon
        )));
    }
    let (n, m) = (p.n as f64, p.m as f64);
    let lead = (1.0 / p.epsilon).max(m / n).log2();
    Ok(n * lead + LOG2_E * (p.epsilon * m).min(n))
}

/// Table geometry for `n` stored keys plus a reserve of extension slots.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sizing {
    pub qbits: u32,
    pub rbits: u32,
    pub reserve_slots: u64,
    pub max_occupied: u64,
}

/// Smallest table whose `q + r = ceil(log2(items / epsilon))` and whose load
/// cap fits `items + ceil(budget_bits / r)` slots.
pub fn sizing(items: u64, epsilon: f64, budget_bits: u64) -> Result<Sizing> {
    let p = (items as f64 / epsilon).log2().ceil().max(2.0);
    if p > 64.0 {
        return Err(Error::InvalidParams(format!("fingerprint length {p} exceeds 64 bits")));
    }
    let p = p as u32;
    for q in 1..=crate::fingerprint::MAX_QBITS.min(p - 1) {
        let r = p - q;
        let reserve = budget_bits.div_ceil(r as u64);
        let n = 1u64 << q;
        let cap = ((n as f64 * MAX_LOAD) as u64).min(n - 1);
        if items + reserve <= cap {
            return Ok(Sizing {
                qbits: q,
                rbits: r,
                reserve_slots: reserve,
                max_occupied: items + reserve,
            });
        }
    }
    Err(Error::InvalidParams(format!(
        "no table with {p}-bit fingerprints fits {items} keys"
    )))
}

/// Accounting from a static build.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BuildReport {
    /// Sum over YES keys of the longest bit-level agreement with any NO key
    /// sharing its baseline fingerprint, plus one.
    pub adaptivity_bits: u64,
    /// Extension slots used, times `r`.
    pub physical_bits: u64,
    pub budget_bits: u64,
    pub extension_slots: u64,
    /// NO keys whose baseline fingerprint matched some YES key.
    pub soft_collisions: u64,
    pub adaptations: u64,
}

#[derive(Clone, Debug)]
pub struct YesNoFilter {
    inner: AdaptiveFilter,
    params: YesNoParams,
    slack: f64,
}

fn tagged_filter(sz: &Sizing, seed: u64) -> Result<AdaptiveFilter> {
    let cfg = FilterConfig::new(sz.qbits, sz.rbits, seed)?;
    let mut arr = SlotArray::with_tag(cfg, true)?;
    arr.set_max_occupied(sz.max_occupied as usize);
    Ok(AdaptiveFilter::from_parts(arr, ReverseMap::for_config(&cfg), Policy::default()))
}

fn distinct(keys: &[u64]) -> Vec<u64> {
    let mut seen = HashSet::with_capacity(keys.len());
    keys.iter().copied().filter(|k| seen.insert(*k)).collect()
}

impl YesNoFilter {
    /// Builds a filter answering YES on `yes`, NO on `no`, and NO with
    /// probability about `1 - epsilon` elsewhere.
    pub fn build_static(yes: &[u64], no: &[u64], epsilon: f64, slack: f64, seed: u64) -> Result<(Self, BuildReport)> {
        let yes = distinct(yes);
        let no = distinct(no);
        let yes_set: HashSet<u64> = yes.iter().copied().collect();
        if let Some(&k) = no.iter().find(|k| yes_set.contains(k)) {
            return Err(Error::OverlappingInput(k));
        }
        let params = YesNoParams::new(yes.len() as u64, no.len() as u64, epsilon, 2f64.powi(64))?;
        let budget = adaptivity_budget(&params, slack)?;
        let sz = sizing(params.n, epsilon, budget)?;
        Self::build_sized(&yes, &no, params, slack, budget, &sz, seed)
    }

    fn build_sized(
        yes: &[u64],
        no: &[u64],
        params: YesNoParams,
        slack: f64,
        budget: u64,
        sz: &Sizing,
        seed: u64,
    ) -> Result<(Self, BuildReport)> {
        let mut inner = tagged_filter(sz, seed)?;
        let cfg = *inner.config();

        let mut buckets: HashMap<MinirunId, Vec<u64>> = HashMap::new();
        for &y in yes {
            let s = inner.stream(y);
            let mut fp = Fingerprint::baseline(&s, &cfg);
            fp.tag = true;
            buckets.entry(fp.id()).or_default().push(y);
            inner.insert_fingerprint(fp, y, None)?;
        }

        let mut report = BuildReport {
            budget_bits: budget,
            ..BuildReport::default()
        };
        let mut needed: HashMap<u64, u64> = HashMap::new();
        let p = cfg.baseline_bits() as u64;
        let horizon = 64 * 8;
        for &z in no {
            let s = inner.stream(z);
            let id = MinirunId::of(&s, &cfg);
            if let Some(owners) = buckets.get(&id) {
                report.soft_collisions += 1;
                for &y in owners {
                    let bits = common_bits_from(&inner.stream(y), &s, p, horizon) + 1;
                    let e = needed.entry(y).or_insert(0);
                    *e = (*e).max(bits);
                }
            }
            let mut from = 0;
            while let QueryResult::Positive { rank, ext_len, .. } = inner.slots().query_from(&s, from) {
                let owner = inner.owner(id, rank)?.key;
                match inner.adapt_from(id, rank, ext_len, owner, &s) {
                    Ok(_) => report.adaptations += 1,
                    Err(Error::FilterFull { .. }) => {
                        let used = inner.space_report().extension_slots * cfg.rbits as u64;
                        return Err(Error::ConstructionFailed {
                            consumed_bits: used,
                            budget_bits: budget,
                        });
                    }
                    Err(e) => return Err(e),
                }
                from = rank + 1;
            }
        }
        report.adaptivity_bits = needed.values().sum();
        report.extension_slots = inner.space_report().extension_slots;
        report.physical_bits = report.extension_slots * cfg.rbits as u64;
        Ok((
            Self {
                inner,
                params,
                slack,
            },
            report,
        ))
    }

    /// An empty filter for at most `n_hat` YES and `m_hat` NO keys inserted
    /// dynamically.
    pub fn with_capacity(n_hat: u64, m_hat: u64, epsilon: f64, slack: f64, seed: u64) -> Result<Self> {
        let items = n_hat + m_hat;
        let params = YesNoParams::new(n_hat.max(1), m_hat, epsilon, 2f64.powi(64))?;
        let sizing_params = YesNoParams::new(items.max(1), 0, epsilon, 2f64.powi(64))?;
        let budget = adaptivity_budget(&sizing_params, slack)?;
        let sz = sizing(items.max(1), epsilon, budget)?;
        Ok(Self {
            inner: tagged_filter(&sz, seed)?,
            params,
            slack,
        })
    }

    pub fn params(&self) -> &YesNoParams {
        &self.params
    }

    pub fn slack(&self) -> f64 {
        self.slack
    }

    pub fn inner(&self) -> &AdaptiveFilter {
        &self.inner
    }

    pub fn config(&self) -> &FilterConfig {
        self.inner.config()
    }

    pub fn space_report(&self) -> SpaceReport {
        self.inner.space_report()
    }

    /// YES iff the first fingerprint prefixing `key`'s hash is tagged.
    pub fn query(&self, key: u64) -> bool {
        matches!(
            self.inner.slots().query_fp(&self.inner.stream(key)),
            QueryResult::Positive { tag: true, .. }
        )
    }

    pub fn insert_yes(&mut self, key: u64) -> Result<()> {
        self.insert_with(key, true)
    }

    pub fn insert_no(&mut self, key: u64) -> Result<()> {
        self.insert_with(key, false)
    }

    /// Stores `key` with membership `tag`, first extending every stored
    /// fingerprint that prefixes it and then giving the new fingerprint
    /// enough extensions to separate it from those owners.
    fn insert_with(&mut self, key: u64, tag: bool) -> Result<()> {
        let cfg = *self.inner.config();
        let s = self.inner.stream(key);
        let id = MinirunId::of(&s, &cfg);
        if let Some(rank) = self.inner.map().position(id, key) {
            if self.inner.slots().fingerprint(id, rank)?.tag == tag {
                return Ok(());
            }
            self.inner.delete(key)?;
        }
        let mut owners = Vec::new();
        let mut from = 0;
        while let QueryResult::Positive { rank, ext_len, .. } = self.inner.slots().query_from(&s, from) {
            let owner = self.inner.owner(id, rank)?.key;
            self.inner.adapt_from(id, rank, ext_len, owner, &s)?;
            owners.push(owner);
            from = rank + 1;
        }
        let max = self.inner.policy().max_extensions;
        let len = owners
            .iter()
            .map(|&o| common_chunks(&s, &HashStream::new(o, cfg.seed), &cfg, max) + 1)
            .max()
            .unwrap_or(0);
        if len > max {
            return Err(Error::AdaptationExhausted(max));
        }
        let mut fp = Fingerprint::with_extensions(&s, &cfg, len);
        fp.tag = tag;
        self.inner.insert_fingerprint(fp, key, None)?;
        Ok(())
    }

    pub fn delete(&mut self, key: u64) -> Result<()> {
        self.inner.delete(key)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.u64(self.params.n);
        w.u64(self.params.m);
        w.f64(self.params.epsilon);
        w.f64(self.params.universe);
        w.f64(self.slack);
        self.inner.snapshot_with(Some(&w.buf))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (inner, extra) = AdaptiveFilter::restore(bytes)?;
        let extra = extra.ok_or_else(|| Error::Format("missing yes/no parameter block".into()))?;
        if !inner.slots().is_tagged() {
            return Err(Error::Format("yes/no snapshot without membership bits".into()));
        }
        let mut r = Reader::new(&extra);
        let params = YesNoParams {
            n: r.u64()?,
            m: r.u64()?,
            epsilon: r.f64()?,
            universe: r.f64()?,
        };
        let slack = r.f64()?;
        r.finish()?;
        params.validate().map_err(|e| Error::Format(e.to_string()))?;
        Ok(Self { inner, params, slack })
    }
}

impl PartialEq for YesNoFilter {
    fn eq(&self, other: &Self) -> bool {
        self.inner == other.inner
            && self.params == other.params
            && self.slack.to_bits() == other.slack.to_bits()
    }
}
