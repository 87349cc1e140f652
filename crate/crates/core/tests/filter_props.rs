use aqf_core::testing::{check_invariants, decode_fingerprints, ModelFilter};
use aqf_core::{
    AdaptiveFilter, BitSource, Error, FilterConfig, HashStream, Lookup, MinirunId, Policy, QueryResult,
};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn filled(cfg: FilterConfig, keys: impl IntoIterator<Item = u64>) -> AdaptiveFilter {
    let mut f = AdaptiveFilter::new(cfg).unwrap();
    for k in keys {
        f.insert(k, None).unwrap();
    }
    f
}

/// Searches upward from `start` for a key whose baseline fingerprint equals `target`'s.
fn collider(cfg: &FilterConfig, target: u64, start: u64) -> u64 {
    let want = MinirunId::of(&HashStream::new(target, cfg.seed), cfg);
    (start..)
        .find(|&k| k != target && MinirunId::of(&HashStream::new(k, cfg.seed), cfg) == want)
        .unwrap()
}

/// Random insert / adapting lookup / delete sequence mirrored in the logical
/// model. Checks structure, no false negatives and prefix-set equality on a
/// probe range after every step.
fn mirror(q: u32, r: u32, seed: u64, steps: usize, probes: u64) {
    let cfg = FilterConfig::new(q, r, seed).unwrap();
    let mut f = AdaptiveFilter::new(cfg).unwrap();
    let mut model = ModelFilter::new(cfg);
    let mut rng = StdRng::seed_from_u64(seed ^ 0x5eed);
    let cap = f.slots().max_occupied() * 3 / 5;
    let universe = 1u64 << 16;
    for step in 0..steps {
        let op = rng.random_range(0..10);
        if op < 4 && f.slots().occupied_slots() < cap {
            let k = rng.random_range(0..universe);
            f.insert(k, None).unwrap();
            model.insert(k);
        } else if op < 8 || model.is_empty() {
            let k = rng.random_range(0..universe);
            let got = f.lookup(k).unwrap();
            let want = model.lookup(k);
            assert_eq!(got.is_present(), want.is_present(), "step {step} key {k}");
            assert_eq!(got, want, "step {step} key {k}");
        } else {
            let keys: Vec<u64> = model.keys().collect();
            let k = keys[rng.random_range(0..keys.len())];
            f.delete(k).unwrap();
            assert!(model.delete(k));
        }
        check_invariants(f.slots());
        f.check_consistency().unwrap();
        assert_eq!(decode_fingerprints(f.slots()), model.fingerprints());
        for k in model.keys() {
            assert!(f.may_contain(k), "false negative for {k} at step {step}");
        }
        for k in 0..probes {
            assert_eq!(f.may_contain(k), model.matches(k), "step {step} probe {k}");
        }
    }
}

#[test]
fn filter_matches_logical_model() {
    mirror(8, 4, 1, 400, 1 << 12);
    mirror(6, 3, 2, 400, 1 << 12);
}

#[test]
fn collider_is_corrected_once() {
    let cfg = FilterConfig::new(8, 4, 11).unwrap();
    let mut f = filled(cfg, [5]);
    let y = collider(&cfg, 5, 1000);
    let before = f.map().to_bytes();
    assert_eq!(f.lookup(y).unwrap(), Lookup::FalsePositiveCorrected);
    assert_eq!(f.map().to_bytes(), before);
    assert_eq!(f.lookup(y).unwrap(), Lookup::NotPresent);
    assert!(f.lookup(5).unwrap().is_present());
    let st = f.stats();
    assert_eq!((st.false_positives, st.adaptations), (1, 1));
}

#[test]
fn engineered_two_chunk_adaptation() {
    let cfg = FilterConfig::new(8, 4, 12).unwrap();
    let mut f = filled(cfg, [7]);
    let owner = HashStream::new(7, cfg.seed);
    let want = MinirunId::of(&owner, &cfg);
    let first = aqf_core::extension_chunk(&owner, &cfg, 0);
    let y = (0..)
        .find(|&k: &u64| {
            let s = HashStream::new(k, cfg.seed);
            k != 7
                && MinirunId::of(&s, &cfg) == want
                && aqf_core::extension_chunk(&s, &cfg, 0) == first
                && aqf_core::extension_chunk(&s, &cfg, 1) != aqf_core::extension_chunk(&owner, &cfg, 1)
        })
        .unwrap();
    let s = HashStream::new(y, cfg.seed);
    assert_eq!(f.adapt(want, 0, 7, &s).unwrap(), 2);
    assert!(!f.may_contain(y));
    assert!(matches!(
        f.adapt(want, 0, 7, &HashStream::new(7, cfg.seed)),
        Err(Error::AdaptationExhausted(56))
    ));
}

#[test]
fn negative_lookups_skip_the_map() {
    let cfg = FilterConfig::new(12, 8, 3).unwrap();
    let mut f = filled(cfg, 0..3000);
    f.map().reset_accesses();
    let mut negatives = 0;
    for k in 1_000_000..1_050_000u64 {
        if !f.may_contain(k) {
            assert_eq!(f.lookup(k).unwrap(), Lookup::NotPresent);
            negatives += 1;
        }
    }
    assert!(negatives > 40_000);
    assert_eq!(f.map_accesses(), 0);
}

#[test]
fn second_pass_has_no_false_positives() {
    let cfg = FilterConfig::new(12, 5, 8).unwrap();
    let mut f = filled(cfg, 0..3000);
    let queries: Vec<u64> = (1u64 << 40..(1 << 40) + 10_000).collect();
    let map_before = f.map().to_bytes();
    let first = queries.iter().filter(|&&k| f.lookup(k).unwrap().is_false_positive()).count();
    assert!(first > 100);
    assert_eq!(f.map().to_bytes(), map_before);
    for &k in &queries {
        assert_eq!(f.lookup(k).unwrap(), Lookup::NotPresent, "key {k}");
    }
    f.check_consistency().unwrap();
}

/// After one chunk of extension against one colliding query, a fresh query
/// that shares the baseline bits but is otherwise uniform still matches with
/// probability 2^-r.
#[test]
fn residual_risk_after_one_extension() {
    let cfg = FilterConfig::new(8, 4, 21).unwrap();
    let mut rng = StdRng::seed_from_u64(21);
    let base = cfg.baseline_bits();
    let keep = !0u64 << (64 - base);
    let engineer = |rng: &mut StdRng, owner: &HashStream| -> [u64; 2] {
        [(owner.word(0) & keep) | (rng.random::<u64>() & !keep), rng.random()]
    };
    let (mut trials, mut hits) = (0u64, 0u64);
    let mut f = AdaptiveFilter::new(cfg).unwrap();
    for key in 0..120_000u64 {
        let owner = HashStream::new(key, cfg.seed);
        let id = MinirunId::of(&owner, &cfg);
        f.insert(key, None).unwrap();
        let y = engineer(&mut rng, &owner);
        if f.adapt(id, 0, key, &y[..]).unwrap() == 1 {
            let z = engineer(&mut rng, &owner);
            trials += 1;
            hits += matches!(f.slots().query_fp(&z[..]), QueryResult::Positive { .. }) as u64;
        }
        f.delete(key).unwrap();
    }
    assert!(trials >= 100_000, "{trials}");
    let p = 1.0 / 16.0;
    let rate = hits as f64 / trials as f64;
    let se = (p * (1.0 - p) / trials as f64).sqrt();
    assert!((rate - p).abs() < 4.0 * se, "rate {rate} over {trials}");
}

#[test]
fn frozen_mode_reports_without_adapting() {
    let cfg = FilterConfig::new(8, 4, 11).unwrap();
    let policy = Policy {
        auto_adapt: false,
        ..Policy::default()
    };
    let mut f = AdaptiveFilter::with_policy(cfg, policy).unwrap();
    f.insert(5, None).unwrap();
    let y = collider(&cfg, 5, 1000);
    let slots = f.slots().clone();
    for _ in 0..3 {
        assert_eq!(f.lookup(y).unwrap(), Lookup::FalsePositive);
    }
    assert_eq!(f.slots(), &slots);
    assert_eq!(f.stats().false_positives, 3);
}

#[test]
fn dedupe_counts_and_values() {
    let cfg = FilterConfig::new(8, 6, 2).unwrap();
    let policy = Policy {
        dedupe_keys: true,
        ..Policy::default()
    };
    let mut f = AdaptiveFilter::with_policy(cfg, policy).unwrap();
    f.insert(9, Some(b"a".to_vec())).unwrap();
    f.insert(9, None).unwrap();
    assert_eq!(f.len(), 1);
    let id = MinirunId::of(&f.stream(9), &cfg);
    assert_eq!(f.slots().get_count(id, 0).unwrap(), 2);
    f.delete(9).unwrap();
    assert_eq!(
        f.lookup(9).unwrap(),
        Lookup::Present {
            value: Some(b"a".to_vec())
        }
    );
    f.delete(9).unwrap();
    assert!(f.is_empty());
    assert!(matches!(f.delete(9), Err(Error::KeyNotFound(9))));
}

#[test]
fn shorten_on_delete_trims_lone_survivor() {
    let cfg = FilterConfig::new(8, 4, 11).unwrap();
    let policy = Policy {
        shorten_on_delete: true,
        ..Policy::default()
    };
    let mut f = AdaptiveFilter::with_policy(cfg, policy).unwrap();
    f.insert(5, None).unwrap();
    let y = collider(&cfg, 5, 1000);
    f.insert(y, None).unwrap();
    let id = MinirunId::of(&f.stream(5), &cfg);
    let z = collider(&cfg, 5, y + 1);
    f.lookup(z).unwrap();
    assert!(f.slots().minirun(id).iter().any(|fp| !fp.ext.is_empty()));
    f.delete(y).unwrap();
    let left = f.slots().minirun(id);
    assert_eq!(left.len(), 1);
    assert!(left[0].ext.is_empty());
    check_invariants(f.slots());
}

#[test]
fn snapshot_roundtrip_is_bit_exact() {
    let cfg = FilterConfig::new(10, 6, 31).unwrap();
    let mut f = AdaptiveFilter::new(cfg).unwrap();
    for k in 0..700u64 {
        f.insert(k, (k % 3 == 0).then(|| k.to_le_bytes().to_vec())).unwrap();
    }
    for k in 5000..9000 {
        f.lookup(k).unwrap();
    }
    let bytes = f.to_bytes();
    let g = AdaptiveFilter::from_bytes(&bytes).unwrap();
    assert_eq!(g, f);
    assert_eq!(g.to_bytes(), bytes);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.aqfs");
    f.save(&path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(AdaptiveFilter::load(&path).unwrap(), f);
    let mut bad = bytes.clone();
    bad[0] ^= 1;
    assert!(matches!(AdaptiveFilter::from_bytes(&bad), Err(Error::Format(_))));
    assert!(AdaptiveFilter::from_bytes(&bytes[..bytes.len() - 1]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn no_false_negatives(q in 4u32..=10, r in 2u32..=8, seed: u64, ops in 50usize..400) {
        let cfg = FilterConfig::new(q, r, seed).unwrap();
        let mut f = AdaptiveFilter::new(cfg).unwrap();
        let mut live: Vec<u64> = Vec::new();
        let mut rng = StdRng::seed_from_u64(seed);
        for _ in 0..ops {
            match rng.random_range(0..3) {
                0 => {
                    let k = rng.random();
                    match f.insert(k, None) {
                        Ok(()) => live.push(k),
                        Err(Error::FilterFull { .. }) => {}
                        Err(e) => return Err(TestCaseError::fail(e.to_string())),
                    }
                }
                1 => match f.lookup(rng.random()) {
                    Ok(_) | Err(Error::FilterFull { .. }) => {}
                    Err(e) => return Err(TestCaseError::fail(e.to_string())),
                },
                _ if !live.is_empty() => {
                    let k = live.swap_remove(rng.random_range(0..live.len()));
                    f.delete(k).unwrap();
                }
                _ => {}
            }
            for &k in &live {
                prop_assert!(f.lookup_frozen(k).unwrap().is_present());
            }
        }
        f.check_consistency().unwrap();
    }

    #[test]
    fn adaptation_never_touches_the_map(seed: u64) {
        let cfg = FilterConfig::new(9, 3, seed).unwrap();
        let mut f = filled(cfg, 0..300);
        let before = f.map().to_bytes();
        let mut rng = StdRng::seed_from_u64(seed);
        for _ in 0..1000 {
            f.lookup(rng.random_range(1000..u64::MAX)).unwrap();
        }
        prop_assert!(f.stats().adaptations > 0);
        prop_assert_eq!(f.map().to_bytes(), before);
    }
}
