//! Adaptive quotient filter.
//!
//! A quotient filter whose fingerprints can be lengthened after the fact: when
//! a lookup hits a fingerprint that belongs to a different key, the stored
//! fingerprint is extended with more bits of its owner's hash so that query
//! never matches it again. A reverse map from fingerprint groups back to the
//! original keys makes the owner recoverable.
//!
//! * [`SlotArray`]: the packed slot table.
//! * [`ReverseMap`]: minirun ID to key lists.
//! * [`AdaptiveFilter`]: the combined filter.
//! * [`YesNoFilter`]: allow/deny list filtering with one membership bit per fingerprint.
//! * [`setops`]: merge, bulk load and rebuild.

mod bits;
mod codec;
pub mod error;
pub mod filter;
pub mod fingerprint;
pub mod reverse_map;
pub mod setops;
pub mod slots;
#[cfg(any(test, feature = "testing"))]
pub mod testing;
pub mod yesno;

pub use error::{Error, Result};
pub use filter::{AdaptStats, AdaptiveFilter, Lookup, Policy};
pub use fingerprint::{
    common_bits_from, common_chunks, extension_chunk, fmix64, hash64, is_prefix, split, BitSource,
    FilterConfig, Fingerprint, HashStream, MinirunId, MAX_QBITS, MAX_RBITS,
};
pub use reverse_map::{MapEntry, ReverseMap};
pub use setops::{bulk_load, merge, rebuild, sort_by_hash};
pub use slots::{QueryResult, RunLayout, SlotArray, SlotBits, SpaceReport, HEADER_BITS, MAX_LOAD};
pub use yesno::{
    adaptivity_budget, expected_adaptivity_bits, lower_bound_bits, BuildReport, Sizing, YesNoFilter,
    YesNoParams,
};
