//! Key hashing and fingerprint slicing.
//!
//! A key and a seed define an unbounded bit stream: word `i` of the stream is
//! `hash64(key, seed + i)`, and bits are read most-significant-first within
//! each word. The first `q` bits are the quotient, the next `r` bits the
//! remainder, and every following `r`-bit chunk is an extension chunk.

use std::cmp::Ordering;

use crate::error::{Error, Result};

pub const MAX_QBITS: u32 = 56;
pub const MAX_RBITS: u32 = 56;

/// Quotient/remainder split and hash seed shared by every component of a filter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FilterConfig {
    pub qbits: u32,
    pub rbits: u32,
    pub seed: u64,
}

impl FilterConfig {
    pub fn new(qbits: u32, rbits: u32, seed: u64) -> Result<Self> {
        let cfg = Self { qbits, rbits, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_QBITS).contains(&self.qbits) {
            return Err(Error::InvalidConfig(format!(
                "qbits must be in 1..={MAX_QBITS}, got {}",
                self.qbits
            )));
        }
        if !(1..=MAX_RBITS).contains(&self.rbits) {
            return Err(Error::InvalidConfig(format!(
                "rbits must be in 1..={MAX_RBITS}, got {}",
                self.rbits
            )));
        }
        if self.qbits + self.rbits > 64 {
            return Err(Error::InvalidConfig(format!(
                "qbits + rbits must fit in one hash word, got {}",
                self.qbits + self.rbits
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn nslots(&self) -> usize {
        1usize << self.qbits
    }

    /// Length in bits of an unextended fingerprint.
    #[inline]
    pub fn baseline_bits(&self) -> u32 {
        self.qbits + self.rbits
    }

    #[inline]
    pub fn remainder_mask(&self) -> u64 {
        low_mask(self.rbits)
    }

    pub fn target_fpr(&self) -> f64 {
        (-(self.rbits as f64)).exp2()
    }

    /// Stream bit offset of extension chunk `i`.
    #[inline]
    pub fn chunk_offset(&self, i: usize) -> u64 {
        (self.qbits + self.rbits) as u64 + i as u64 * self.rbits as u64
    }
}

#[inline]
pub(crate) fn low_mask(bits: u32) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

/// MurmurHash3 64-bit finalizer.
#[inline]
pub fn fmix64(mut k: u64) -> u64 {
    k ^= k >> 33;
    k = k.wrapping_mul(0xff51_afd7_ed55_8ccd);
    k ^= k >> 33;
    k = k.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    k ^= k >> 33;
    k
}

/// Seeded 64-bit hash. For a fixed seed this is a bijection on keys.
#[inline]
pub fn hash64(key: u64, seed: u64) -> u64 {
    fmix64(key.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ fmix64(seed.wrapping_add(0x632b_e59b_d9b4_e019)))
}

/// Anything that can serve 64-bit words of an MSB-first bit stream.
pub trait BitSource {
    fn word(&self, i: u64) -> u64;

    /// Reads `len <= 64` bits starting at stream bit `start`.
    #[inline]
    fn bits(&self, start: u64, len: u32) -> u64 {
        debug_assert!(len <= 64);
        if len == 0 {
            return 0;
        }
        let w = start / 64;
        let off = (start % 64) as u32;
        let head = self.word(w);
        if off + len <= 64 {
            (head << off) >> (64 - len)
        } else {
            let hi_len = 64 - off;
            let lo_len = len - hi_len;
            let hi = (head << off) >> off;
            let lo = self.word(w + 1) >> (64 - lo_len);
            (hi << lo_len) | lo
        }
    }

    #[inline]
    fn bit(&self, b: u64) -> bool {
        (self.word(b / 64) >> (63 - b % 64)) & 1 == 1
    }
}

/// The hash bit stream of one key. The first word is computed eagerly; later
/// words are derived on demand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HashStream {
    key: u64,
    seed: u64,
    head: u64,
}

impl HashStream {
    #[inline]
    pub fn new(key: u64, seed: u64) -> Self {
        Self {
            key,
            seed,
            head: hash64(key, seed),
        }
    }

    #[inline]
    pub fn key(&self) -> u64 {
        self.key
    }

    #[inline]
    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl BitSource for HashStream {
    #[inline]
    fn word(&self, i: u64) -> u64 {
        if i == 0 {
            self.head
        } else {
            hash64(self.key, self.seed.wrapping_add(i))
        }
    }
}

impl BitSource for [u64] {
    fn word(&self, i: u64) -> u64 {
        self.get(i as usize).copied().unwrap_or(0)
    }
}

/// Returns `(quotient, remainder)` of a stream.
#[inline]
pub fn split<S: BitSource + ?Sized>(stream: &S, cfg: &FilterConfig) -> (u64, u64) {
    let top = stream.bits(0, cfg.qbits + cfg.rbits);
    (top >> cfg.rbits, top & cfg.remainder_mask())
}

#[inline]
pub fn extension_chunk<S: BitSource + ?Sized>(stream: &S, cfg: &FilterConfig, i: usize) -> u64 {
    stream.bits(cfg.chunk_offset(i), cfg.rbits)
}

/// Number of leading extension chunks on which two streams agree, up to `max`.
pub fn common_chunks<A, B>(a: &A, b: &B, cfg: &FilterConfig, max: usize) -> usize
where
    A: BitSource + ?Sized,
    B: BitSource + ?Sized,
{
    (0..max)
        .take_while(|&i| extension_chunk(a, cfg, i) == extension_chunk(b, cfg, i))
        .count()
}

/// Number of equal leading bits of two streams starting at bit `from`,
/// scanning at most `max` bits.
pub fn common_bits_from<A, B>(a: &A, b: &B, from: u64, max: u64) -> u64
where
    A: BitSource + ?Sized,
    B: BitSource + ?Sized,
{
    let mut done = 0;
    while done < max {
        let len = (max - done).min(64) as u32;
        let x = a.bits(from + done, len) ^ b.bits(from + done, len);
        if x != 0 {
            let lead = (x << (64 - len)).leading_zeros() as u64;
            return done + lead;
        }
        done += len as u64;
    }
    max
}

/// A quotient/remainder pair: the key of a minirun.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MinirunId {
    pub quotient: u64,
    pub remainder: u64,
}

impl MinirunId {
    pub fn of<S: BitSource + ?Sized>(stream: &S, cfg: &FilterConfig) -> Self {
        let (quotient, remainder) = split(stream, cfg);
        Self {
            quotient,
            remainder,
        }
    }
}

/// Logical fingerprint: quotient, remainder, extension chunks, plus the
/// multiplicity and membership tag carried alongside it.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    pub quotient: u64,
    pub remainder: u64,
    pub ext: Vec<u64>,
    pub count: u64,
    pub tag: bool,
}

impl Fingerprint {
    pub fn baseline<S: BitSource + ?Sized>(stream: &S, cfg: &FilterConfig) -> Self {
        let (quotient, remainder) = split(stream, cfg);
        Self {
            quotient,
            remainder,
            ext: Vec::new(),
            count: 1,
            tag: false,
        }
    }

    /// Fingerprint of `stream` carrying its first `ext_len` extension chunks.
    pub fn with_extensions<S: BitSource + ?Sized>(
        stream: &S,
        cfg: &FilterConfig,
        ext_len: usize,
    ) -> Self {
        let mut fp = Self::baseline(stream, cfg);
        fp.ext = (0..ext_len).map(|i| extension_chunk(stream, cfg, i)).collect();
        fp
    }

    pub fn id(&self) -> MinirunId {
        MinirunId {
            quotient: self.quotient,
            remainder: self.remainder,
        }
    }

    pub fn bit_len(&self, cfg: &FilterConfig) -> u64 {
        cfg.chunk_offset(self.ext.len())
    }

    /// Compares as bit strings: quotient, remainder, then extension chunks,
    /// with a strict prefix ordered first.
    pub fn lex_cmp(&self, other: &Self) -> Ordering {
        (self.quotient, self.remainder)
            .cmp(&(other.quotient, other.remainder))
            .then_with(|| self.ext.cmp(&other.ext))
    }
}

/// True iff every stored bit of `fp` agrees with `stream`.
pub fn is_prefix<S: BitSource + ?Sized>(fp: &Fingerprint, stream: &S, cfg: &FilterConfig) -> bool {
    split(stream, cfg) == (fp.quotient, fp.remainder)
        && fp
            .ext
            .iter()
            .enumerate()
            .all(|(i, &c)| extension_chunk(stream, cfg, i) == c)
}
