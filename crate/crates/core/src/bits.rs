//! Plain bit vectors and fixed-width packed integers.

#[inline]
pub(crate) fn get(words: &[u64], i: usize) -> bool {
    (words[i >> 6] >> (i & 63)) & 1 == 1
}

#[inline]
pub(crate) fn set(words: &mut [u64], i: usize, v: bool) {
    let w = &mut words[i >> 6];
    if v {
        *w |= 1 << (i & 63);
    } else {
        *w &= !(1 << (i & 63));
    }
}

/// Position of the `k`-th (0-based) set bit of `w`. `k` must be < popcount.
#[inline]
pub(crate) fn select_in_word(mut w: u64, k: u32) -> u32 {
    debug_assert!(k < w.count_ones());
    for _ in 0..k {
        w &= w - 1;
    }
    w.trailing_zeros()
}

#[inline]
pub(crate) fn words_for(bits: usize) -> usize {
    bits.div_ceil(64)
}

/// `len` integers of `width` bits, little-endian within 64-bit words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct PackedInts {
    width: u32,
    len: usize,
    words: Vec<u64>,
}

impl PackedInts {
    pub fn new(width: u32, len: usize) -> Self {
        debug_assert!((1..=64).contains(&width));
        Self {
            width,
            len,
            words: vec![0; words_for(width as usize * len)],
        }
    }

    pub fn from_words(width: u32, len: usize, words: Vec<u64>) -> Option<Self> {
        (words.len() == words_for(width as usize * len)).then_some(Self { width, len, words })
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    fn mask(&self) -> u64 {
        crate::fingerprint::low_mask(self.width)
    }

    #[inline]
    pub fn get(&self, i: usize) -> u64 {
        debug_assert!(i < self.len);
        let bit = i * self.width as usize;
        let (w, off) = (bit >> 6, (bit & 63) as u32);
        let mut v = self.words[w] >> off;
        if off + self.width > 64 {
            v |= self.words[w + 1] << (64 - off);
        }
        v & self.mask()
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: u64) {
        debug_assert!(i < self.len);
        let mask = self.mask();
        let v = v & mask;
        let bit = i * self.width as usize;
        let (w, off) = (bit >> 6, (bit & 63) as u32);
        self.words[w] = (self.words[w] & !(mask << off)) | (v << off);
        if off + self.width > 64 {
            let spill = off + self.width - 64;
            let hi_mask = crate::fingerprint::low_mask(spill);
            self.words[w + 1] = (self.words[w + 1] & !hi_mask) | (v >> (64 - off));
        }
    }
}
