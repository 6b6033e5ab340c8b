//! Packed bit strings for raw and distilled keys.
//!
//! Bit i lives in word i/64 at position i%64. The bits past `len` in the last
//! word are always zero, so equality and hashing work on the words directly.

use std::fmt;

#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct KeyMaterial {
    words: Vec<u64>,
    len: usize,
}

impl fmt::Debug for KeyMaterial {
    /// Deliberately length-only: key bits must not end up in logs or panics.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyMaterial({} bits)", self.len)
    }
}

impl KeyMaterial {
    pub fn new() -> Self {
        KeyMaterial::default()
    }

    pub fn zeros(len: usize) -> Self {
        KeyMaterial { words: vec![0; len.div_ceil(64)], len }
    }

    pub fn from_bits(bits: &[u8]) -> Self {
        let mut out = KeyMaterial::zeros(bits.len());
        for (i, b) in bits.iter().enumerate() {
            debug_assert!(*b <= 1);
            if *b == 1 {
                out.words[i / 64] |= 1 << (i % 64);
            }
        }
        out
    }

    /// Interprets `len` bits of a little-endian byte string (bit i of the
    /// stream is bit i%8 of byte i/8). Bits past `len` are dropped.
    pub fn from_bytes(bytes: &[u8], len: usize) -> Self {
        assert!(len <= bytes.len() * 8, "length {len} exceeds the byte string");
        let mut out = KeyMaterial::zeros(len);
        for (w, chunk) in out.words.iter_mut().zip(bytes.chunks(8)) {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            *w = u64::from_le_bytes(buf);
        }
        out.mask_tail();
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len.div_ceil(8);
        let mut out = Vec::with_capacity(n);
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.truncate(n);
        out
    }

    pub fn random(len: usize, rng: &mut impl rand::RngCore) -> Self {
        let mut out = KeyMaterial::zeros(len);
        for w in out.words.iter_mut() {
            *w = rng.next_u64();
        }
        out.mask_tail();
        out
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range ({} bits)", self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, bit: bool) {
        assert!(i < self.len, "bit {i} out of range ({} bits)", self.len);
        let mask = 1u64 << (i % 64);
        if bit {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len, "bit {i} out of range ({} bits)", self.len);
        self.words[i / 64] ^= 1 << (i % 64);
    }

    pub fn push(&mut self, bit: bool) {
        if self.len % 64 == 0 {
            self.words.push(0);
        }
        self.len += 1;
        if bit {
            let i = self.len - 1;
            self.words[i / 64] |= 1 << (i % 64);
        }
    }

    pub fn xor(&self, other: &KeyMaterial) -> KeyMaterial {
        assert_eq!(self.len, other.len, "xor of unequal lengths");
        let words = self.words.iter().zip(&other.words).map(|(a, b)| a ^ b).collect();
        KeyMaterial { words, len: self.len }
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    fn mask_tail(&mut self) {
        if self.len % 64 != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << (self.len % 64)) - 1;
            }
        }
    }
}
