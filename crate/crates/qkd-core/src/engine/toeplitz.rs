//! Seeded two-universal hashing for verification and privacy amplification.
//!
//! The matrix is constant along diagonals and fully determined by a strip of
//! out_len + in_len - 1 random bits: output bit i is the parity of the input
//! ANDed with the strip window starting at i. For any fixed nonzero input
//! difference the output difference is uniform over the strip draw, which is
//! the property both verification and amplification rely on.

use super::bits::KeyMaterial;
use crate::rng::RandomStream;

/// Number of digest bits verification publishes for a correctness target.
pub fn verify_digest_bits(eps_cor: f64) -> u32 {
    assert!(eps_cor > 0.0 && eps_cor < 1.0, "eps_cor {eps_cor} out of range");
    (1.0 / eps_cor).log2().ceil() as u32
}

pub fn strip_len(out_len: usize, in_len: usize) -> usize {
    if out_len == 0 || in_len == 0 {
        0
    } else {
        out_len + in_len - 1
    }
}

/// Draws the diagonal strip for an (out_len x in_len) hash from a seed. The
/// label keeps verification and amplification strips independent even under
/// an identical seed.
pub fn hash_strip(seed: u64, label: &str, out_len: usize, in_len: usize) -> KeyMaterial {
    let mut rng = RandomStream::new(seed, label);
    KeyMaterial::random(strip_len(out_len, in_len), &mut rng)
}

/// Hashes `input` down to `out_len` bits with the given diagonal strip.
pub fn toeplitz_hash(strip: &KeyMaterial, input: &KeyMaterial, out_len: usize) -> KeyMaterial {
    let n = input.len();
    assert_eq!(strip.len(), strip_len(out_len, n), "strip sized for a different shape");
    let mut out = KeyMaterial::zeros(out_len);
    if n == 0 {
        return out;
    }
    let words = input.words();
    for i in 0..out_len {
        // parity of input AND strip[i .. i+n); the input's zero tail masks
        // whatever the shifted strip words carry past the window
        let mut acc = 0u64;
        for (w, iw) in words.iter().enumerate() {
            acc ^= iw & strip_word(strip, i + 64 * w);
        }
        if acc.count_ones() % 2 == 1 {
            out.set(i, true);
        }
    }
    out
}

/// 64 strip bits starting at an arbitrary bit offset, zero-padded past the end.
#[inline]
fn strip_word(strip: &KeyMaterial, pos: usize) -> u64 {
    let words = strip.words();
    let word_at = |i: usize| words.get(i).copied().unwrap_or(0);
    let lo = word_at(pos / 64) >> (pos % 64);
    if pos % 64 == 0 {
        lo
    } else {
        lo | word_at(pos / 64 + 1) << (64 - pos % 64)
    }
}
