use std::hash::Hasher;

use fnv::FnvHasher;

use crate::text::raw_tokens;

pub const HASH_EMBEDDING_DIM: usize = 64;
pub const HASH_EMBEDDING_SEED: u64 = 0x636f_6b67_5eed_0001;

/// Deterministic bag-of-words embedding.
///
/// For every lowercased word token `t` and coordinate `i`, the FNV-1a 64-bit
/// hash of `seed (8 bytes LE) || t (UTF-8) || 0xFF || i (4 bytes LE)` is mapped
/// to `h / u64::MAX * 2 - 1` and summed over tokens. Tokens are summed in
/// sorted order so any permutation of the same multiset gives identical bits.
/// The result is L2-normalized; text without tokens maps to the zero vector.
pub fn hash_embedding(text: &str, dimension: usize, seed: u64) -> Vec<f32> {
    let mut tokens = raw_tokens(text);
    tokens.sort();
    let mut acc = vec![0.0f64; dimension];
    for token in &tokens {
        for (i, slot) in acc.iter_mut().enumerate() {
            let mut h = FnvHasher::default();
            h.write(&seed.to_le_bytes());
            h.write(token.as_bytes());
            h.write(&[0xFF]);
            h.write(&(i as u32).to_le_bytes());
            *slot += h.finish() as f64 / u64::MAX as f64 * 2.0 - 1.0;
        }
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        acc.iter().map(|v| (v / norm) as f32).collect()
    } else {
        vec![0.0; dimension]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_normalized() {
        let a = hash_embedding("a", HASH_EMBEDDING_DIM, HASH_EMBEDDING_SEED);
        let b = hash_embedding("a", HASH_EMBEDDING_DIM, HASH_EMBEDDING_SEED);
        assert_eq!(a, b);
        let norm: f32 = a.iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-5);
    }

    #[test]
    fn permutation_invariant() {
        let a = hash_embedding("carbon sinks absorb carbon", 64, 7);
        let b = hash_embedding("absorb Carbon carbon, sinks", 64, 7);
        assert_eq!(a, b);
    }

    #[test]
    fn empty_text_is_zero() {
        assert!(hash_embedding("  ...  ", 8, 1).iter().all(|v| *v == 0.0));
    }
}
