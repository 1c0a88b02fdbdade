//! Deterministic RNG stream derivation.
//!
//! Every random draw in a run comes from a stream that is a pure function of
//! the master seed plus a structural path such as
//! `(master, "metagame", meta_iter, row, col, run)`. Results are therefore
//! independent of scheduling and of the number of worker threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive an independent RNG stream from the master seed, a domain label,
/// and a structural path.
pub fn derive_rng(master: u64, label: &str, path: &[u64]) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update([label.len() as u8]);
    hasher.update(label.as_bytes());
    for part in path {
        hasher.update(part.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible() {
        let mut a = derive_rng(7, "metagame", &[1, 2, 3]);
        let mut b = derive_rng(7, "metagame", &[1, 2, 3]);
        let xs: Vec<u64> = (0..8).map(|_| a.gen()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.gen()).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn streams_with_different_paths_differ() {
        let mut a = derive_rng(7, "metagame", &[1, 2, 3]);
        let mut b = derive_rng(7, "metagame", &[1, 2, 4]);
        let mut c = derive_rng(7, "pretrain", &[1, 2, 3]);
        let x: u64 = a.gen();
        assert_ne!(x, b.gen::<u64>());
        assert_ne!(x, c.gen::<u64>());
    }

    #[test]
    fn label_lengths_do_not_collide() {
        // ("ab", [path starting with 'c' bytes]) must not equal ("abc", ...).
        let mut a = derive_rng(0, "ab", &[99]);
        let mut b = derive_rng(0, "abc", &[]);
        assert_ne!(a.gen::<u64>(), b.gen::<u64>());
    }
}
