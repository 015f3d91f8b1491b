//! Per-path random streams.
//!
//! Path `k` of a run seeded with `s` draws from ChaCha8 keyed by `s` on stream
//! `k`; the block counter advances with every draw. A path therefore sees the
//! same numbers whichever worker simulates it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type PathRng = ChaCha8Rng;

pub fn path_rng(seed: u64, path: u64) -> PathRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_keyed_by_seed_and_path() {
        let a: u64 = path_rng(7, 3).random();
        let b: u64 = path_rng(7, 3).random();
        let c: u64 = path_rng(7, 4).random();
        let d: u64 = path_rng(8, 3).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
