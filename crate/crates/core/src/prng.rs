//! Pinned pseudo-random generator for reproducible sampling.
//!
//! Subsampling must give identical results on every platform and from every
//! language binding, so the generator is spelled out here instead of
//! delegating to a library whose algorithm may change between versions:
//! a SplitMix64 stream expands the seed into xoshiro256** state, and
//! selection uses a partial Fisher-Yates shuffle with `next % remaining`
//! index mapping.

/// SplitMix64 stepping: `state` advances by the golden-gamma constant and the
/// output is the finalized mix of the new state.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// xoshiro256** seeded via SplitMix64.
#[derive(Debug, Clone)]
pub struct Prng {
    s: [u64; 4],
}

impl Prng {
    pub fn seed_from(seed: u64) -> Self {
        let mut sm = seed;
        Prng {
            s: [
                splitmix64(&mut sm),
                splitmix64(&mut sm),
                splitmix64(&mut sm),
                splitmix64(&mut sm),
            ],
        }
    }

    /// Derive an independent stream for a named sub-task (e.g. one sample's
    /// target assignment) by folding an FNV-1a hash of the tag into the seed.
    pub fn seed_from_tagged(seed: u64, tag: &str) -> Self {
        Prng::seed_from(seed ^ fnv1a64(tag.as_bytes()))
    }

    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform index in `0..bound`. Plain modulo mapping, kept because the
    /// bias is negligible at bench scale and the mapping must stay
    /// bit-identical across language ports.
    pub fn next_index(&mut self, bound: usize) -> usize {
        debug_assert!(bound > 0);
        (self.next_u64() % bound as u64) as usize
    }

    /// Uniform f64 in [0, 1) from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

fn fnv1a64(data: &[u8]) -> u64 {
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for &b in data {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// First `n` positions of a seeded Fisher-Yates shuffle over `0..len`.
/// With `n == len` this is a full permutation.
pub fn partial_shuffle_indices(len: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = Prng::seed_from(seed);
    let mut idx: Vec<usize> = (0..len).collect();
    for i in 0..n.min(len) {
        let j = i + rng.next_index(len - i);
        idx.swap(i, j);
    }
    idx.truncate(n);
    idx
}
