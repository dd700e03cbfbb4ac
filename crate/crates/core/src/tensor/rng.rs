use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Root of all randomness in a run. Each stochastic site asks for a named
/// substream so that adding a new consumer never shifts existing ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    seed: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        SeedStream { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream keyed by `name`; useful for per-fold or per-model scopes.
    pub fn child(&self, name: &str) -> SeedStream {
        SeedStream {
            seed: self.derive(name, 0),
        }
    }

    pub fn rng(&self, name: &str) -> ChaCha8Rng {
        self.rng_indexed(name, 0)
    }

    /// Generator for the `index`-th draw site sharing `name` (e.g. one per
    /// epoch or per batch).
    pub fn rng_indexed(&self, name: &str, index: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.derive(name, index))
    }

    fn derive(&self, name: &str, index: u64) -> u64 {
        // FNV-1a over the name, then splitmix64 finalization with the seed.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in name.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        splitmix64(splitmix64(self.seed ^ h).wrapping_add(index))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
