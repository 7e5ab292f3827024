//! All randomness in the toolkit flows from explicitly seeded ChaCha8 streams.
//!
//! ChaCha8 output is specified bit-for-bit and does not depend on platform or
//! word size, so a `(seed, stream)` pair names the same sequence everywhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Independent sub-streams used by the toolkit for a single seed.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const SOURCE: u64 = 3;
    pub const CORPUS: u64 = 4;
    pub const CHANNEL: u64 = 5;
}

pub fn seeded(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
