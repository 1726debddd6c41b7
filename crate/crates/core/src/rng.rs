use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent, reproducible stream for one purpose within a seeded run.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) mod streams {
    pub const LAYOUT: u64 = 1;
    pub const LIGHT: u64 = 2;
    pub const NETWORK: u64 = 3;
    pub const REPLAY: u64 = 4;
    pub const ROBOT_BASE: u64 = 1_000;
}
