//! Seed expansion. One master seed per run feeds independent ChaCha streams,
//! so the environment of two algorithms run on the same seed draws the same
//! randomness wherever their interaction patterns coincide.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Instance = 0,
    Environment = 1,
    Algorithm = 2,
    Selection = 3,
}

pub fn stream_rng(master: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream as u64);
    rng
}
