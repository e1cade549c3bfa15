use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xxhash_rust::xxh64::xxh64;

pub type StreamRng = ChaCha8Rng;

/// Independent RNG stream keyed by `(seed, label)`. Streams with different
/// labels never share state, so adding draws to one leaves the others intact.
pub fn stream(seed: u64, label: &str) -> StreamRng {
    ChaCha8Rng::seed_from_u64(xxh64(label.as_bytes(), seed))
}
