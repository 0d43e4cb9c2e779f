//! Counter-based splitting of one master seed into independent streams.
//!
//! Each stream is a ChaCha8 generator keyed by the master seed, with the
//! stream id derived from a path of integers (stage, coordinate, iteration,
//! ...). The same path always yields the same stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Generator for the stream addressed by `path` under `master`.
pub fn stream(master: u64, path: &[u64]) -> ChaCha8Rng {
    let mut id = 0x5eed_0000_0000_0001u64;
    for &p in path {
        id = mix(id ^ mix(p));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(id);
    rng
}
