//! Keyed, order-independent random streams.
//!
//! Every random draw in an experiment comes from a stream keyed by a tuple
//! such as `(master, waypoint, subset, trial, bs)`, so trials can run in any
//! order or in parallel and still reproduce bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Stream role, folded into the key so symbols, noise and phases never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Symbols = 1,
    Noise = 2,
    Phase = 3,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a master seed and a key path into one 64-bit seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

pub fn stream(master: u64, path: &[u64], role: Stream) -> ChaCha20Rng {
    let mut key = path.to_vec();
    key.push(role as u64);
    ChaCha20Rng::seed_from_u64(derive_seed(master, &key))
}
