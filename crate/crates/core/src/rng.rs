//! Counter-addressed random sub-streams.
//!
//! Every random draw in the crate comes from a ChaCha stream keyed by the
//! master seed and selected by a purpose tag plus up to three coordinates, so
//! results never depend on the order in which workers happen to draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug)]
#[repr(u64)]
pub(crate) enum Purpose {
    SharedColumns = 1,
    PrivateColumns = 2,
    AlsInit = 3,
    Reseed = 4,
    Synthetic = 5,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The stream for `(purpose, a, b, c)` under `seed`.
pub(crate) fn substream(seed: u64, purpose: Purpose, a: u64, b: u64, c: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut id = splitmix(purpose as u64);
    for x in [a, b, c] {
        id = splitmix(id ^ x);
    }
    rng.set_stream(id);
    rng
}

/// A derived 64-bit seed, for handing to routines that take a plain seed.
pub(crate) fn derive_seed(seed: u64, purpose: Purpose, a: u64, b: u64) -> u64 {
    splitmix(splitmix(seed ^ splitmix(purpose as u64 ^ a.rotate_left(21))) ^ b)
}
