//! Seeded random streams.
//!
//! Every generator in the crate is a ChaCha8 stream keyed by
//! `(seed, stream id)`: the 64-bit user seed is expanded with
//! `ChaCha8Rng::seed_from_u64` and the stream id selects an independent
//! ChaCha stream via `set_stream`. ChaCha8 output is specified bit-for-bit,
//! so every draw is reproducible across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Phantom = 1,
    Mask = 2,
    Noise = 3,
    Init = 4,
    Coils = 5,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
