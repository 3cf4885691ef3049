//! Deterministic random streams.
//!
//! Every random decision in a simulation draws from a stream identified by
//! `(seed, purpose, client, round)`. Streams never share state, so the order
//! in which clients execute cannot change what any of them draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A seekable ChaCha8 stream. Equal `(seed, stream_id)` pairs always yield
/// the same sequence.
pub type RandomStream = ChaCha8Rng;

/// Returns the stream `stream_id` of the generator keyed by `seed`.
pub fn seeded_rng(seed: u64, stream_id: u64) -> RandomStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// What a stream is used for. The discriminant occupies the top byte of the
/// stream id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    DataGen = 1,
    TestSet = 2,
    TraceGen = 3,
    ModelInit = 4,
    PreFlProfile = 5,
    Cohort = 6,
    Latency = 7,
    Selection = 8,
    Training = 9,
    Metadata = 10,
}

/// Packs `(purpose, client, round)` into a stream id: 8 bits of purpose,
/// 24 bits of client index, 32 bits of round index.
pub fn stream_id(purpose: Purpose, client: usize, round: usize) -> u64 {
    debug_assert!(client < 1 << 24, "client index {client} exceeds 24 bits");
    ((purpose as u64) << 56) | (((client as u64) & 0xFF_FFFF) << 32) | ((round as u64) & 0xFFFF_FFFF)
}

/// Shorthand for `seeded_rng(seed, stream_id(purpose, client, round))`.
pub fn stream(seed: u64, purpose: Purpose, client: usize, round: usize) -> RandomStream {
    seeded_rng(seed, stream_id(purpose, client, round))
}
