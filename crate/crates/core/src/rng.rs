//! Seeded random streams.
//!
//! Every run seed fans out into independent ChaCha streams so that adding or
//! changing one consumer never shifts the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifies one consumer of randomness within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    EnvConstruction,
    EnvNoise,
    Alexp,
    Corral,
    Etc,
    Ets,
    OracleUcb,
    NaiveUcb,
    Diagnostics,
    ModelSample,
    Custom(u64),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::EnvConstruction => 1,
            Stream::EnvNoise => 2,
            Stream::Alexp => 10,
            Stream::Corral => 11,
            Stream::Etc => 12,
            Stream::Ets => 13,
            Stream::OracleUcb => 14,
            Stream::NaiveUcb => 15,
            Stream::Diagnostics => 20,
            Stream::ModelSample => 21,
            Stream::Custom(k) => 1_000 + k,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}
