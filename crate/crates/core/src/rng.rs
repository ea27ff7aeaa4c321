//! Reproducible random streams.
//!
//! Every random draw comes from a ChaCha8 generator keyed by a 64-bit seed and
//! addressed by a stream id, so trial `(point, trial)` always sees the same
//! numbers regardless of which worker runs it or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named random streams of one problem instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Channels = 1,
    Data = 2,
    Mask = 3,
    Noise = 4,
    Init = 5,
}

/// Seeds for each named stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamSeeds {
    pub channels: u64,
    pub data: u64,
    pub mask: u64,
    pub noise: u64,
    pub init: u64,
}

impl StreamSeeds {
    /// All streams keyed by the same seed; the stream id keeps them apart.
    pub fn uniform(seed: u64) -> Self {
        Self {
            channels: seed,
            data: seed,
            mask: seed,
            noise: seed,
            init: seed,
        }
    }

    /// Seeds for trial `trial` of grid point `point` under a master seed.
    pub fn for_trial(master: u64, point: u64, trial: u64) -> Self {
        Self::uniform(mix(mix(mix(master) ^ point) ^ trial.wrapping_mul(0x9E37_79B9_7F4A_7C15)))
    }

    pub fn seed(&self, stream: Stream) -> u64 {
        match stream {
            Stream::Channels => self.channels,
            Stream::Data => self.data,
            Stream::Mask => self.mask,
            Stream::Noise => self.noise,
            Stream::Init => self.init,
        }
    }

    pub fn rng(&self, stream: Stream) -> ChaCha8Rng {
        stream_rng(self.seed(stream), stream)
    }
}

/// Generator for `seed` on a given stream.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
