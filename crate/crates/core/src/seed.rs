//! Deterministic RNG stream derivation.
//!
//! Every random decision in a run is drawn from a stream addressed by
//! `(master_seed, domain, index)`. Pulse simulation uses one stream per
//! pulse index, so any parallel schedule over pulses reproduces the same
//! records bit for bit; global stages (dark counts, standalone ops) use
//! their own domains at index 0.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream domains. Each domain gets an unrelated ChaCha key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamDomain {
    /// Per-pulse physics: source sampling, propagation, splitter, detector
    /// efficiency and jitter.
    Pulse = 1,
    /// Standalone beamsplit calls outside the per-pulse pipeline.
    Split = 2,
    /// Standalone detect calls, channel A.
    DetectA = 3,
    /// Standalone detect calls, channel B.
    DetectB = 4,
    /// Dark-count Poisson process, channel A.
    DarkA = 5,
    /// Dark-count Poisson process, channel B.
    DarkB = 6,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer; also used to derive the cheap per-pulse head draw.
pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// ChaCha8 stream for `(master_seed, domain, index)`.
pub fn stream_rng(master_seed: u64, domain: StreamDomain, index: u64) -> ChaCha8Rng {
    let key = splitmix64(master_seed ^ (domain as u64).wrapping_mul(GOLDEN));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// Per-pulse RNG.
///
/// The first `next_u64` comes from a SplitMix64 hash of
/// `(master_seed, pulse_index)`; the ChaCha stream behind it is only
/// constructed if the pulse needs more draws. Pulses with zero photons
/// consume exactly the head draw, which keeps billion-pulse runs cheap
/// without giving up per-pulse stream independence.
pub struct PulseRng {
    head: Option<u64>,
    master_seed: u64,
    pulse_index: u64,
    body: Option<ChaCha8Rng>,
}

impl PulseRng {
    pub fn new(master_seed: u64, pulse_index: u64) -> Self {
        let head = splitmix64(
            splitmix64(master_seed ^ (StreamDomain::Pulse as u64).wrapping_mul(GOLDEN))
                ^ pulse_index,
        );
        Self {
            head: Some(head),
            master_seed,
            pulse_index,
            body: None,
        }
    }

    fn body(&mut self) -> &mut ChaCha8Rng {
        if self.body.is_none() {
            self.body = Some(stream_rng(
                self.master_seed,
                StreamDomain::Pulse,
                self.pulse_index,
            ));
        }
        self.body.as_mut().unwrap()
    }
}

impl RngCore for PulseRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        match self.head.take() {
            Some(v) => v,
            None => self.body().next_u64(),
        }
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let bytes = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
