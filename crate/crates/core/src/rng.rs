//! Counter-based random streams.
//!
//! Every random quantity in a trial is drawn from a ChaCha8 stream addressed
//! by `(master_seed, lane, trial)`: the 256-bit ChaCha key is expanded from
//! `(master_seed, lane)` with SplitMix64, and the trial index selects the
//! 64-bit ChaCha stream (nonce). Streams never share state, so trials can be
//! evaluated in any order or concurrently and still produce identical draws.
//!
//! Lanes inside a trial: the noise sequence, one dither sequence per
//! transmitter and one fading sequence per transmitter. Keeping transmitters on
//! separate lanes means a transmitter that sends nothing can skip its draws
//! without perturbing anyone else's.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

const NOISE_LANE: u64 = 0;
const INPUT_LANE: u64 = u64::MAX;
const INJECT_LANE: u64 = u64::MAX - 1;
const SAMPLE_LANE: u64 = u64::MAX - 2;

pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for `(master_seed, lane, index)`.
pub fn stream(master_seed: u64, lane: u64, index: u64) -> Stream {
    let mut state = master_seed ^ lane.wrapping_mul(0xD1B5_4A32_D192_ED03);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}

/// Seed for an independent sub-run (sweep row, self-check table, ...).
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    let mut state = master_seed ^ index.wrapping_mul(0xA24B_AED4_963E_E407);
    splitmix64(&mut state)
}

/// Addresses all streams of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialStreams {
    pub master_seed: u64,
    pub trial: u64,
}

impl TrialStreams {
    pub fn new(master_seed: u64, trial: u64) -> Self {
        Self { master_seed, trial }
    }

    pub fn noise(&self) -> Stream {
        stream(self.master_seed, NOISE_LANE, self.trial)
    }

    pub fn dither(&self, k: usize) -> Stream {
        stream(self.master_seed, 1 + 2 * k as u64, self.trial)
    }

    pub fn fading(&self, k: usize) -> Stream {
        stream(self.master_seed, 2 + 2 * k as u64, self.trial)
    }

    pub fn input(&self) -> Stream {
        stream(self.master_seed, INPUT_LANE, self.trial)
    }

    pub fn injection(&self) -> Stream {
        stream(self.master_seed, INJECT_LANE, self.trial)
    }

    pub fn samples(&self) -> Stream {
        stream(self.master_seed, SAMPLE_LANE, self.trial)
    }
}

/// Random signs taken bit by bit from consecutive 64-bit words of a stream,
/// least significant bit first.
pub struct SignBits {
    rng: Stream,
    word: u64,
    left: u32,
}

impl SignBits {
    pub fn new(rng: Stream) -> Self {
        Self { rng, word: 0, left: 0 }
    }

    /// `true` for `+1`.
    #[inline]
    pub fn next_positive(&mut self) -> bool {
        if self.left == 0 {
            self.word = self.rng.next_u64();
            self.left = 64;
        }
        let bit = self.word & 1 == 1;
        self.word >>= 1;
        self.left -= 1;
        bit
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;

    #[test]
    fn streams_are_reproducible() {
        let a: Vec<u64> = (0..8).map(|_| 0).scan(stream(7, 3, 11), |r, _: u64| Some(r.next_u64())).collect();
        let b: Vec<u64> = (0..8).map(|_| 0).scan(stream(7, 3, 11), |r, _: u64| Some(r.next_u64())).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn sign_bits_follow_words() {
        let mut words = stream(4, 5, 6);
        let (w0, w1) = (words.next_u64(), words.next_u64());
        let mut bits = SignBits::new(stream(4, 5, 6));
        let got: Vec<bool> = (0..128).map(|_| bits.next_positive()).collect();
        for i in 0..64 {
            assert_eq!(got[i], (w0 >> i) & 1 == 1);
            assert_eq!(got[64 + i], (w1 >> i) & 1 == 1);
        }
    }

    #[test]
    fn lanes_and_trials_differ() {
        let first = |mut r: Stream| r.next_u64();
        let base = first(stream(7, 3, 11));
        assert_ne!(base, first(stream(7, 4, 11)));
        assert_ne!(base, first(stream(7, 3, 12)));
        assert_ne!(base, first(stream(8, 3, 11)));
        let t = TrialStreams::new(1, 2);
        assert_ne!(first(t.dither(0)), first(t.fading(0)));
        assert_ne!(first(t.fading(0)), first(t.fading(1)));
    }
}
