//! Counter-based random streams.
//!
//! Every random draw is addressed by `(master seed, purpose, replica, counter)`.
//! The tuple is hashed into the state of a small PCG generator, so a stream can
//! be opened anywhere without replaying earlier draws and thread scheduling has
//! no influence on results.

use rand::RngCore;
use rand_pcg::Pcg64Mcg;

/// Final mixing step of SplitMix64.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for a named purpose (reference draws, surrogate
/// trees, permutations, ...).
pub fn derive_seed(master: u64, purpose: &str) -> u64 {
    purpose
        .bytes()
        .fold(mix64(master ^ 0x5851_F42D_4C95_7F2D), |h, b| mix64(h ^ u64::from(b)))
}

/// Seed of one replica under a master seed.
#[inline]
pub fn replica_seed(master: u64, replica: u64) -> u64 {
    mix64(mix64(master) ^ replica.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Generator for draw number `counter` of a replica seed.
#[inline]
pub fn stream(replica_seed: u64, counter: u64) -> Pcg64Mcg {
    let hi = mix64(replica_seed ^ counter.wrapping_mul(0xA24B_AED4_963E_E407));
    let lo = mix64(hi ^ counter);
    Pcg64Mcg::new((u128::from(hi) << 64) | u128::from(lo))
}

/// SplitMix64 sequence started at a hashed key. Used for the per-node streams
/// of the simulator, where a stream produces only a handful of draws and the
/// setup cost of a larger generator would dominate.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    #[inline]
    pub fn new(key: u64) -> Self {
        Self { state: key }
    }
}

impl RngCore for SplitMix64 {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        let z = self.state;
        self.state = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        mix64(z)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}
