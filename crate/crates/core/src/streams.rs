//! Counter-based random substreams.
//!
//! A stream is identified by `(seed, domain, key, index)`: the first three
//! fix a ChaCha key and `index` selects one of its 2^64 streams. Anything
//! drawn for trial `i` depends only on `i`, never on scheduling.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Separates unrelated uses of the same seed.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub(crate) enum Domain {
    Codebook = 0x6b31,
    Fading = 0x6b32,
    Noise = 0x6b33,
    Activity = 0x6b34,
    Messages = 0x6b35,
    LogDet = 0x6b36,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn substream(seed: u64, domain: Domain, key: u64, index: u64) -> ChaCha8Rng {
    let mut state = splitmix(seed ^ splitmix(domain as u64));
    state = splitmix(state ^ key.rotate_left(17));
    let mut bytes = [0u8; 32];
    for chunk in bytes.chunks_mut(8) {
        state = splitmix(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(bytes);
    rng.set_stream(index);
    rng
}

/// Circularly symmetric CN(0, 1) draw.
pub(crate) fn complex_normal<R: Rng>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// `len` CN(0,1) draws from one substream.
#[cfg(test)]
pub(crate) fn complex_normal_vec(seed: u64, domain: Domain, key: u64, index: u64, len: usize) -> Vec<Complex64> {
    let mut rng = substream(seed, domain, key, index);
    (0..len).map(|_| complex_normal(&mut rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = complex_normal_vec(7, Domain::Codebook, 3, 1, 8);
        let b = complex_normal_vec(7, Domain::Codebook, 3, 1, 8);
        let c = complex_normal_vec(7, Domain::Codebook, 3, 2, 8);
        let d = complex_normal_vec(7, Domain::Noise, 3, 1, 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }
}
