//! Counter-based random numbers.
//!
//! Every variate is a pure function of `(key, counter)` through the
//! Philox4x32-10 block cipher, so a draw identified by (seed, replica, step,
//! particle, component) is the same no matter which worker computes it or in
//! which order. Uniforms take 52 bits from two output words and are mapped to
//! the open interval `(0, 1)`; normals use the inverse CDF of that uniform.

use crate::numeric::inverse_normal_cdf;

const M0: u32 = 0xD251_1F53;
const M1: u32 = 0xCD9E_8D57;
const W0: u32 = 0x9E37_79B9;
const W1: u32 = 0xBB67_AE85;

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let p = a as u64 * b as u64;
    ((p >> 32) as u32, p as u32)
}

/// The Philox4x32 bijection with 10 rounds.
#[inline]
pub fn philox4x32_10(counter: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = counter;
    let mut k = key;
    for round in 0..10 {
        if round > 0 {
            k[0] = k[0].wrapping_add(W0);
            k[1] = k[1].wrapping_add(W1);
        }
        let (hi0, lo0) = mulhilo(M0, c[0]);
        let (hi1, lo1) = mulhilo(M1, c[2]);
        c = [hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0];
    }
    c
}

/// Maps two 32-bit words to a uniform in `(0, 1)` on the midpoints of a
/// `2^-52` grid, so both ends stay strictly excluded.
#[inline(always)]
pub fn words_to_open_unit(hi: u32, lo: u32) -> f64 {
    let bits = ((hi as u64) << 20) | ((lo as u64) >> 12);
    (bits as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Purpose tags that separate independent streams derived from one seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u32)]
pub enum Domain {
    DynamicsNoise = 1,
    InitialLaw = 2,
    Audit = 3,
    Scratch = 4,
}

/// Philox key derived from a 64-bit seed and a domain tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoiseKey([u32; 2]);

impl NoiseKey {
    pub fn new(seed: u64, domain: Domain) -> Self {
        let mixed = splitmix64(seed ^ ((domain as u64) << 56));
        NoiseKey([mixed as u32, (mixed >> 32) as u32])
    }

    /// Two standard normals addressed by a four-word counter.
    #[inline]
    pub fn normal_pair(&self, counter: [u32; 4]) -> (f64, f64) {
        let w = philox4x32_10(counter, self.0);
        (
            inverse_normal_cdf(words_to_open_unit(w[0], w[1])),
            inverse_normal_cdf(words_to_open_unit(w[2], w[3])),
        )
    }

    /// Fills `out` with standard normals for the address `(a, b, c, ·)`; the
    /// last counter word enumerates pairs.
    #[inline]
    pub fn fill_normals(&self, a: u32, b: u32, c: u32, out: &mut [f64]) {
        for (block, chunk) in out.chunks_mut(2).enumerate() {
            let w = philox4x32_10([a, b, c, block as u32], self.0);
            chunk[0] = inverse_normal_cdf(words_to_open_unit(w[0], w[1]));
            if chunk.len() > 1 {
                chunk[1] = inverse_normal_cdf(words_to_open_unit(w[2], w[3]));
            }
        }
    }
}

/// Sequential generator over a counter-based stream, for draws that have no
/// natural multi-index (audit samples, scratch data in tests).
#[derive(Clone, Debug)]
pub struct CounterRng {
    key: NoiseKey,
    stream: u32,
    index: u64,
    spare: Option<f64>,
}

impl CounterRng {
    pub fn new(seed: u64, domain: Domain, stream: u32) -> Self {
        Self {
            key: NoiseKey::new(seed, domain),
            stream,
            index: 0,
            spare: None,
        }
    }

    fn next_block(&mut self) -> [u32; 4] {
        let c = [self.stream, 0x5EED_5EED, self.index as u32, (self.index >> 32) as u32];
        self.index += 1;
        philox4x32_10(c, self.key.0)
    }

    pub fn uniform(&mut self) -> f64 {
        let w = self.next_block();
        words_to_open_unit(w[0], w[1])
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let w = self.next_block();
        let z0 = inverse_normal_cdf(words_to_open_unit(w[0], w[1]));
        self.spare = Some(inverse_normal_cdf(words_to_open_unit(w[2], w[3])));
        z0
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n.saturating_sub(1))
    }
}
