//! Counter-based Gaussian streams.
//!
//! Every stream is addressed by an [`RngKey`]. The global seed becomes the
//! 64-bit Philox key; the remaining key fields plus the block index form the
//! 128-bit counter:
//!
//! ```text
//! ctr[0] = block index        ctr[1] = member_id
//! ctr[2] = step_index         ctr[3] = role << 24 | layer_id
//! ```
//!
//! Each Philox4x32-10 block yields four `u32` words, converted to two
//! Box–Muller pairs. Sample `i` depends only on `(key, i)`, so any stream is a
//! prefix of every longer stream with the same key, and distinct keys never
//! share a counter.

use std::f64::consts::TAU;

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;

/// Purpose of a random stream. Part of the key, so roles never collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum StreamRole {
    Latent = 0,
    PixelNoise = 1,
    DataForcing = 2,
    InitPerturbation = 3,
    /// Tie breaking in verification and other bookkeeping draws.
    Auxiliary = 4,
}

impl StreamRole {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u64) -> Option<Self> {
        Some(match code {
            0 => Self::Latent,
            1 => Self::PixelNoise,
            2 => Self::DataForcing,
            3 => Self::InitPerturbation,
            4 => Self::Auxiliary,
            _ => return None,
        })
    }
}

/// Address of one random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngKey {
    pub global_seed: u64,
    pub member_id: u32,
    /// Only the low 24 bits participate in the counter.
    pub layer_id: u32,
    pub step_index: u32,
    pub role: StreamRole,
}

impl RngKey {
    pub const LAYER_BITS: u32 = 24;

    pub fn new(global_seed: u64, member_id: u32, layer_id: u32, step_index: u32, role: StreamRole) -> Self {
        Self {
            global_seed,
            member_id,
            layer_id,
            step_index,
            role,
        }
    }

    pub fn with_layer(self, layer_id: u32) -> Self {
        Self { layer_id, ..self }
    }

    pub fn with_role(self, role: StreamRole) -> Self {
        Self { role, ..self }
    }

    pub fn with_member(self, member_id: u32) -> Self {
        Self { member_id, ..self }
    }

    pub fn with_step(self, step_index: u32) -> Self {
        Self { step_index, ..self }
    }

    /// The five fields widened to `u64`, in archive order.
    pub fn to_words(self) -> [u64; 5] {
        [
            self.global_seed,
            self.member_id as u64,
            self.layer_id as u64,
            self.step_index as u64,
            self.role.code() as u64,
        ]
    }

    pub fn from_words(w: [u64; 5]) -> Option<Self> {
        let narrow = |v: u64| u32::try_from(v).ok();
        Some(Self {
            global_seed: w[0],
            member_id: narrow(w[1])?,
            layer_id: narrow(w[2]).filter(|l| *l < (1 << Self::LAYER_BITS))?,
            step_index: narrow(w[3])?,
            role: StreamRole::from_code(w[4])?,
        })
    }

    fn counter(&self, block: u32) -> [u32; 4] {
        let tag = ((self.role.code() as u32) << Self::LAYER_BITS) | (self.layer_id & ((1 << Self::LAYER_BITS) - 1));
        [block, self.member_id, self.step_index, tag]
    }

    fn philox_key(&self) -> [u32; 2] {
        [self.global_seed as u32, (self.global_seed >> 32) as u32]
    }
}

#[inline(always)]
fn round(ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let p0 = (ctr[0] as u64).wrapping_mul(PHILOX_M0 as u64);
    let p1 = (ctr[2] as u64).wrapping_mul(PHILOX_M1 as u64);
    [
        ((p1 >> 32) as u32) ^ ctr[1] ^ key[0],
        p1 as u32,
        ((p0 >> 32) as u32) ^ ctr[3] ^ key[1],
        p0 as u32,
    ]
}

/// Philox4x32 with 10 rounds.
#[inline]
pub fn philox4x32_10(ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let mut c = ctr;
    let mut k = key;
    for _ in 0..10 {
        c = round(c, k);
        k[0] = k[0].wrapping_add(PHILOX_W0);
        k[1] = k[1].wrapping_add(PHILOX_W1);
    }
    c
}

/// Uniform in (0, 1]; never zero so the logarithm is finite.
#[inline(always)]
fn open_low(u: u32) -> f64 {
    (u as f64 + 1.0) * (1.0 / 4_294_967_296.0)
}

/// Uniform in [0, 1).
#[inline(always)]
fn closed_low(u: u32) -> f64 {
    u as f64 * (1.0 / 4_294_967_296.0)
}

#[inline(always)]
fn box_muller(a: u32, b: u32) -> (f64, f64) {
    let r = (-2.0 * open_low(a).ln()).sqrt();
    let theta = TAU * closed_low(b);
    (r * theta.cos(), r * theta.sin())
}

/// Four standard normals from Philox block `block` of `key`.
pub fn gaussian_block(key: &RngKey, block: u32) -> [f64; 4] {
    let w = philox4x32_10(key.counter(block), key.philox_key());
    let (z0, z1) = box_muller(w[0], w[1]);
    let (z2, z3) = box_muller(w[2], w[3]);
    [z0, z1, z2, z3]
}

/// Four uniforms in [0, 1) from Philox block `block` of `key`.
pub fn uniform_block(key: &RngKey, block: u32) -> [f64; 4] {
    let w = philox4x32_10(key.counter(block), key.philox_key());
    w.map(closed_low)
}

/// Fills `out` with the first `out.len()` samples of the stream.
pub fn fill_gaussian<T: crate::Scalar>(key: &RngKey, out: &mut [T]) {
    for (block, chunk) in out.chunks_mut(4).enumerate() {
        let z = gaussian_block(key, block as u32);
        for (o, v) in chunk.iter_mut().zip(z) {
            *o = T::lit(v);
        }
    }
}

/// First `n` standard-normal samples of the stream addressed by `key`.
pub fn gaussian_stream(key: &RngKey, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    fill_gaussian(key, &mut out);
    out
}

/// First `n` uniform samples in [0, 1) of the stream addressed by `key`.
pub fn uniform_stream(key: &RngKey, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut block = 0u32;
    while out.len() < n {
        for v in uniform_block(key, block) {
            if out.len() < n {
                out.push(v);
            }
        }
        block += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(member: u32) -> RngKey {
        RngKey::new(7, member, 1, 3, StreamRole::Latent)
    }

    #[test]
    fn philox_known_answer() {
        // Random123 reference vectors for philox4x32_10.
        assert_eq!(
            philox4x32_10([0, 0, 0, 0], [0, 0]),
            [0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8]
        );
        assert_eq!(
            philox4x32_10([0xffffffff; 4], [0xffffffff; 2]),
            [0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd]
        );
        assert_eq!(
            philox4x32_10(
                [0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344],
                [0xa4093822, 0x299f31d0]
            ),
            [0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1]
        );
    }

    #[test]
    fn same_key_same_sequence() {
        let a = gaussian_stream(&key(0), 1001);
        let b = gaussian_stream(&key(0), 1001);
        assert_eq!(a, b);
    }

    #[test]
    fn stream_is_prefix_of_longer_stream() {
        let short = gaussian_stream(&key(2), 13);
        let long = gaussian_stream(&key(2), 64);
        assert_eq!(short[..], long[..13]);
    }

    #[test]
    fn member_streams_are_uncorrelated() {
        let n = 100_000;
        let a = gaussian_stream(&key(0), n);
        let b = gaussian_stream(&key(1), n);
        let rho = correlation(&a, &b);
        assert!(rho.abs() < 0.05, "rho = {rho}");
    }

    #[test]
    fn long_stream_moments() {
        let n = 1_000_000;
        let x = gaussian_stream(&RngKey::new(99, 0, 0, 0, StreamRole::PixelNoise), n);
        let mean = x.iter().sum::<f64>() / n as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean = {mean}");
        assert!((var - 1.0).abs() < 0.01, "var = {var}");
    }

    #[test]
    fn key_words_round_trip() {
        let k = RngKey::new(u64::MAX, 5, 3, 17, StreamRole::PixelNoise);
        assert_eq!(RngKey::from_words(k.to_words()), Some(k));
        assert_eq!(RngKey::from_words([0, 0, 0, 0, 9]), None);
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma).powi(2);
            sbb += (y - mb).powi(2);
        }
        sab / (saa * sbb).sqrt()
    }
}
