//! Splittable deterministic random streams.
//!
//! Every stream is a ChaCha8 generator keyed by the run seed and positioned on
//! its own 64-bit stream id, so chunk `k` of a run draws the same numbers no
//! matter which worker generates it. Normal variates use the inverse-CDF
//! transform (one uniform per draw).

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::erf::erfc_inv;

use crate::par;

/// Number of draws per substream in chunked generation.
pub const CHUNK: usize = 1 << 14;

/// A single deterministic substream.
#[derive(Clone, Debug)]
pub struct Substream {
    rng: ChaCha8Rng,
}

impl Substream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    /// Uniform on the open interval (0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        normal_quantile(self.uniform())
    }
}

/// Standard normal quantile function.
#[inline]
pub fn normal_quantile(u: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
}

/// SplitMix64 finaliser; used to derive per-path seeds from a run seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Apply `draw` to chunked substreams and concatenate in chunk order.
///
/// `draw(stream, len)` must produce the values of one chunk; chunk `k` always
/// uses stream id `k`, which makes the result independent of thread count.
pub fn chunked<T, F>(seed: u64, n: usize, draw: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut Substream, usize) -> Vec<T> + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    let parts = par::map_indexed(chunks, |k| {
        let len = CHUNK.min(n - k * CHUNK);
        let mut s = Substream::new(seed, k as u64);
        draw(&mut s, len)
    });
    let mut out = Vec::with_capacity(n);
    for p in parts {
        out.extend(p);
    }
    out
}

/// `n` standard normal draws.
pub fn standard_normals(seed: u64, n: usize) -> Vec<f64> {
    chunked(seed, n, |s, len| (0..len).map(|_| s.standard_normal()).collect())
}
