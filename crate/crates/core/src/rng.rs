//! Counter-based random streams.
//!
//! Every random quantity in the crate is a pure function of a 64-bit key and
//! a counter, so a value can be regenerated in isolation (row `i` of layer
//! `l` never depends on rows `0..i`). This is what keeps the `n x k` layer
//! candidates off the heap and makes results independent of thread count.
//!
//! Keys are derived by folding a path of tags into a seed with the SplitMix64
//! finalizer; words are the SplitMix64 sequence `mix(key + (c + 1) * gamma)`.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const DOMAIN: u64 = 0x5748_4c4d_7772_6d68;

/// Stream tags, so independent uses of one user seed never share a stream.
pub mod tag {
    pub const CANDIDATE_LAYER: u64 = 1;
    pub const HYPERPLANES: u64 = 2;
    pub const SAMPLES: u64 = 3;
    pub const RANDOM_SELECTION: u64 = 4;
    pub const TESTS: u64 = 5;
    pub const ANCHOR: u64 = 6;
    pub const FRESH: u64 = 7;
    pub const RUN: u64 = 8;
    pub const KMEANS: u64 = 9;
    pub const PCA_START: u64 = 10;
}

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `path` into `seed`, producing the key of an independent stream.
pub fn derive_key(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix64(seed ^ DOMAIN), |key, &p| {
        mix64(key ^ mix64(p.wrapping_add(GAMMA)))
    })
}

/// A stateless stream of words addressed by counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(key: u64) -> Self {
        Self { key }
    }

    pub fn from_path(seed: u64, path: &[u64]) -> Self {
        Self::new(derive_key(seed, path))
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// Sub-stream `index` of this stream.
    pub fn child(&self, index: u64) -> Self {
        Self::new(mix64(self.key ^ mix64(index.wrapping_add(GAMMA))))
    }

    #[inline]
    pub fn word(&self, counter: u64) -> u64 {
        mix64(
            self.key
                .wrapping_add(counter.wrapping_add(1).wrapping_mul(GAMMA)),
        )
    }

    /// Uniform in [0, 1) with 53 bits of resolution.
    #[inline]
    pub fn uniform(&self, counter: u64) -> f64 {
        (self.word(counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Box-Muller on one 64-bit word split into two 32-bit uniforms; the
    /// radius draw is offset by half a step so it never reaches zero.
    #[inline]
    pub fn normal_pair(&self, counter: u64) -> (f64, f64) {
        const SCALE: f64 = 1.0 / 4_294_967_296.0;
        let w = self.word(counter);
        let u1 = ((w >> 32) as f64 + 0.5) * SCALE;
        let u2 = (w & 0xFFFF_FFFF) as f64 * SCALE;
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (TAU * u2).sin_cos();
        (r * c, r * s)
    }

    /// Fills `out` with standard normals; entry `j` is a function of `j` alone.
    pub fn fill_normals(&self, out: &mut [f64]) {
        let mut pairs = out.chunks_exact_mut(2);
        let mut counter = 0u64;
        for pair in &mut pairs {
            let (a, b) = self.normal_pair(counter);
            pair[0] = a;
            pair[1] = b;
            counter += 1;
        }
        if let [last] = pairs.into_remainder() {
            *last = self.normal_pair(counter).0;
        }
    }

    pub fn normals(&self, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        self.fill_normals(&mut out);
        out
    }

    /// A sequential generator seeded from this stream, for the few places
    /// (index sampling, shuffles) that want the `rand` API.
    pub fn seeded_rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a = CounterRng::from_path(7, &[tag::SAMPLES, 3]);
        let b = CounterRng::from_path(7, &[tag::SAMPLES, 3]);
        let c = CounterRng::from_path(7, &[tag::SAMPLES, 4]);
        assert_eq!(a.normals(9), b.normals(9));
        assert_ne!(a.normals(9), c.normals(9));
        assert_ne!(derive_key(1, &[]), derive_key(2, &[]));
    }

    #[test]
    fn fill_is_prefix_consistent() {
        let rng = CounterRng::new(99);
        let long = rng.normals(11);
        let short = rng.normals(6);
        assert_eq!(&long[..6], &short[..]);
    }

    #[test]
    fn normal_moments_are_plausible() {
        let rng = CounterRng::new(12345);
        let xs = rng.normals(200_000);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.015, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
        assert!(xs.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn uniform_in_unit_interval() {
        let rng = CounterRng::new(5);
        assert!((0..10_000)
            .map(|i| rng.uniform(i))
            .all(|u| (0.0..1.0).contains(&u)));
    }
}
