//! Deterministic pseudo-random streams.
//!
//! Every source of randomness in the simulator (frame allocation, replacement
//! draws, latency jitter, scheduler gaps, noise injection) pulls from a
//! [`SimRng`] derived from the experiment seed, so a run is a pure function of
//! its configuration. The generator is splitmix64: tiny, fast, and stable
//! across platforms.

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent stream seed for a named consumer.
///
/// Consumers must not share streams; deriving by a distinct `salt` keeps the
/// draw order of one subsystem from perturbing another.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    mix(seed.wrapping_add(GAMMA).wrapping_mul(2).wrapping_add(salt ^ GAMMA))
}

#[derive(Debug, Clone)]
pub struct SimRng {
    state: u64,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        SimRng { state: seed }
    }

    /// Child stream named by `salt`; independent of this stream's position.
    pub fn derive(&self, salt: u64) -> SimRng {
        SimRng::new(derive_seed(self.state, salt))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix(self.state)
    }

    pub fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    /// Uniform value in `[0, bound)`. `bound` must be non-zero.
    pub fn below(&mut self, bound: u64) -> u64 {
        debug_assert!(bound > 0);
        // 128-bit multiply avoids the modulo bias for small bounds.
        (((self.next_u64() as u128) * (bound as u128)) >> 64) as u64
    }

    pub fn index(&mut self, len: usize) -> usize {
        self.below(len as u64) as usize
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn chance(&mut self, p: f64) -> bool {
        p > 0.0 && self.next_f64() < p
    }

    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.index(i + 1);
            slice.swap(i, j);
        }
    }

    /// Non-negative integer noise with a geometric tail of the given mean.
    ///
    /// Right-skewed, matching the shape of measured access-time histograms.
    /// A mean of zero disables the noise entirely.
    pub fn geometric(&mut self, mean: f64) -> u64 {
        if mean <= 0.0 {
            return 0;
        }
        self.geometric_inv(GeometricInv::new(mean).inv_ln_q)
    }

    /// Geometric draw with the log denominator precomputed once via
    /// [`GeometricInv`]; the hot path for latency jitter.
    pub fn geometric_inv(&mut self, inv_ln_q: f64) -> u64 {
        if inv_ln_q == 0.0 {
            return 0;
        }
        let u = 1.0 - self.next_f64(); // (0, 1]
        (u.ln() * inv_ln_q).floor() as u64
    }
}

/// Precomputed reciprocal of `ln(1 - p)` for a geometric distribution of the
/// given mean; zero encodes "no noise".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricInv {
    pub inv_ln_q: f64,
}

impl GeometricInv {
    pub fn new(mean: f64) -> Self {
        if mean <= 0.0 {
            GeometricInv { inv_ln_q: 0.0 }
        } else {
            let p = 1.0 / (mean + 1.0);
            GeometricInv {
                inv_ln_q: 1.0 / (1.0 - p).ln(),
            }
        }
    }
}

/// Table-driven geometric sampler for hot paths: `P(X >= k) = q^k`, so a
/// uniform draw against precomputed powers of `q` inverts the distribution
/// without a logarithm. Draws beyond the table fall back to the log form.
#[derive(Debug, Clone)]
pub struct GeometricSampler {
    /// `tail[k] = q^(k+1)`, descending; X >= k+1 iff u <= tail[k].
    tail: Vec<f64>,
    inv: GeometricInv,
}

impl GeometricSampler {
    const TABLE: usize = 64;

    pub fn new(mean: f64) -> Self {
        let inv = GeometricInv::new(mean);
        let mut tail = Vec::new();
        if mean > 0.0 {
            let q = mean / (mean + 1.0);
            let mut t = 1.0;
            for _ in 0..Self::TABLE {
                t *= q;
                tail.push(t);
            }
        }
        GeometricSampler { tail, inv }
    }

    #[inline]
    pub fn sample(&self, rng: &mut SimRng) -> u64 {
        if self.tail.is_empty() {
            return 0;
        }
        let u = 1.0 - rng.next_f64(); // (0, 1]
        if u > self.tail[0] {
            return 0;
        }
        if u <= self.tail[Self::TABLE - 1] {
            // Deep tail: exact log-form continuation.
            return (u.ln() * self.inv.inv_ln_q).floor() as u64;
        }
        // Largest k with u <= tail[k - 1], via binary search on the
        // descending table.
        self.tail.partition_point(|&t| u <= t) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let mut a = SimRng::new(42);
        let mut b = SimRng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn derived_streams_do_not_track_parent_position() {
        let parent = SimRng::new(7);
        let child_a = parent.derive(1);
        let mut parent2 = SimRng::new(7);
        parent2.next_u64();
        // Deriving is keyed off the seed, not the draw position.
        assert_eq!(
            SimRng::new(7).derive(1).next_u64(),
            child_a.clone().next_u64()
        );
        assert_ne!(child_a.clone().next_u64(), parent.derive(2).next_u64());
    }

    #[test]
    fn below_stays_in_bounds() {
        let mut rng = SimRng::new(3);
        for bound in [1u64, 2, 3, 16, 1000] {
            for _ in 0..200 {
                assert!(rng.below(bound) < bound);
            }
        }
    }

    #[test]
    fn geometric_mean_is_close() {
        let mut rng = SimRng::new(11);
        let n = 200_000;
        let mean = 8.0;
        let sum: u64 = (0..n).map(|_| rng.geometric(mean)).sum();
        let observed = sum as f64 / n as f64;
        assert!((observed - mean).abs() < 0.15, "observed {observed}");
        assert_eq!(rng.geometric(0.0), 0);
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = SimRng::new(5);
        let mut v: Vec<u32> = (0..50).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }
}
