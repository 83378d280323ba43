//! Deterministic counter-based random number generator.
//!
//! Every random choice in the toolkit flows through [`Rng`], which is a
//! counter-based splitmix64 stream: draw `i` of a stream with seed `s` is
//! `mix64(s + i·0x9E3779B97F4A7C15)` (wrapping arithmetic), where `mix64`
//! is the splitmix64 finalizer. The stream is a pure function of
//! `(seed, counter)` built from integer operations only, so identical
//! seeds produce bit-identical streams on every platform, and serializing
//! the `(seed, counter)` pair is enough to resume a stream mid-flight
//! (training checkpoints do exactly that).

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 finalizer: a bijective avalanche mix on 64 bits.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    counter: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, counter: 0 }
    }

    /// Rebuild a stream at an exact position, as saved by [`Rng::state`].
    pub fn from_state(seed: u64, counter: u64) -> Self {
        Rng { seed, counter }
    }

    /// `(seed, counter)` pair identifying the exact stream position.
    pub fn state(&self) -> (u64, u64) {
        (self.seed, self.counter)
    }

    /// Derive an independent child stream without consuming a draw from
    /// this one. Children with distinct tags are decorrelated; the same
    /// `(parent seed, tag)` always yields the same child.
    pub fn fork(&self, tag: u64) -> Rng {
        Rng::new(mix64(self.seed ^ mix64(tag.wrapping_mul(GOLDEN) ^ 0x5851_F42D_4C95_7F2D)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in `[0, 1)` with 53 random mantissa bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)` via the widening-multiply method.
    /// The modulo bias is below `n / 2^64`, far past negligible for the
    /// index ranges used here, and the method is branch-free and
    /// platform-stable. Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0) is undefined");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }

    /// Uniform unit vector by rejection sampling the unit ball.
    pub fn unit_vector(&mut self) -> [f64; 3] {
        loop {
            let v = [
                self.uniform(-1.0, 1.0),
                self.uniform(-1.0, 1.0),
                self.uniform(-1.0, 1.0),
            ];
            let n2 = super::vec3::norm_sq(v);
            if n2 > 1e-6 && n2 <= 1.0 {
                return super::vec3::scale(v, 1.0 / n2.sqrt());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_published_splitmix64_vectors() {
        // Reference sequence for splitmix64 seeded with 0.
        let mut rng = Rng::new(0);
        assert_eq!(rng.next_u64(), 0xe220a8397b1dcdaf);
        assert_eq!(rng.next_u64(), 0x6e789e6aa1b965f4);
        assert_eq!(rng.next_u64(), 0x06c45d188009454f);
        let mut rng = Rng::new(42);
        assert_eq!(rng.next_u64(), 0xbdd732262feb6e95);
        assert_eq!(rng.state(), (42, 1));
    }

    #[test]
    fn state_round_trip_resumes_stream() {
        let mut a = Rng::new(7);
        for _ in 0..13 {
            a.next_u64();
        }
        let (seed, counter) = a.state();
        let mut b = Rng::from_state(seed, counter);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn uniform_stays_in_range() {
        let mut rng = Rng::new(3);
        for _ in 0..10_000 {
            let x = rng.uniform(-2.0, 5.0);
            assert!((-2.0..5.0).contains(&x));
        }
    }

    #[test]
    fn below_stays_in_range_and_covers() {
        let mut rng = Rng::new(11);
        let mut seen = [false; 7];
        for _ in 0..1000 {
            seen[rng.below(7)] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = Rng::new(5);
        let mut xs: Vec<usize> = (0..100).collect();
        rng.shuffle(&mut xs);
        let mut sorted = xs.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
        assert_ne!(xs, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn forks_are_decorrelated_and_reproducible() {
        let rng = Rng::new(9);
        let mut a = rng.fork(1);
        let mut b = rng.fork(2);
        let mut a2 = rng.fork(1);
        assert_ne!(a.next_u64(), b.next_u64());
        assert_eq!(a2.next_u64(), Rng::new(9).fork(1).next_u64());
    }

    #[test]
    fn unit_vectors_have_unit_norm() {
        let mut rng = Rng::new(21);
        for _ in 0..100 {
            let v = rng.unit_vector();
            assert!((crate::geom::vec3::norm(v) - 1.0).abs() < 1e-12);
        }
    }
}
