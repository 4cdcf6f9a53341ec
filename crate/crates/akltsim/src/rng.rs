//! Seedable counter-based randomness with an auditable draw count.
//!
//! Every random branch in the simulator consumes exactly one 64-bit draw, so
//! a trajectory is reproducible from `(seed, stream)` alone and tests can
//! assert that the number of draws equals the number of random branch points.
//! Independent trials use the same seed with the trial index as the stream id;
//! ChaCha streams are statistically independent, so trial results do not
//! depend on scheduling order.

use num_bigint::BigInt;
use num_rational::Ratio;
use num_traits::ToPrimitive;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Exact probability value.  Arbitrary precision: per-site weights stay tiny,
/// but trajectory probabilities are products over thousands of branch points
/// and would overflow any fixed-width denominator.
pub type Frac = Ratio<BigInt>;

/// Convenience constructor for an exact fraction.
pub fn frac(num: u128, den: u128) -> Frac {
    Frac::new(num.into(), den.into())
}

/// Nearest floating-point value of an exact fraction.
pub fn frac_to_f64(f: &Frac) -> f64 {
    f.to_f64().expect("finite ratio")
}

/// Counter-based RNG for a single trajectory.
#[derive(Clone, Debug)]
pub struct TrialRng {
    inner: ChaCha8Rng,
    seed: u64,
    stream: u64,
    draws: u64,
}

impl TrialRng {
    /// RNG for trial `stream` of the run seeded by `seed`.
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner, seed, stream, draws: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Fair coin; one draw.
    pub fn coin(&mut self) -> bool {
        self.draws += 1;
        self.inner.next_u64() & 1 == 1
    }

    /// Sample an index from an exact finite distribution; one draw.
    ///
    /// The unit interval is split at the exact rational cut points; the draw
    /// is a uniform dyadic `u/2^64`, compared against the cuts in integer
    /// arithmetic (`u/2^64 < n/d` iff `u*d < n*2^64`), so the only sampling
    /// error is the unavoidable `2^-64` granularity of the draw itself.
    pub fn pick(&mut self, weights: &[Frac]) -> usize {
        self.draws += 1;
        let u = BigInt::from(self.inner.next_u64());
        let mut acc = frac(0, 1);
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            // u/2^64 < acc  <=>  u * den < num << 64   (exact integers)
            if &u * acc.denom() < acc.numer() << 64 {
                return i;
            }
        }
        weights.len() - 1
    }

    /// Number of draws consumed so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }
}
