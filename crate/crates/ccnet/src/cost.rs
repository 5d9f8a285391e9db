//! Exact operation counters for forward passes.

/// Counts the arithmetic a forward pass actually performs.
///
/// A conditional-layer forward on a `p -> q` layer of depth `k` books exactly
/// `p*q` multiply-adds (the contraction), `p*k*q` additions (weight
/// construction along the tree paths), and `p*(k+1)` table lookups. Bias adds
/// and activations are not booked; they are the same for every parametrization
/// being compared. Counters are monotone within a pass; call [`reset`] between
/// passes.
///
/// [`reset`]: CostMeter::reset
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CostMeter {
    pub multiply_adds: u64,
    pub additions: u64,
    pub lookups: u64,
    pub rng_draws: u64,
}

impl CostMeter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    /// Fold another meter's counts into this one.
    pub fn absorb(&mut self, other: &CostMeter) {
        self.multiply_adds += other.multiply_adds;
        self.additions += other.additions;
        self.lookups += other.lookups;
        self.rng_draws += other.rng_draws;
    }
}

impl std::fmt::Display for CostMeter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "madds={} adds={} lookups={} rng_draws={}",
            self.multiply_adds, self.additions, self.lookups, self.rng_draws
        )
    }
}
