//! Hard binary gate vectors derived from the layer input.
//!
//! A gate vector `g` is a length-`m` sequence of hard 0/1 indicators computed
//! from the input `x`, either by thresholding input coordinates
//! (`g_i = x_i > tau`) or by sampling each bit from a Bernoulli with mean
//! `sigmoid((U^T x)_i)`. Each output unit `j` then reads a `k`-bit subset of
//! `g` chosen by a [`SelectorStrategy`]; those `k` bits address unit `j`'s
//! weight table.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use rand::Rng;

/// Logistic function, the mean of a stochastic gate bit.
pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// How stochastic gates behave at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalPolicy {
    /// Keep sampling at eval time (non-deterministic inference).
    SampleAtEval,
    /// Bit is 1 iff its Bernoulli mean is >= 0.5 (deterministic inference).
    ThresholdMeanAtEval,
}

/// Gate derivation rule. The projection is present exactly when gating is
/// stochastic.
#[derive(Debug, Clone)]
pub enum GateMode {
    Deterministic { tau: f64 },
    Stochastic { projection: Matrix },
}

/// Full gating configuration for one layer.
#[derive(Debug, Clone)]
pub struct GateConfig {
    pub mode: GateMode,
    /// Gate-vector length.
    pub m: usize,
    pub eval_policy: EvalPolicy,
}

impl GateConfig {
    pub fn deterministic(tau: f64, m: usize) -> Self {
        GateConfig {
            mode: GateMode::Deterministic { tau },
            m,
            eval_policy: EvalPolicy::ThresholdMeanAtEval,
        }
    }

    /// Stochastic gating; `m` is the projection's column count.
    pub fn stochastic(projection: Matrix, eval_policy: EvalPolicy) -> Self {
        let m = projection.cols();
        GateConfig {
            mode: GateMode::Stochastic { projection },
            m,
            eval_policy,
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self.mode, GateMode::Stochastic { .. })
    }

    /// Check internal consistency against the input width `p`.
    pub fn validate(&self, p: usize) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidConfig("gate-vector length m must be >= 1".into()));
        }
        match &self.mode {
            GateMode::Deterministic { .. } => {
                if self.m > p {
                    return Err(Error::InvalidConfig(format!(
                        "deterministic gating reads bits from input coordinates, so m <= p is required (m = {}, p = {})",
                        self.m, p
                    )));
                }
            }
            GateMode::Stochastic { projection } => {
                if projection.rows() != p || projection.cols() != self.m {
                    return Err(Error::Dimension(format!(
                        "gate projection is {}x{}, expected {}x{}",
                        projection.rows(),
                        projection.cols(),
                        p,
                        self.m
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Length-`m` vector of hard binary indicators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GateVector {
    pub bits: Vec<bool>,
}

impl GateVector {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bit(&self, i: usize) -> bool {
        self.bits[i]
    }
}

impl std::fmt::Display for GateVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for &b in &self.bits {
            write!(f, "{}", u8::from(b))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectorKind {
    /// Every unit reads bits `0..k`.
    FirstK,
    /// Unit `j` reads `k` consecutive bits starting at `floor(j/k)`, indices
    /// wrapping modulo `m`.
    SlidingWindow,
}

/// Per-unit rule choosing which `k` gate bits address a unit's weight table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectorStrategy {
    pub kind: SelectorKind,
    pub k: usize,
}

impl SelectorStrategy {
    pub fn first_k(k: usize) -> Self {
        SelectorStrategy {
            kind: SelectorKind::FirstK,
            k,
        }
    }

    pub fn sliding_window(k: usize) -> Self {
        SelectorStrategy {
            kind: SelectorKind::SlidingWindow,
            k,
        }
    }

    /// `k <= m` is required; `k = 0` is the degenerate depth-0 tree.
    pub fn validate(&self, m: usize) -> Result<()> {
        if self.k > m {
            return Err(Error::InvalidConfig(format!(
                "selector reads k = {} bits but the gate vector only has m = {}",
                self.k, m
            )));
        }
        Ok(())
    }

    /// Gate indices read by unit `j`, in path order.
    pub fn selected_indices(&self, j: usize, m: usize) -> Vec<usize> {
        match self.kind {
            SelectorKind::FirstK => (0..self.k).collect(),
            SelectorKind::SlidingWindow => {
                if self.k == 0 {
                    return Vec::new();
                }
                let start = j / self.k;
                (0..self.k).map(|i| (start + i) % m).collect()
            }
        }
    }
}

/// Threshold gates: bit `i` is 1 iff `x_i > tau` (strict; ties give 0).
pub fn deterministic_gates(x: &[f64], tau: f64, m: usize) -> Result<GateVector> {
    if m < 1 || m > x.len() {
        return Err(Error::Dimension(format!(
            "deterministic gating needs 1 <= m <= p, got m = {} with p = {}",
            m,
            x.len()
        )));
    }
    Ok(GateVector {
        bits: x[..m].iter().map(|&v| v > tau).collect(),
    })
}

/// Bernoulli gates with means `sigmoid(U^T x)`; returns the sampled bits and
/// the means (the means feed the REINFORCE estimator).
pub fn stochastic_gates(
    x: &[f64],
    projection: &Matrix,
    rng: &mut impl Rng,
) -> Result<(GateVector, Vec<f64>)> {
    let mean_probs = stochastic_means(x, projection)?;
    let bits = mean_probs.iter().map(|&mu| rng.random::<f64>() < mu).collect();
    Ok((GateVector { bits }, mean_probs))
}

/// The Bernoulli means `sigmoid(U^T x)` without sampling.
pub fn stochastic_means(x: &[f64], projection: &Matrix) -> Result<Vec<f64>> {
    let pre = projection.transpose_vec_mul(x)?;
    Ok(pre.into_iter().map(sigmoid).collect())
}

/// Deterministic eval-time gates: bit `i` is 1 iff its mean is >= 0.5.
pub fn threshold_mean_gates(mean_probs: &[f64]) -> GateVector {
    GateVector {
        bits: mean_probs.iter().map(|&mu| mu >= 0.5).collect(),
    }
}

/// The `k` gate bits unit `j` reads under `strategy`.
pub fn select_bits(g: &GateVector, j: usize, strategy: &SelectorStrategy) -> Vec<bool> {
    strategy
        .selected_indices(j, g.len())
        .into_iter()
        .map(|i| g.bits[i])
        .collect()
}
