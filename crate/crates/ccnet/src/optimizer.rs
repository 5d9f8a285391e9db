//! Per-example SGD with lazy weight decay, plus the REINFORCE estimator for
//! stochastic-gate parameters.
//!
//! Only the table nodes a step actually touched are regularized at that step.
//! Each node remembers when it was last touched; the next time it is
//! selected, the skipped decay is applied in one catch-up before the new
//! gradient update:
//!
//! * L2: `w <- w * (1 - eps*lambda)^dt`
//! * L1: `w <- sign(w) * max(0, |w| - eps*lambda*dt)`
//!
//! `finalize` runs the catch-up on every node so that stored or evaluated
//! weights reflect all accumulated decay. For L2 the lazy path equals eager
//! per-step decay up to floating-point rounding; for L1 it is exact on
//! intervals with no interleaved gradient updates (the soft-threshold
//! composes additively) and an approximation across them.

use crate::cond_layer::{ConditionalLayer, LayerGrads};
use crate::error::{Error, Result};
use crate::gating::{GateMode, GateVector};
use crate::matrix::Matrix;
use crate::prefix_weights::{PrefixTreeTable, ORACLE_MAX_ENTRIES};

/// Probability clamp applied before logs in the gate likelihood.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegKind {
    None,
    L2,
    L1,
}

/// `w * (1 - eps*lambda)^dt`, the L2 decay owed after `dt` skipped steps.
pub fn lazy_l2_catchup(w: &[f64], epsilon: f64, lambda: f64, delta_t: u64) -> Result<Vec<f64>> {
    let factor = l2_factor(epsilon, lambda, delta_t)?;
    Ok(w.iter().map(|&v| v * factor).collect())
}

fn l2_factor(epsilon: f64, lambda: f64, delta_t: u64) -> Result<f64> {
    let el = epsilon * lambda;
    if !(0.0..1.0).contains(&el) {
        return Err(Error::InvalidConfig(format!(
            "L2 decay needs 0 <= eps*lambda < 1, got {el} (the multiplier would flip signs)"
        )));
    }
    Ok(if delta_t <= i32::MAX as u64 {
        (1.0 - el).powi(delta_t as i32)
    } else {
        (1.0 - el).powf(delta_t as f64)
    })
}

/// Soft-threshold by `eps*lambda*dt`, moving each component toward 0 without
/// crossing it.
pub fn lazy_l1_catchup(w: &[f64], epsilon: f64, lambda: f64, delta_t: u64) -> Vec<f64> {
    let shrink = epsilon * lambda * delta_t as f64;
    w.iter().map(|&v| soft_threshold(v, shrink)).collect()
}

fn soft_threshold(v: f64, shrink: f64) -> f64 {
    v.signum() * (v.abs() - shrink).max(0.0)
}

fn catchup_in_place(
    w: &mut [f64],
    reg: RegKind,
    epsilon: f64,
    lambda: f64,
    delta_t: u64,
) -> Result<()> {
    if delta_t == 0 {
        return Ok(());
    }
    match reg {
        RegKind::None => {}
        RegKind::L2 => {
            let factor = l2_factor(epsilon, lambda, delta_t)?;
            for v in w.iter_mut() {
                *v *= factor;
            }
        }
        RegKind::L1 => {
            let shrink = epsilon * lambda * delta_t as f64;
            for v in w.iter_mut() {
                *v = soft_threshold(*v, shrink);
            }
        }
    }
    Ok(())
}

/// Step counter plus per-node last-touched bookkeeping for lazy decay.
#[derive(Debug, Clone)]
pub struct LazyRegState {
    reg: RegKind,
    lambda: f64,
    epsilon: f64,
    t: u64,
    p: usize,
    nodes_per_unit: usize,
    last_touched: Vec<u64>,
}

impl LazyRegState {
    pub fn new(table: &PrefixTreeTable, reg: RegKind, lambda: f64, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be >= 0, got {epsilon}"
            )));
        }
        if lambda < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "decay coefficient must be >= 0, got {lambda}"
            )));
        }
        if reg != RegKind::None && epsilon * lambda >= 1.0 {
            return Err(Error::InvalidConfig(format!(
                "eps*lambda = {} must be < 1",
                epsilon * lambda
            )));
        }
        Ok(LazyRegState {
            reg,
            lambda,
            epsilon,
            t: 0,
            p: table.p(),
            nodes_per_unit: table.nodes_per_unit(),
            last_touched: vec![0; table.p() * table.nodes_per_unit()],
        })
    }

    pub fn step(&self) -> u64 {
        self.t
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta_t(&self, j: usize, node: usize) -> u64 {
        self.t - self.last_touched[j * self.nodes_per_unit + node]
    }

    fn check_table(&self, table: &PrefixTreeTable) -> Result<()> {
        if table.p() != self.p || table.nodes_per_unit() != self.nodes_per_unit {
            return Err(Error::Dimension(
                "optimizer state was built for a different table shape".into(),
            ));
        }
        Ok(())
    }

    /// Touch-all catch-up: settle the decay owed on every node up to the
    /// current step. Run before evaluation or serialization.
    pub fn finalize(&mut self, table: &mut PrefixTreeTable) -> Result<()> {
        self.check_table(table)?;
        for j in 0..self.p {
            for node in 0..self.nodes_per_unit {
                let slot = j * self.nodes_per_unit + node;
                let dt = self.t - self.last_touched[slot];
                catchup_in_place(table.node_vec_mut(j, node), self.reg, self.epsilon, self.lambda, dt)?;
                self.last_touched[slot] = self.t;
            }
        }
        Ok(())
    }
}

fn apply_node_update(
    table: &mut PrefixTreeTable,
    state: &mut LazyRegState,
    j: usize,
    node: usize,
    grad: &[f64],
) -> Result<()> {
    let slot = j * state.nodes_per_unit + node;
    let dt = state.t - state.last_touched[slot];
    let w = table.node_vec_mut(j, node);
    catchup_in_place(w, state.reg, state.epsilon, state.lambda, dt)?;
    for (wv, &gv) in w.iter_mut().zip(grad) {
        *wv -= state.epsilon * gv;
    }
    state.last_touched[slot] = state.t;
    Ok(())
}

/// One gradient step on the table alone: advance the clock, then for each
/// touched node run catch-up decay followed by the gradient update.
pub fn sgd_apply_table_step(
    table: &mut PrefixTreeTable,
    touched: &[((usize, usize), Vec<f64>)],
    state: &mut LazyRegState,
) -> Result<()> {
    state.check_table(table)?;
    state.t += 1;
    for ((j, node), grad) in touched {
        apply_node_update(table, state, *j, *node, grad)?;
    }
    Ok(())
}

/// One SGD step on a full layer. Table nodes get lazy decay; the bias and
/// gate projection are updated without decay.
pub fn sgd_apply(
    layer: &mut ConditionalLayer,
    grads: &LayerGrads,
    state: &mut LazyRegState,
) -> Result<()> {
    state.check_table(&layer.table)?;
    if grads.d_bias.len() != layer.q() {
        return Err(Error::Dimension(format!(
            "bias gradient has length {}, expected {}",
            grads.d_bias.len(),
            layer.q()
        )));
    }
    state.t += 1;
    for ((j, node), grad) in &grads.d_table {
        apply_node_update(&mut layer.table, state, *j, *node, grad)?;
    }
    let eps = state.epsilon;
    for (b, &g) in layer.bias.iter_mut().zip(&grads.d_bias) {
        *b -= eps * g;
    }
    if let Some(d_u) = &grads.d_gate_projection {
        match &mut layer.gate.mode {
            GateMode::Stochastic { projection } => projection.axpy_neg(eps, d_u),
            GateMode::Deterministic { .. } => {
                return Err(Error::InvalidConfig(
                    "gate-projection gradient supplied for a deterministically gated layer".into(),
                ))
            }
        }
    }
    Ok(())
}

/// One step of the eager reference schedule: the gradients applied at that
/// step, keyed by (unit, node). Keys must be unique within a step.
#[derive(Debug, Clone, Default)]
pub struct DecayStep {
    pub touched: Vec<((usize, usize), Vec<f64>)>,
}

/// Reference optimizer for equivalence tests: decays every node at every
/// step and applies gradients at selection steps. Refuses large tables.
pub fn eager_decay_oracle(
    initial: &PrefixTreeTable,
    steps: &[DecayStep],
    reg: RegKind,
    lambda: f64,
    epsilon: f64,
) -> Result<PrefixTreeTable> {
    if initial.entries().len() as u64 > ORACLE_MAX_ENTRIES {
        return Err(Error::OracleGuard(format!(
            "eager decay oracle refuses tables above {ORACLE_MAX_ENTRIES} entries"
        )));
    }
    let mut table = initial.clone();
    for step in steps {
        match reg {
            RegKind::None => {}
            RegKind::L2 => {
                let factor = l2_factor(epsilon, lambda, 1)?;
                for e in table.entries_mut() {
                    *e *= factor;
                }
            }
            RegKind::L1 => {
                let shrink = epsilon * lambda;
                for e in table.entries_mut() {
                    *e = soft_threshold(*e, shrink);
                }
            }
        }
        for ((j, node), grad) in &step.touched {
            let w = table.node_vec_mut(*j, *node);
            for (wv, &gv) in w.iter_mut().zip(grad) {
                *wv -= epsilon * gv;
            }
        }
    }
    Ok(table)
}

/// Running loss baseline for the score-function estimator; an exponential
/// moving average initialized to the first observed loss.
#[derive(Debug, Clone)]
pub struct ReinforceState {
    baseline: Option<f64>,
    decay: f64,
    enabled: bool,
}

impl ReinforceState {
    pub fn new(decay: f64) -> Result<Self> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "baseline decay must lie in (0, 1), got {decay}"
            )));
        }
        Ok(ReinforceState {
            baseline: None,
            decay,
            enabled: true,
        })
    }

    /// Estimator without variance reduction; the baseline stays at 0.
    pub fn without_baseline() -> Self {
        ReinforceState {
            baseline: None,
            decay: 0.9,
            enabled: false,
        }
    }

    pub fn baseline(&self) -> f64 {
        if self.enabled {
            self.baseline.unwrap_or(0.0)
        } else {
            0.0
        }
    }
}

/// Log-likelihood of the sampled gate bits under their Bernoulli means,
/// with means clamped away from exact 0/1 before the logs.
pub fn gate_log_prob(g: &GateVector, mean_probs: &[f64]) -> f64 {
    g.bits
        .iter()
        .zip(mean_probs)
        .map(|(&b, &mu_raw)| {
            let mu = mu_raw.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if b {
                mu.ln()
            } else {
                (1.0 - mu).ln()
            }
        })
        .sum()
}

/// Score-function gradient estimate for the gate projection:
/// `(loss - baseline) * grad_U log P(g | x)` where
/// `grad_U log P = x (g - mu)^T`. The baseline in use is the value from
/// before this call; it is then advanced by `b <- decay*b + (1-decay)*loss`,
/// so the estimate stays independent of the current sample's loss.
pub fn reinforce_gate_grad(
    loss: f64,
    state: &mut ReinforceState,
    g: &GateVector,
    mean_probs: &[f64],
    x: &[f64],
) -> Result<Matrix> {
    if g.len() != mean_probs.len() {
        return Err(Error::Dimension(format!(
            "gate vector has {} bits but {} means were supplied",
            g.len(),
            mean_probs.len()
        )));
    }
    let advantage = if state.enabled {
        match state.baseline {
            None => {
                state.baseline = Some(loss);
                0.0
            }
            Some(b) => loss - b,
        }
    } else {
        loss
    };
    let mut d_u = Matrix::zeros(x.len(), mean_probs.len());
    for (i, &mu_raw) in mean_probs.iter().enumerate() {
        let mu = mu_raw.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let score = f64::from(u8::from(g.bit(i))) - mu;
        let c = advantage * score;
        for (t, &xv) in x.iter().enumerate() {
            *d_u.at_mut(t, i) = c * xv;
        }
    }
    if state.enabled {
        if let Some(b) = state.baseline {
            state.baseline = Some(state.decay * b + (1.0 - state.decay) * loss);
        }
    }
    Ok(d_u)
}
