//! The conditional layer: `h = phi(W(x)^T x + b)` where each column of the
//! weight matrix is assembled on the fly from the gate bits, plus the
//! conventional dense layer it is compared against.
//!
//! A forward pass records a [`ForwardTrace`] carrying everything needed to
//! replay the pass exactly and to run a backward pass. Four credit-assignment
//! strategies are supported for the backward direction:
//!
//! * `DetachedGates` — exact gradients with the gating pattern held fixed.
//! * `StraightThrough` — detached gradients plus a heuristic term routing
//!   gradient through the hard gate bits into the pre-threshold values.
//! * `Modulated` — the forward itself changes: deeper tree nodes are scaled
//!   by coefficients built from the gating inputs, and the backward pass is
//!   the exact gradient of that modulated forward.
//! * `Reinforce` — detached gradients for table/bias/input; the gate
//!   projection gradient comes from the score-function estimator in the
//!   optimizer module.

use std::collections::BTreeMap;

use rand::Rng;

use crate::cost::CostMeter;
use crate::error::{Error, Result};
use crate::gating::{
    self, sigmoid, EvalPolicy, GateConfig, GateMode, GateVector, SelectorStrategy,
};
use crate::matrix::Matrix;
use crate::prefix_weights::PrefixTreeTable;

/// Element-wise output nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Rectifier,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => z.tanh(),
            Activation::Rectifier => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative at pre-activation `z`. The rectifier kink at exactly 0
    /// takes the subgradient 0.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Rectifier => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// How gradient is assigned across the hard gating decisions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CreditStrategy {
    /// Backprop ignoring the gates' dependence on the input.
    DetachedGates,
    /// Detached everywhere, plus gradient routed into the pre-threshold
    /// values through soft path coefficients `sigmoid((x_i - tau)/T)`.
    StraightThrough { st_temperature: f64 },
    /// Gate activations scale the selected node vectors in the forward pass.
    Modulated,
    /// Table/bias/input as detached; gate-projection gradient via REINFORCE.
    Reinforce,
}

impl CreditStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            CreditStrategy::DetachedGates => "detached",
            CreditStrategy::StraightThrough { .. } => "straight_through",
            CreditStrategy::Modulated => "modulated",
            CreditStrategy::Reinforce => "reinforce",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let CreditStrategy::StraightThrough { st_temperature } = self {
            if !(*st_temperature > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "st_temperature must be > 0, got {st_temperature}"
                )));
            }
        }
        Ok(())
    }
}

/// Everything a forward pass touched, sufficient to replay it exactly.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    pub gates: GateVector,
    /// Per-unit selected bits, each of length `k`.
    pub selected_bits: Vec<Vec<bool>>,
    /// Per-unit gate indices backing those bits (the selector's pi map).
    pub selected_indices: Vec<Vec<usize>>,
    /// Per-unit flat node indices along the traversed path, each `k+1` long.
    pub node_paths: Vec<Vec<usize>>,
    pub pre_activation: Vec<f64>,
    /// Per-unit modulation coefficients `c_1..c_k` (Modulated only).
    pub modulation: Option<Vec<Vec<f64>>>,
    /// Gate Bernoulli means (stochastic gating only).
    pub mean_probs: Option<Vec<f64>>,
    strategy_name: &'static str,
}

impl ForwardTrace {
    pub fn strategy_name(&self) -> &'static str {
        self.strategy_name
    }
}

/// Gradients of one example's loss with respect to the layer parameters.
///
/// `d_table` is sparse: it holds entries only for the `p*(k+1)` nodes that
/// the traversed paths actually visited.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub d_table: BTreeMap<(usize, usize), Vec<f64>>,
    pub d_bias: Vec<f64>,
    pub d_input: Vec<f64>,
    pub d_gate_projection: Option<Matrix>,
}

/// Gating config, bit selector, weight table, bias, and activation.
#[derive(Debug, Clone)]
pub struct ConditionalLayer {
    pub gate: GateConfig,
    pub selector: SelectorStrategy,
    pub table: PrefixTreeTable,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl ConditionalLayer {
    pub fn new(
        gate: GateConfig,
        selector: SelectorStrategy,
        table: PrefixTreeTable,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        gate.validate(table.p())?;
        selector.validate(gate.m)?;
        if selector.k != table.k() {
            return Err(Error::Dimension(format!(
                "selector reads {} bits but the table has depth {}",
                selector.k,
                table.k()
            )));
        }
        if bias.len() != table.q() {
            return Err(Error::Dimension(format!(
                "bias has length {} but the layer output width is {}",
                bias.len(),
                table.q()
            )));
        }
        Ok(ConditionalLayer {
            gate,
            selector,
            table,
            bias,
            activation,
        })
    }

    pub fn p(&self) -> usize {
        self.table.p()
    }

    pub fn q(&self) -> usize {
        self.table.q()
    }

    pub fn k(&self) -> usize {
        self.table.k()
    }

    pub fn m(&self) -> usize {
        self.gate.m
    }

    fn training_gates(
        &self,
        x: &[f64],
        rng: &mut impl Rng,
        meter: &mut CostMeter,
    ) -> Result<(GateVector, Option<Vec<f64>>)> {
        match &self.gate.mode {
            GateMode::Deterministic { tau } => {
                Ok((gating::deterministic_gates(x, *tau, self.gate.m)?, None))
            }
            GateMode::Stochastic { projection } => {
                let (g, mu) = gating::stochastic_gates(x, projection, rng)?;
                meter.rng_draws += self.gate.m as u64;
                Ok((g, Some(mu)))
            }
        }
    }

    fn eval_gates(
        &self,
        x: &[f64],
        rng: &mut impl Rng,
        meter: &mut CostMeter,
    ) -> Result<(GateVector, Option<Vec<f64>>)> {
        match &self.gate.mode {
            GateMode::Deterministic { tau } => {
                Ok((gating::deterministic_gates(x, *tau, self.gate.m)?, None))
            }
            GateMode::Stochastic { projection } => match self.gate.eval_policy {
                EvalPolicy::SampleAtEval => {
                    let (g, mu) = gating::stochastic_gates(x, projection, rng)?;
                    meter.rng_draws += self.gate.m as u64;
                    Ok((g, Some(mu)))
                }
                EvalPolicy::ThresholdMeanAtEval => {
                    let mu = gating::stochastic_means(x, projection)?;
                    Ok((gating::threshold_mean_gates(&mu), Some(mu)))
                }
            },
        }
    }

    fn check_strategy(&self, strategy: &CreditStrategy) -> Result<()> {
        strategy.validate()?;
        if matches!(strategy, CreditStrategy::Modulated) && self.gate.is_stochastic() {
            return Err(Error::InvalidConfig(
                "the modulated strategy reads thresholded input coordinates and \
                 requires deterministic gating"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Training-mode forward: stochastic gates are sampled fresh.
    ///
    /// Books exactly `p*q` multiply-adds (the contraction), `p*k*q` additions
    /// (weight construction), and `p*(k+1)` lookups on the meter.
    pub fn forward(
        &self,
        x: &[f64],
        strategy: &CreditStrategy,
        rng: &mut impl Rng,
        meter: &mut CostMeter,
    ) -> Result<(Vec<f64>, ForwardTrace)> {
        self.check_strategy(strategy)?;
        if x.len() != self.p() {
            return Err(Error::Dimension(format!(
                "input has length {}, layer expects {}",
                x.len(),
                self.p()
            )));
        }
        let (gates, mean_probs) = self.training_gates(x, rng, meter)?;
        self.forward_with_gates(x, gates, mean_probs, strategy, meter)
    }

    /// Evaluation-mode forward: stochastic gates follow the eval policy.
    pub fn forward_eval(
        &self,
        x: &[f64],
        strategy: &CreditStrategy,
        rng: &mut impl Rng,
        meter: &mut CostMeter,
    ) -> Result<Vec<f64>> {
        self.check_strategy(strategy)?;
        if x.len() != self.p() {
            return Err(Error::Dimension(format!(
                "input has length {}, layer expects {}",
                x.len(),
                self.p()
            )));
        }
        let (gates, mean_probs) = self.eval_gates(x, rng, meter)?;
        let (h, _) = self.forward_with_gates(x, gates, mean_probs, strategy, meter)?;
        Ok(h)
    }

    fn forward_with_gates(
        &self,
        x: &[f64],
        gates: GateVector,
        mean_probs: Option<Vec<f64>>,
        strategy: &CreditStrategy,
        meter: &mut CostMeter,
    ) -> Result<(Vec<f64>, ForwardTrace)> {
        let p = self.p();
        let q = self.q();
        let modulated = matches!(strategy, CreditStrategy::Modulated);

        let mut pre = self.bias.clone();
        let mut selected_bits = Vec::with_capacity(p);
        let mut selected_indices = Vec::with_capacity(p);
        let mut node_paths = Vec::with_capacity(p);
        let mut modulation = modulated.then(|| Vec::with_capacity(p));

        for j in 0..p {
            let idx = self.selector.selected_indices(j, self.gate.m);
            let bits: Vec<bool> = idx.iter().map(|&i| gates.bits[i]).collect();
            let w = if modulated {
                let (w, coeffs) = self
                    .table
                    .modulated_effective_weight(j, &bits, x, &idx, meter)?;
                modulation.as_mut().unwrap().push(coeffs);
                w
            } else {
                self.table.effective_weight(j, &bits, meter)
            };
            let xj = x[j];
            for (acc, &wc) in pre.iter_mut().zip(&w) {
                *acc += xj * wc;
            }
            meter.multiply_adds += q as u64;
            node_paths.push(self.table.path_node_indices(&bits));
            selected_bits.push(bits);
            selected_indices.push(idx);
        }

        let h = pre.iter().map(|&z| self.activation.apply(z)).collect();
        let trace = ForwardTrace {
            input: x.to_vec(),
            gates,
            selected_bits,
            selected_indices,
            node_paths,
            pre_activation: pre,
            modulation,
            mean_probs,
            strategy_name: strategy.name(),
        };
        Ok((h, trace))
    }

    /// Recompute the forward pass with the trace's frozen gating pattern but
    /// from the given input and the current parameters. With `x` equal to the
    /// traced input and unchanged parameters the result is bit-identical to
    /// the original output; with perturbed values it is the fixed-gate
    /// computational graph the finite-difference oracles differentiate.
    pub fn replay_forward(&self, trace: &ForwardTrace, x: &[f64]) -> Result<Vec<f64>> {
        let p = self.p();
        if x.len() != p {
            return Err(Error::Dimension(format!(
                "input has length {}, layer expects {}",
                x.len(),
                p
            )));
        }
        let modulated = trace.modulation.is_some();
        let mut scratch = CostMeter::new();
        let mut pre = self.bias.clone();
        for j in 0..p {
            let bits = &trace.selected_bits[j];
            let w = if modulated {
                self.table
                    .modulated_effective_weight(j, bits, x, &trace.selected_indices[j], &mut scratch)?
                    .0
            } else {
                self.table.effective_weight(j, bits, &mut scratch)
            };
            let xj = x[j];
            for (acc, &wc) in pre.iter_mut().zip(&w) {
                *acc += xj * wc;
            }
        }
        Ok(pre.iter().map(|&z| self.activation.apply(z)).collect())
    }

    /// Backward pass for the strategy the trace was recorded under.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        dl_dh: &[f64],
        strategy: &CreditStrategy,
    ) -> Result<LayerGrads> {
        if trace.strategy_name != strategy.name() {
            return Err(Error::TraceMismatch {
                recorded: trace.strategy_name,
                requested: strategy.name(),
            });
        }
        let p = self.p();
        let q = self.q();
        let k = self.k();
        if dl_dh.len() != q {
            return Err(Error::Dimension(format!(
                "upstream gradient has length {}, expected {}",
                dl_dh.len(),
                q
            )));
        }

        let x = &trace.input;
        // dL/d(pre-activation)
        let delta: Vec<f64> = trace
            .pre_activation
            .iter()
            .zip(dl_dh)
            .map(|(&z, &d)| d * self.activation.derivative(z))
            .collect();

        let mut d_table: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
        let mut d_input = vec![0.0; p];

        for j in 0..p {
            let path = &trace.node_paths[j];
            let xj = x[j];
            match strategy {
                CreditStrategy::Modulated => {
                    let coeffs = &trace.modulation.as_ref().expect("modulated trace")[j];
                    // effective weight under modulation, for d_input's contraction term
                    let mut w = self.table.node_vec(j, path[0]).to_vec();
                    {
                        let grad = d_table
                            .entry((j, path[0]))
                            .or_insert_with(|| vec![0.0; q]);
                        for (g, &d) in grad.iter_mut().zip(&delta) {
                            *g += xj * d;
                        }
                    }
                    for l in 1..=k {
                        let c = coeffs[l - 1];
                        let node_vec = self.table.node_vec(j, path[l]);
                        for (wc, &v) in w.iter_mut().zip(node_vec) {
                            *wc += c * v;
                        }
                        let grad = d_table
                            .entry((j, path[l]))
                            .or_insert_with(|| vec![0.0; q]);
                        for (g, &d) in grad.iter_mut().zip(&delta) {
                            *g += xj * c * d;
                        }
                    }
                    d_input[j] += dot(&w, &delta);
                }
                _ => {
                    let mut w = vec![0.0; q];
                    for &node in path {
                        let node_vec = self.table.node_vec(j, node);
                        for (wc, &v) in w.iter_mut().zip(node_vec) {
                            *wc += v;
                        }
                        let grad = d_table.entry((j, node)).or_insert_with(|| vec![0.0; q]);
                        for (g, &d) in grad.iter_mut().zip(&delta) {
                            *g += xj * d;
                        }
                    }
                    d_input[j] += dot(&w, &delta);
                }
            }
        }

        let mut d_gate_projection = None;
        match strategy {
            CreditStrategy::Modulated => {
                self.modulated_input_terms(trace, &delta, &mut d_input);
            }
            CreditStrategy::StraightThrough { st_temperature } => {
                d_gate_projection =
                    self.straight_through_terms(trace, &delta, *st_temperature, &mut d_input);
            }
            _ => {}
        }

        Ok(LayerGrads {
            d_table,
            d_bias: delta,
            d_input,
            d_gate_projection,
        })
    }

    /// Exact gradient of the modulation coefficients into the gated inputs:
    /// `dc_l/dx_t = -c_l * (1 + tanh(x_t)) / l` for each selected coordinate
    /// `t` among the first `l`.
    fn modulated_input_terms(&self, trace: &ForwardTrace, delta: &[f64], d_input: &mut [f64]) {
        let k = self.k();
        let x = &trace.input;
        let modulation = trace.modulation.as_ref().expect("modulated trace");
        for j in 0..self.p() {
            let xj = x[j];
            let path = &trace.node_paths[j];
            let idx = &trace.selected_indices[j];
            let coeffs = &modulation[j];
            for l in 1..=k {
                let s = xj * dot(self.table.node_vec(j, path[l]), delta);
                let cl = coeffs[l - 1];
                for &t in &idx[..l] {
                    d_input[t] -= s * cl * (1.0 + x[t].tanh()) / l as f64;
                }
            }
        }
    }

    /// Straight-through credit: each traversed node's path coefficient is a
    /// product of soft gates; its derivative is taken with the remaining
    /// factors held at their hard forward values (1 along the traversed
    /// path), so only the differentiated gate's slope survives.
    fn straight_through_terms(
        &self,
        trace: &ForwardTrace,
        delta: &[f64],
        temperature: f64,
        d_input: &mut [f64],
    ) -> Option<Matrix> {
        let p = self.p();
        let k = self.k();
        let m = self.gate.m;
        let x = &trace.input;

        // Accumulate, per gate index, the total sensitivity of the loss to
        // that soft gate's value.
        let mut gate_coef = vec![0.0; m];
        for j in 0..p {
            let xj = x[j];
            let path = &trace.node_paths[j];
            let bits = &trace.selected_bits[j];
            let idx = &trace.selected_indices[j];
            for l in 1..=k {
                let s = xj * dot(self.table.node_vec(j, path[l]), delta);
                for i in 0..l {
                    let sign = if bits[i] { 1.0 } else { -1.0 };
                    gate_coef[idx[i]] += s * sign;
                }
            }
        }

        match &self.gate.mode {
            GateMode::Deterministic { tau } => {
                for (gi, &coef) in gate_coef.iter().enumerate() {
                    let soft = sigmoid((x[gi] - tau) / temperature);
                    d_input[gi] += coef * soft * (1.0 - soft) / temperature;
                }
                None
            }
            GateMode::Stochastic { projection } => {
                let mu = trace.mean_probs.as_ref().expect("stochastic trace");
                let mut d_u = Matrix::zeros(p, m);
                for (gi, &coef) in gate_coef.iter().enumerate() {
                    let slope = coef * mu[gi] * (1.0 - mu[gi]);
                    for t in 0..p {
                        d_input[t] += slope * projection.at(t, gi);
                        *d_u.at_mut(t, gi) += slope * x[t];
                    }
                }
                Some(d_u)
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Conventional dense layer forward `h = phi(W^T x + b)`; books `p*q`
/// multiply-adds. Accumulation starts from the bias and runs unit-major, the
/// same order as the conditional forward, so a depth-0 conditional layer
/// reproduces this bit for bit.
pub fn dense_forward(
    weights: &Matrix,
    bias: &[f64],
    activation: Activation,
    x: &[f64],
    meter: &mut CostMeter,
) -> Result<Vec<f64>> {
    if bias.len() != weights.cols() {
        return Err(Error::Dimension(format!(
            "bias has length {}, weight matrix has {} columns",
            bias.len(),
            weights.cols()
        )));
    }
    if x.len() != weights.rows() {
        return Err(Error::Dimension(format!(
            "input has length {}, weight matrix has {} rows",
            x.len(),
            weights.rows()
        )));
    }
    let cols = weights.cols();
    let mut pre = bias.to_vec();
    for (r, &xv) in x.iter().enumerate() {
        for (c, z) in pre.iter_mut().enumerate() {
            *z += xv * weights.at(r, c);
        }
    }
    meter.multiply_adds += (weights.rows() * cols) as u64;
    Ok(pre.into_iter().map(|z| activation.apply(z)).collect())
}
