//! Synthetic tasks, the training loop, gradient-check and oracle suites,
//! and cost/capacity reporting.
//!
//! Tasks are desk-scale regressions generated by a hidden conditional layer,
//! so zero training error is attainable by construction and every experiment
//! is a pure function of its seed.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use crate::cost::CostMeter;

use crate::cond_layer::{
    dense_forward, Activation, ConditionalLayer, CreditStrategy, ForwardTrace,
};
use crate::error::{Error, Result};
use crate::gating::{self, EvalPolicy, GateConfig, SelectorStrategy};
use crate::matrix::Matrix;
use crate::optimizer::{
    eager_decay_oracle, gate_log_prob, lazy_l1_catchup, reinforce_gate_grad, sgd_apply,
    sgd_apply_table_step, DecayStep, LazyRegState, RegKind, ReinforceState,
};
use crate::prefix_weights::{count_parameters, naive_leaf_oracle, ParamReport, PrefixTreeTable};

/// Training aborts when the epoch MSE exceeds this.
pub const DIVERGENCE_GUARD: f64 = 1e6;

/// Regression dataset labeled by a hidden conditional layer.
#[derive(Debug, Clone)]
pub struct RegionTask {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<Vec<f64>>,
    pub truth: ConditionalLayer,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl RegionTask {
    pub fn p(&self) -> usize {
        self.truth.p()
    }

    pub fn q(&self) -> usize {
        self.truth.q()
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Knobs for task generation beyond the standard shape arguments.
#[derive(Debug, Clone, Copy)]
pub struct TaskOptions {
    pub input_low: f64,
    pub input_high: f64,
    pub truth_tau: f64,
    pub selector: SelectorStrategy,
}

impl TaskOptions {
    pub fn with_k(k: usize) -> Self {
        TaskOptions {
            input_low: -1.0,
            input_high: 1.0,
            truth_tau: 0.0,
            selector: SelectorStrategy::first_k(k),
        }
    }
}

/// Standard region task: inputs uniform in `(-1,1)^p`, labels from a hidden
/// deterministically gated layer (`tau = 0`, identity activation) plus
/// Gaussian noise. Exactly realizable at `noise_sigma = 0`.
pub fn gen_region_task(
    p: usize,
    q: usize,
    k: usize,
    m: usize,
    n_samples: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<RegionTask> {
    gen_region_task_with(p, q, k, m, n_samples, noise_sigma, seed, TaskOptions::with_k(k))
}

#[allow(clippy::too_many_arguments)]
pub fn gen_region_task_with(
    p: usize,
    q: usize,
    k: usize,
    m: usize,
    n_samples: usize,
    noise_sigma: f64,
    seed: u64,
    opts: TaskOptions,
) -> Result<RegionTask> {
    if n_samples == 0 {
        return Err(Error::InvalidConfig("a task needs n_samples >= 1".into()));
    }
    if noise_sigma < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "noise_sigma must be >= 0, got {noise_sigma}"
        )));
    }
    if opts.input_low >= opts.input_high {
        return Err(Error::InvalidConfig("empty input range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Hidden truth: all nodes random so the deep corrections carry signal.
    let table = PrefixTreeTable::init_all_uniform(p, q, k, &mut rng)?;
    let scale = 1.0 / (p as f64).sqrt();
    let bias = (0..q).map(|_| rng.random_range(-scale..scale)).collect();
    let truth = ConditionalLayer::new(
        GateConfig::deterministic(opts.truth_tau, m),
        opts.selector,
        table,
        bias,
        Activation::Identity,
    )?;

    let noise = Normal::new(0.0, noise_sigma)
        .map_err(|e| Error::InvalidConfig(format!("bad noise sigma: {e}")))?;
    let mut meter = CostMeter::new();
    let mut inputs = Vec::with_capacity(n_samples);
    let mut labels = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let x: Vec<f64> = (0..p)
            .map(|_| rng.random_range(opts.input_low..opts.input_high))
            .collect();
        let mut y =
            truth.forward_eval(&x, &CreditStrategy::DetachedGates, &mut rng, &mut meter)?;
        if noise_sigma > 0.0 {
            for v in y.iter_mut() {
                *v += noise.sample(&mut rng);
            }
        }
        inputs.push(x);
        labels.push(y);
    }
    Ok(RegionTask {
        inputs,
        labels,
        truth,
        noise_sigma,
        seed,
    })
}

/// Optimizer knobs for a training run.
#[derive(Debug, Clone, Copy)]
pub struct OptimizerConfig {
    pub epsilon: f64,
    pub lambda: f64,
    pub reg: RegKind,
    pub baseline_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            epsilon: 0.05,
            lambda: 0.0,
            reg: RegKind::None,
            baseline_decay: 0.9,
        }
    }
}

/// One epoch's row in the metrics table. The cost columns are cumulative
/// meter totals over all forward passes performed so far in the run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: u64,
    pub mse: f64,
    pub multiply_adds: u64,
    pub additions: u64,
    pub lookups: u64,
}

/// Everything a training run reports.
#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub strategy: String,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub final_mse: f64,
    pub params: ParamReport,
    /// Cost of a single metered forward pass, measured live.
    pub per_example_forward: CostMeter,
    /// Cumulative cost over the whole run.
    pub total: CostMeter,
    pub wall_time_secs: f64,
}

/// Mean squared error per output component over the task, using
/// evaluation-mode gating.
pub fn evaluate_mse(
    layer: &ConditionalLayer,
    strategy: &CreditStrategy,
    task: &RegionTask,
    rng: &mut impl Rng,
    meter: &mut CostMeter,
) -> Result<f64> {
    let mut se = 0.0;
    for (x, y) in task.inputs.iter().zip(&task.labels) {
        let h = layer.forward_eval(x, strategy, rng, meter)?;
        for (hc, yc) in h.iter().zip(y) {
            let e = hc - yc;
            se += e * e;
        }
    }
    Ok(se / (task.len() * task.q()) as f64)
}

/// Per-example SGD with lazy decay. Records metrics each epoch; the touch-all
/// decay catch-up runs before every evaluation, so recorded and final weights
/// always reflect accumulated decay.
pub fn train(
    layer: &mut ConditionalLayer,
    task: &RegionTask,
    strategy: &CreditStrategy,
    opt: &OptimizerConfig,
    epochs: usize,
    seed: u64,
) -> Result<RunMetrics> {
    if layer.p() != task.p() || layer.q() != task.q() {
        return Err(Error::Dimension(format!(
            "layer is {}x{} but the task is {}x{}",
            layer.p(),
            layer.q(),
            task.p(),
            task.q()
        )));
    }
    if matches!(strategy, CreditStrategy::Reinforce) && !layer.gate.is_stochastic() {
        return Err(Error::InvalidConfig(
            "the reinforce strategy trains gate-projection parameters and requires \
             stochastic gating"
                .into(),
        ));
    }
    let start = Instant::now();
    let q = layer.q();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = LazyRegState::new(&layer.table, opt.reg, opt.lambda, opt.epsilon)?;
    let mut reinforce_state = ReinforceState::new(opt.baseline_decay)?;
    let mut meter = CostMeter::new();

    // Single-forward cost probe on a side stream.
    let mut per_example_forward = CostMeter::new();
    {
        let mut probe_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        layer.forward_eval(&task.inputs[0], strategy, &mut probe_rng, &mut per_example_forward)?;
    }

    let mut order: Vec<usize> = (0..task.len()).collect();
    let mut records = Vec::with_capacity(epochs);
    for epoch in 1..=epochs as u64 {
        order.shuffle(&mut rng);
        for &i in &order {
            let x = &task.inputs[i];
            let y = &task.labels[i];
            let (h, trace) = layer.forward(x, strategy, &mut rng, &mut meter)?;
            let mut dl_dh = vec![0.0; q];
            let mut loss = 0.0;
            for c in 0..q {
                let e = h[c] - y[c];
                loss += e * e;
                dl_dh[c] = 2.0 * e;
            }
            let mut grads = layer.backward(&trace, &dl_dh, strategy)?;
            if matches!(strategy, CreditStrategy::Reinforce) {
                let mu = trace
                    .mean_probs
                    .as_ref()
                    .expect("stochastic trace carries means");
                grads.d_gate_projection = Some(reinforce_gate_grad(
                    loss,
                    &mut reinforce_state,
                    &trace.gates,
                    mu,
                    x,
                )?);
            }
            sgd_apply(layer, &grads, &mut state)?;
        }
        state.finalize(&mut layer.table)?;
        let mse = evaluate_mse(layer, strategy, task, &mut rng, &mut meter)?;
        log::debug!("epoch {epoch}: mse {mse:e}");
        records.push(EpochRecord {
            epoch,
            mse,
            multiply_adds: meter.multiply_adds,
            additions: meter.additions,
            lookups: meter.lookups,
        });
        if !mse.is_finite() || mse > DIVERGENCE_GUARD {
            return Err(Error::Diverged {
                epoch: epoch as usize,
                mse,
            });
        }
    }

    let final_mse = records.last().map(|r| r.mse).unwrap_or(f64::NAN);
    Ok(RunMetrics {
        strategy: strategy.name().to_string(),
        seed,
        epochs: records,
        final_mse,
        params: count_parameters(layer.p(), q, layer.k())?,
        per_example_forward,
        total: meter,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct GradcheckConfig {
    pub configs: usize,
    pub seed: u64,
    pub fd_step: f64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            configs: 50,
            seed: 7,
            fd_step: 1e-5,
            tolerance: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroupReport {
    pub group: String,
    pub checks: u64,
    pub max_rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub configs: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub groups: Vec<GroupReport>,
}

impl GradcheckReport {
    pub fn pass(&self) -> bool {
        self.groups.iter().all(|g| g.pass)
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

struct GroupAccum {
    checks: u64,
    max_rel_err: f64,
}

impl GroupAccum {
    fn new() -> Self {
        GroupAccum {
            checks: 0,
            max_rel_err: 0.0,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        self.checks += 1;
        let e = rel_err(analytic, numeric);
        if e > self.max_rel_err {
            self.max_rel_err = e;
        }
    }
}

/// Scalar probe loss for the finite-difference oracles: `sum_c h_c` under the
/// trace's frozen gating pattern.
fn frozen_loss(layer: &ConditionalLayer, trace: &ForwardTrace, x: &[f64]) -> f64 {
    layer
        .replay_forward(trace, x)
        .expect("replay of a valid trace")
        .iter()
        .sum()
}

fn fd_table(
    layer: &mut ConditionalLayer,
    trace: &ForwardTrace,
    x: &[f64],
    flat: usize,
    step: f64,
) -> f64 {
    let orig = layer.table.entries()[flat];
    layer.table.entries_mut()[flat] = orig + step;
    let lp = frozen_loss(layer, trace, x);
    layer.table.entries_mut()[flat] = orig - step;
    let lm = frozen_loss(layer, trace, x);
    layer.table.entries_mut()[flat] = orig;
    (lp - lm) / (2.0 * step)
}

fn fd_bias(
    layer: &mut ConditionalLayer,
    trace: &ForwardTrace,
    x: &[f64],
    c: usize,
    step: f64,
) -> f64 {
    let orig = layer.bias[c];
    layer.bias[c] = orig + step;
    let lp = frozen_loss(layer, trace, x);
    layer.bias[c] = orig - step;
    let lm = frozen_loss(layer, trace, x);
    layer.bias[c] = orig;
    (lp - lm) / (2.0 * step)
}

fn fd_input(layer: &ConditionalLayer, trace: &ForwardTrace, x: &[f64], t: usize, step: f64) -> f64 {
    let mut xp = x.to_vec();
    xp[t] = x[t] + step;
    let lp = frozen_loss(layer, trace, &xp);
    xp[t] = x[t] - step;
    let lm = frozen_loss(layer, trace, &xp);
    (lp - lm) / (2.0 * step)
}

/// Central finite differences against the analytic backward pass for every
/// strategy and parameter group, over random small configurations.
pub fn gradcheck_suite(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let step = cfg.fd_step;

    let mut detached_table = GroupAccum::new();
    let mut detached_bias = GroupAccum::new();
    let mut detached_input = GroupAccum::new();
    let mut st_table = GroupAccum::new();
    let mut st_bias = GroupAccum::new();
    let mut modulated_table = GroupAccum::new();
    let mut modulated_bias = GroupAccum::new();
    let mut modulated_input = GroupAccum::new();
    let mut reinforce_logp = GroupAccum::new();

    for trial in 0..cfg.configs {
        let p = rng.random_range(1..=8usize);
        let q = rng.random_range(1..=8usize);
        let k = rng.random_range(0..=4usize.min(p));
        let m = rng.random_range(k.max(1)..=p);
        let activation = match trial % 3 {
            0 => Activation::Identity,
            1 => Activation::Tanh,
            _ => Activation::Rectifier,
        };
        let selector = if trial % 2 == 0 {
            SelectorStrategy::first_k(k)
        } else {
            SelectorStrategy::sliding_window(k)
        };
        let table = PrefixTreeTable::init_all_uniform(p, q, k, &mut rng)?;
        let bias: Vec<f64> = (0..q).map(|_| rng.random_range(-0.5..0.5)).collect();
        let mut layer = ConditionalLayer::new(
            GateConfig::deterministic(0.0, m),
            selector,
            table,
            bias,
            activation,
        )?;
        let nodes = layer.table.nodes_per_unit();
        let ones = vec![1.0; q];

        // Detached gates, plus straight-through (same fixed-gate path).
        let x: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut meter = CostMeter::new();
        let (_, trace) =
            layer.forward(&x, &CreditStrategy::DetachedGates, &mut rng, &mut meter)?;
        let grads = layer.backward(&trace, &ones, &CreditStrategy::DetachedGates)?;
        let st = CreditStrategy::StraightThrough { st_temperature: 1.0 };
        let (_, st_trace) = layer.forward(&x, &st, &mut rng, &mut meter)?;
        let st_grads = layer.backward(&st_trace, &ones, &st)?;
        for j in 0..p {
            for node in 0..nodes {
                for c in 0..q {
                    let flat = (j * nodes + node) * q + c;
                    let numeric = fd_table(&mut layer, &trace, &x, flat, step);
                    let analytic = grads.d_table.get(&(j, node)).map(|v| v[c]).unwrap_or(0.0);
                    detached_table.record(analytic, numeric);
                    let st_analytic =
                        st_grads.d_table.get(&(j, node)).map(|v| v[c]).unwrap_or(0.0);
                    st_table.record(st_analytic, numeric);
                }
            }
        }
        for c in 0..q {
            let numeric = fd_bias(&mut layer, &trace, &x, c, step);
            detached_bias.record(grads.d_bias[c], numeric);
            st_bias.record(st_grads.d_bias[c], numeric);
        }
        for t in 0..p {
            let numeric = fd_input(&layer, &trace, &x, t, step);
            detached_input.record(grads.d_input[t], numeric);
        }

        // Modulated: rectifier-range inputs, exact gradient of the modulated
        // forward including the coefficient path into x.
        let xm: Vec<f64> = (0..p).map(|_| rng.random_range(0.05..1.0)).collect();
        let (_, mtrace) = layer.forward(&xm, &CreditStrategy::Modulated, &mut rng, &mut meter)?;
        let mgrads = layer.backward(&mtrace, &ones, &CreditStrategy::Modulated)?;
        for j in 0..p {
            for node in 0..nodes {
                for c in 0..q {
                    let flat = (j * nodes + node) * q + c;
                    let numeric = fd_table(&mut layer, &mtrace, &xm, flat, step);
                    let analytic =
                        mgrads.d_table.get(&(j, node)).map(|v| v[c]).unwrap_or(0.0);
                    modulated_table.record(analytic, numeric);
                }
            }
        }
        for c in 0..q {
            let numeric = fd_bias(&mut layer, &mtrace, &xm, c, step);
            modulated_bias.record(mgrads.d_bias[c], numeric);
        }
        for t in 0..p {
            let numeric = fd_input(&layer, &mtrace, &xm, t, step);
            modulated_input.record(mgrads.d_input[t], numeric);
        }

        // REINFORCE: score function against finite differences of the gate
        // log-likelihood in the projection.
        let u = Matrix::random_uniform(p, m, 1.0, &mut rng);
        let (g, mu) = gating::stochastic_gates(&x, &u, &mut rng)?;
        let mut no_baseline = ReinforceState::without_baseline();
        let score = reinforce_gate_grad(1.0, &mut no_baseline, &g, &mu, &x)?;
        for t in 0..p {
            for i in 0..m {
                let mut up = u.clone();
                *up.at_mut(t, i) = u.at(t, i) + step;
                let lp = gate_log_prob(&g, &gating::stochastic_means(&x, &up)?);
                *up.at_mut(t, i) = u.at(t, i) - step;
                let lm = gate_log_prob(&g, &gating::stochastic_means(&x, &up)?);
                reinforce_logp.record(score.at(t, i), (lp - lm) / (2.0 * step));
            }
        }
    }

    let tolerance = cfg.tolerance;
    let group = |name: &str, acc: GroupAccum| GroupReport {
        group: name.to_string(),
        checks: acc.checks,
        max_rel_err: acc.max_rel_err,
        pass: acc.max_rel_err <= tolerance,
    };
    Ok(GradcheckReport {
        configs: cfg.configs,
        seed: cfg.seed,
        tolerance,
        groups: vec![
            group("detached_table", detached_table),
            group("detached_bias", detached_bias),
            group("detached_input", detached_input),
            group("straight_through_table", st_table),
            group("straight_through_bias", st_bias),
            group("modulated_table", modulated_table),
            group("modulated_bias", modulated_bias),
            group("modulated_input", modulated_input),
            group("reinforce_logp", reinforce_logp),
        ],
    })
}

// ---------------------------------------------------------------------------
// Cost accounting
// ---------------------------------------------------------------------------

/// One row of the capacity/cost table. The forward costs are measured on a
/// live metered forward pass, not derived from formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostRow {
    pub k: u64,
    pub params_exact: u64,
    pub params_nominal: u64,
    pub fwd_madds: u64,
    pub fwd_adds: u64,
    pub ratio_gain: f64,
}

/// Measure forward cost and parameter counts for each depth in `k_values`.
pub fn cost_report(p: usize, q: usize, k_values: &[usize]) -> Result<Vec<CostRow>> {
    let mut rows = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let report = count_parameters(p, q, k)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0xbe7c);
        // Stochastic gating keeps m = k legal for any p.
        let m = k.max(1);
        let layer = ConditionalLayer::new(
            GateConfig::stochastic(
                Matrix::random_uniform(p, m, 1.0, &mut rng),
                EvalPolicy::ThresholdMeanAtEval,
            ),
            SelectorStrategy::first_k(k),
            PrefixTreeTable::init_root_uniform(p, q, k, &mut rng)?,
            vec![0.0; q],
            Activation::Identity,
        )?;
        let x: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut meter = CostMeter::new();
        layer.forward(&x, &CreditStrategy::DetachedGates, &mut rng, &mut meter)?;
        rows.push(CostRow {
            k: k as u64,
            params_exact: report.total_table_entries,
            params_nominal: report.paper_nominal_entries,
            fwd_madds: meter.multiply_adds,
            fwd_adds: meter.additions,
            ratio_gain: report.capacity_ratio_gain,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Dense baseline comparison
// ---------------------------------------------------------------------------

/// Paired metrics from training the conditional layer and a compute-matched
/// dense baseline on the same task. No winner is asserted; both results are
/// reported with their costs.
#[derive(Debug, Clone)]
pub struct ComparisonMetrics {
    pub conditional: RunMetrics,
    pub dense: RunMetrics,
}

/// Train `layer` and a dense baseline with the same per-example contraction
/// cost (`q_dense = q`, so both spend `p*q` multiply-adds per forward). The
/// two jobs run concurrently; each owns its seed-derived random stream.
pub fn baseline_comparison(
    mut layer: ConditionalLayer,
    task: &RegionTask,
    strategy: &CreditStrategy,
    opt: &OptimizerConfig,
    epochs: usize,
    seed: u64,
) -> Result<ComparisonMetrics> {
    let (cond, dense) = std::thread::scope(|scope| {
        let cond_job = scope.spawn(|| train(&mut layer, task, strategy, opt, epochs, seed));
        let dense = train_dense_baseline(task, opt, epochs, seed);
        (cond_job.join().expect("training thread panicked"), dense)
    });
    Ok(ComparisonMetrics {
        conditional: cond?,
        dense: dense?,
    })
}

/// Plain dense layer trained with per-example SGD and eager decay; the
/// reference point for the capacity experiments.
pub fn train_dense_baseline(
    task: &RegionTask,
    opt: &OptimizerConfig,
    epochs: usize,
    seed: u64,
) -> Result<RunMetrics> {
    let start = Instant::now();
    let p = task.p();
    let q = task.q();
    if opt.reg != RegKind::None && opt.epsilon * opt.lambda >= 1.0 {
        return Err(Error::InvalidConfig(format!(
            "eps*lambda = {} must be < 1",
            opt.epsilon * opt.lambda
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (p as f64).sqrt();
    let mut w = Matrix::random_uniform(p, q, scale, &mut rng);
    let mut bias = vec![0.0; q];
    let activation = Activation::Identity;

    let mut meter = CostMeter::new();
    let mut per_example_forward = CostMeter::new();
    dense_forward(&w, &bias, activation, &task.inputs[0], &mut per_example_forward)?;

    let mut order: Vec<usize> = (0..task.len()).collect();
    let mut records = Vec::with_capacity(epochs);
    for epoch in 1..=epochs as u64 {
        order.shuffle(&mut rng);
        for &i in &order {
            let x = &task.inputs[i];
            let y = &task.labels[i];
            let h = dense_forward(&w, &bias, activation, x, &mut meter)?;
            // Eager decay: every weight is touched every step anyway.
            match opt.reg {
                RegKind::None => {}
                RegKind::L2 => {
                    let f = 1.0 - opt.epsilon * opt.lambda;
                    for v in w.data_mut() {
                        *v *= f;
                    }
                }
                RegKind::L1 => {
                    let s = opt.epsilon * opt.lambda;
                    for v in w.data_mut() {
                        *v = v.signum() * (v.abs() - s).max(0.0);
                    }
                }
            }
            for c in 0..q {
                let delta = 2.0 * (h[c] - y[c]);
                for (t, &xv) in x.iter().enumerate() {
                    *w.at_mut(t, c) -= opt.epsilon * xv * delta;
                }
                bias[c] -= opt.epsilon * delta;
            }
        }
        let mut se = 0.0;
        for (x, y) in task.inputs.iter().zip(&task.labels) {
            let h = dense_forward(&w, &bias, activation, x, &mut meter)?;
            for (hc, yc) in h.iter().zip(y) {
                let e = hc - yc;
                se += e * e;
            }
        }
        let mse = se / (task.len() * q) as f64;
        records.push(EpochRecord {
            epoch,
            mse,
            multiply_adds: meter.multiply_adds,
            additions: meter.additions,
            lookups: meter.lookups,
        });
        if !mse.is_finite() || mse > DIVERGENCE_GUARD {
            return Err(Error::Diverged {
                epoch: epoch as usize,
                mse,
            });
        }
    }

    let final_mse = records.last().map(|r| r.mse).unwrap_or(f64::NAN);
    Ok(RunMetrics {
        strategy: "dense".to_string(),
        seed,
        epochs: records,
        final_mse,
        params: count_parameters(p, q, 0)?,
        per_example_forward,
        total: meter,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// Oracle equivalence suites
// ---------------------------------------------------------------------------

/// Results of the traversal/enumeration and lazy/eager equivalence suites.
#[derive(Debug, Clone)]
pub struct OracleCheckReport {
    pub traversal_cases: usize,
    pub traversal_max_abs_err: f64,
    pub traversal_pass: bool,
    pub lazy_l2_schedules: usize,
    pub lazy_l2_max_rel_err: f64,
    pub lazy_l2_pass: bool,
    pub l1_nodes_checked: usize,
    pub l1_exact_mismatches: usize,
    pub l1_pass: bool,
}

impl OracleCheckReport {
    pub fn pass(&self) -> bool {
        self.traversal_pass && self.lazy_l2_pass && self.l1_pass
    }
}

/// Tolerance for traversal vs leaf enumeration.
pub const TRAVERSAL_TOL: f64 = 1e-12;
/// Relative tolerance for lazy-vs-eager L2 decay after finalize.
pub const LAZY_L2_TOL: f64 = 1e-10;

/// Run both oracle suites: prefix-sum traversal against full leaf
/// enumeration (100 random tables, depth up to 6) and lazy decay against the
/// eager per-step oracle (20 random 200-step schedules).
pub fn oracle_check(seed: u64) -> Result<OracleCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Traversal vs enumeration.
    let mut traversal_max = 0.0f64;
    let traversal_cases = 100;
    for _ in 0..traversal_cases {
        let p = rng.random_range(1..5usize);
        let q = rng.random_range(1..5usize);
        let k = rng.random_range(0..=6usize);
        let table = PrefixTreeTable::init_all_uniform(p, q, k, &mut rng)?;
        let j = rng.random_range(0..p);
        let bits: Vec<bool> = (0..k).map(|_| rng.random::<bool>()).collect();
        let mut meter = CostMeter::new();
        let fast = table.effective_weight(j, &bits, &mut meter);
        let slow = naive_leaf_oracle(&table, j, &bits)?;
        for (a, b) in fast.iter().zip(&slow) {
            traversal_max = traversal_max.max((a - b).abs());
        }
    }

    // Lazy vs eager L2 over random schedules.
    let schedules = 20;
    let steps = 200;
    let mut l2_max = 0.0f64;
    for _ in 0..schedules {
        let (p, q, k) = (3, 2, 2);
        let initial = PrefixTreeTable::init_all_uniform(p, q, k, &mut rng)?;
        let nodes = initial.nodes_per_unit();
        let eps = rng.random_range(0.01..0.2);
        let lam = rng.random_range(0.1..0.9);
        let schedule: Vec<DecayStep> = (0..steps)
            .map(|_| {
                let count = rng.random_range(0..4usize);
                let mut seen = std::collections::BTreeSet::new();
                let mut touched = Vec::new();
                for _ in 0..count {
                    let j = rng.random_range(0..p);
                    let node = rng.random_range(0..nodes);
                    if seen.insert((j, node)) {
                        let grad: Vec<f64> =
                            (0..q).map(|_| rng.random_range(-1.0..1.0)).collect();
                        touched.push(((j, node), grad));
                    }
                }
                DecayStep { touched }
            })
            .collect();

        let mut lazy = initial.clone();
        let mut state = LazyRegState::new(&lazy, RegKind::L2, lam, eps)?;
        for step in &schedule {
            sgd_apply_table_step(&mut lazy, &step.touched, &mut state)?;
        }
        state.finalize(&mut lazy)?;
        let eager = eager_decay_oracle(&initial, &schedule, RegKind::L2, lam, eps)?;
        for (a, b) in lazy.entries().iter().zip(eager.entries()) {
            l2_max = l2_max.max((a - b).abs() / b.abs().max(1.0));
        }
    }

    // Lazy L1 on gradient-free intervals: the stepwise shrink must match the
    // single catch-up exactly. Dyadic rates and grid-quantized weights keep
    // every subtraction representable, so the comparison is bit-for-bit.
    let mut l1_nodes = 0usize;
    let mut l1_mismatches = 0usize;
    for _ in 0..schedules {
        let (p, q, k) = (2, 2, 2);
        let mut initial = PrefixTreeTable::zeros(p, q, k)?;
        for e in initial.entries_mut() {
            // multiples of 2^-20 in (-2, 2)
            let ticks: i64 = rng.random_range(-(1 << 21)..(1 << 21));
            *e = ticks as f64 / (1u64 << 20) as f64;
        }
        let (eps, lam) = (0.5, 1.0 / 128.0); // eps*lambda = 2^-8
        let steps_free = rng.random_range(1..200u64);
        let schedule: Vec<DecayStep> =
            (0..steps_free).map(|_| DecayStep::default()).collect();

        let mut lazy = initial.clone();
        let mut state = LazyRegState::new(&lazy, RegKind::L1, lam, eps)?;
        for step in &schedule {
            sgd_apply_table_step(&mut lazy, &step.touched, &mut state)?;
        }
        state.finalize(&mut lazy)?;
        let eager = eager_decay_oracle(&initial, &schedule, RegKind::L1, lam, eps)?;
        let closed = lazy_l1_catchup(initial.entries(), eps, lam, steps_free);
        for ((a, b), c) in lazy.entries().iter().zip(eager.entries()).zip(&closed) {
            l1_nodes += 1;
            if a.to_bits() != b.to_bits() || a.to_bits() != c.to_bits() {
                l1_mismatches += 1;
            }
        }
    }

    Ok(OracleCheckReport {
        traversal_cases,
        traversal_max_abs_err: traversal_max,
        traversal_pass: traversal_max <= TRAVERSAL_TOL,
        lazy_l2_schedules: schedules,
        lazy_l2_max_rel_err: l2_max,
        lazy_l2_pass: l2_max <= LAZY_L2_TOL,
        l1_nodes_checked: l1_nodes,
        l1_exact_mismatches: l1_mismatches,
        l1_pass: l1_mismatches == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_task() -> RegionTask {
        gen_region_task(4, 4, 2, 2, 200, 0.0, 9).unwrap()
    }

    #[test]
    fn task_is_reproducible_from_seed() {
        let a = gen_region_task(3, 2, 2, 2, 50, 0.1, 42).unwrap();
        let b = gen_region_task(3, 2, 2, 2, 50, 0.1, 42).unwrap();
        assert_eq!(a.inputs, b.inputs);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn noise_free_task_is_self_consistent() {
        let task = small_task();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut meter = CostMeter::new();
        let mse = evaluate_mse(
            &task.truth,
            &CreditStrategy::DetachedGates,
            &task,
            &mut rng,
            &mut meter,
        )
        .unwrap();
        assert_eq!(mse, 0.0);
    }

    #[test]
    fn depth_zero_task_is_linear() {
        // Labels of a k=0 task are affine in x; an ordinary least-squares fit
        // (computed here by Gaussian elimination on the normal equations)
        // drives the MSE to numerical zero.
        let task = gen_region_task(3, 2, 0, 1, 300, 0.0, 5).unwrap();
        let p = task.p();
        let d = p + 1; // affine fit
        let mut mse = 0.0;
        for c in 0..task.q() {
            // normal equations A^T A beta = A^T y
            let mut ata = vec![vec![0.0f64; d]; d];
            let mut aty = vec![0.0f64; d];
            for (x, y) in task.inputs.iter().zip(&task.labels) {
                let mut row = x.clone();
                row.push(1.0);
                for i in 0..d {
                    for jj in 0..d {
                        ata[i][jj] += row[i] * row[jj];
                    }
                    aty[i] += row[i] * y[c];
                }
            }
            // Gaussian elimination with partial pivoting.
            for col in 0..d {
                let piv = (col..d)
                    .max_by(|&a, &b| ata[a][col].abs().partial_cmp(&ata[b][col].abs()).unwrap())
                    .unwrap();
                ata.swap(col, piv);
                aty.swap(col, piv);
                let diag = ata[col][col];
                for r in (col + 1)..d {
                    let f = ata[r][col] / diag;
                    for cc in col..d {
                        ata[r][cc] -= f * ata[col][cc];
                    }
                    aty[r] -= f * aty[col];
                }
            }
            let mut beta = vec![0.0f64; d];
            for r in (0..d).rev() {
                let mut v = aty[r];
                for cc in (r + 1)..d {
                    v -= ata[r][cc] * beta[cc];
                }
                beta[r] = v / ata[r][r];
            }
            for (x, y) in task.inputs.iter().zip(&task.labels) {
                let pred: f64 =
                    x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + beta[p];
                mse += (pred - y[c]).powi(2);
            }
        }
        mse /= (task.len() * task.q()) as f64;
        assert!(mse < 1e-6, "least-squares residual {mse}");
    }

    #[test]
    fn zero_learning_rate_keeps_mse_constant() {
        let task = small_task();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layer = ConditionalLayer::new(
            GateConfig::deterministic(0.0, 2),
            SelectorStrategy::first_k(2),
            PrefixTreeTable::init_root_uniform(4, 4, 2, &mut rng).unwrap(),
            vec![0.0; 4],
            Activation::Identity,
        )
        .unwrap();
        let opt = OptimizerConfig {
            epsilon: 0.0,
            ..OptimizerConfig::default()
        };
        let metrics = train(
            &mut layer,
            &task,
            &CreditStrategy::DetachedGates,
            &opt,
            4,
            11,
        )
        .unwrap();
        let first = metrics.epochs[0].mse;
        for r in &metrics.epochs {
            assert_eq!(r.mse, first);
        }
    }

    #[test]
    fn realizable_task_trains_below_threshold() {
        let task = small_task();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut layer = ConditionalLayer::new(
            GateConfig::deterministic(0.0, 2),
            SelectorStrategy::first_k(2),
            PrefixTreeTable::init_root_uniform(4, 4, 2, &mut rng).unwrap(),
            vec![0.0; 4],
            Activation::Identity,
        )
        .unwrap();
        let opt = OptimizerConfig::default();
        let metrics = train(
            &mut layer,
            &task,
            &CreditStrategy::DetachedGates,
            &opt,
            40,
            3,
        )
        .unwrap();
        assert!(
            metrics.final_mse < 1e-3,
            "final mse {} too high",
            metrics.final_mse
        );
    }

    #[test]
    fn heavy_decay_shrinks_table_norms() {
        let task = small_task();
        let make_layer = || {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            ConditionalLayer::new(
                GateConfig::deterministic(0.0, 2),
                SelectorStrategy::first_k(2),
                PrefixTreeTable::init_root_uniform(4, 4, 2, &mut rng).unwrap(),
                vec![0.0; 4],
                Activation::Identity,
            )
            .unwrap()
        };
        let norm = |layer: &ConditionalLayer| -> f64 {
            layer.table.entries().iter().map(|e| e * e).sum::<f64>().sqrt()
        };
        let mut plain = make_layer();
        let mut decayed = make_layer();
        let opt_plain = OptimizerConfig::default();
        let opt_heavy = OptimizerConfig {
            lambda: 10.0, // eps*lambda = 0.5
            reg: RegKind::L2,
            ..OptimizerConfig::default()
        };
        train(&mut plain, &task, &CreditStrategy::DetachedGates, &opt_plain, 10, 5).unwrap();
        train(&mut decayed, &task, &CreditStrategy::DetachedGates, &opt_heavy, 10, 5).unwrap();
        assert!(
            norm(&decayed) < norm(&plain),
            "decayed {} vs plain {}",
            norm(&decayed),
            norm(&plain)
        );
    }

    #[test]
    fn divergent_run_aborts_with_diagnostic() {
        let task = small_task();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut layer = ConditionalLayer::new(
            GateConfig::deterministic(0.0, 2),
            SelectorStrategy::first_k(2),
            PrefixTreeTable::init_root_uniform(4, 4, 2, &mut rng).unwrap(),
            vec![0.0; 4],
            Activation::Identity,
        )
        .unwrap();
        let opt = OptimizerConfig {
            epsilon: 50.0,
            ..OptimizerConfig::default()
        };
        let err = train(&mut layer, &task, &CreditStrategy::DetachedGates, &opt, 5, 7)
            .unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }

    #[test]
    fn cost_report_measures_expected_counts() {
        let rows = cost_report(8, 8, &[1, 3, 4, 8]).unwrap();
        assert_eq!(rows[1].fwd_adds, 8 * 3 * 8);
        // multiply-adds constant in k
        assert_eq!(rows[0].fwd_madds, 64);
        assert_eq!(rows[3].fwd_madds, 64);
        assert_eq!(rows[3].ratio_gain, 256.0 / 8.0);
        // the gain doubles-per-increment pattern: gain(8)/gain(4) = 8
        assert_eq!(rows[3].ratio_gain / rows[2].ratio_gain, 8.0);
    }

    #[test]
    fn gradcheck_small_run_passes() {
        let report = gradcheck_suite(&GradcheckConfig {
            configs: 6,
            ..GradcheckConfig::default()
        })
        .unwrap();
        for g in &report.groups {
            assert!(
                g.pass,
                "group {} max rel err {:e} over tolerance",
                g.group, g.max_rel_err
            );
        }
    }

    #[test]
    fn oracle_check_passes() {
        let report = oracle_check(31).unwrap();
        assert!(report.pass(), "{report:?}");
    }

    #[test]
    fn comparison_is_deterministic_and_counts_params() {
        let task = small_task();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let layer = ConditionalLayer::new(
            GateConfig::deterministic(0.0, 2),
            SelectorStrategy::first_k(2),
            PrefixTreeTable::init_root_uniform(4, 4, 2, &mut rng).unwrap(),
            vec![0.0; 4],
            Activation::Identity,
        )
        .unwrap();
        let opt = OptimizerConfig::default();
        let a = baseline_comparison(layer.clone(), &task, &CreditStrategy::DetachedGates, &opt, 3, 13)
            .unwrap();
        let b = baseline_comparison(layer, &task, &CreditStrategy::DetachedGates, &opt, 3, 13)
            .unwrap();
        assert_eq!(a.conditional.epochs, b.conditional.epochs);
        assert_eq!(a.dense.epochs, b.dense.epochs);
        // conditional params exceed dense by the node count factor 2^(k+1)-1
        let factor =
            a.conditional.params.total_table_entries / a.dense.params.total_table_entries;
        assert_eq!(factor, 7); // k = 2
        // matched contraction cost
        assert_eq!(
            a.conditional.per_example_forward.multiply_adds,
            a.dense.per_example_forward.multiply_adds
        );
    }
}
