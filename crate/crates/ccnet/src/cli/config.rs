//! Run configuration: a strict-schema JSON file holding every knob.
//!
//! Unknown keys are rejected by name; silent typos in experiment configs are
//! the main operational hazard. Every field has a documented default, so the
//! minimal config is `{}`.
//!
//! All randomness in a run flows from the single `seed`: the task generator
//! uses `seed`, layer initialization uses `seed + 1`, and the training loop
//! (shuffles and gate sampling) uses `seed + 2`.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cond_layer::{Activation, ConditionalLayer, CreditStrategy};
use crate::error::{Error, Result};
use crate::gating::{EvalPolicy, GateConfig, SelectorStrategy};
use crate::harness::{OptimizerConfig, RegionTask, TaskOptions};
use crate::matrix::Matrix;
use crate::optimizer::RegKind;
use crate::prefix_weights::{PrefixTreeTable, MAX_DEPTH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GatingKind {
    Deterministic,
    Stochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalPolicyKind {
    ThresholdMean,
    Sample,
}

impl From<EvalPolicyKind> for EvalPolicy {
    fn from(k: EvalPolicyKind) -> Self {
        match k {
            EvalPolicyKind::ThresholdMean => EvalPolicy::ThresholdMeanAtEval,
            EvalPolicyKind::Sample => EvalPolicy::SampleAtEval,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorKindCfg {
    FirstK,
    SlidingWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Detached,
    StraightThrough,
    Modulated,
    Reinforce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegKindCfg {
    None,
    L2,
    L1,
}

impl From<RegKindCfg> for RegKind {
    fn from(k: RegKindCfg) -> Self {
        match k {
            RegKindCfg::None => RegKind::None,
            RegKindCfg::L2 => RegKind::L2,
            RegKindCfg::L1 => RegKind::L1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Identity,
    Tanh,
    Rectifier,
}

impl From<ActivationKind> for Activation {
    fn from(k: ActivationKind) -> Self {
        match k {
            ActivationKind::Identity => Activation::Identity,
            ActivationKind::Tanh => Activation::Tanh,
            ActivationKind::Rectifier => Activation::Rectifier,
        }
    }
}

/// Every knob of a run. Defaults shown in `Default::default`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub p: usize,
    pub q: usize,
    pub k: usize,
    pub m: usize,
    pub gating: GatingKind,
    pub tau: f64,
    pub eval_policy: EvalPolicyKind,
    pub selector: SelectorKindCfg,
    pub activation: ActivationKind,
    pub strategy: StrategyKind,
    pub st_temperature: f64,
    pub baseline_decay: f64,
    pub epsilon: f64,
    pub lambda: f64,
    pub reg: RegKindCfg,
    pub epochs: usize,
    pub n_samples: usize,
    pub noise_sigma: f64,
    /// Draw task inputs from (0,1) instead of (-1,1); required by the
    /// modulated strategy, whose coefficients assume rectifier outputs.
    pub nonneg_inputs: bool,
    pub seed: u64,
    pub metrics_out: Option<PathBuf>,
    pub model_out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            p: 4,
            q: 4,
            k: 2,
            m: 2,
            gating: GatingKind::Deterministic,
            tau: 0.0,
            eval_policy: EvalPolicyKind::ThresholdMean,
            selector: SelectorKindCfg::FirstK,
            activation: ActivationKind::Identity,
            strategy: StrategyKind::Detached,
            st_temperature: 1.0,
            baseline_decay: 0.9,
            epsilon: 0.05,
            lambda: 0.0,
            reg: RegKindCfg::None,
            epochs: 50,
            n_samples: 2000,
            noise_sigma: 0.0,
            nonneg_inputs: false,
            seed: 42,
            metrics_out: None,
            model_out: None,
        }
    }
}

impl RunConfig {
    /// Re-validate every cross-field constraint of the owning modules.
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.q == 0 {
            return Err(Error::InvalidConfig("p and q must be >= 1".into()));
        }
        if self.m == 0 {
            return Err(Error::InvalidConfig("m must be >= 1".into()));
        }
        if self.k > MAX_DEPTH {
            return Err(Error::InvalidConfig(format!(
                "k = {} exceeds the capacity guard {MAX_DEPTH}",
                self.k
            )));
        }
        if self.k > self.m {
            return Err(Error::InvalidConfig(format!(
                "selector reads k = {} bits but the gate vector only has m = {}",
                self.k, self.m
            )));
        }
        if self.gating == GatingKind::Deterministic && self.m > self.p {
            return Err(Error::InvalidConfig(format!(
                "deterministic gating requires m <= p (m = {}, p = {})",
                self.m, self.p
            )));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if self.reg != RegKindCfg::None && self.epsilon * self.lambda >= 1.0 {
            return Err(Error::InvalidConfig(format!(
                "eps*lambda = {} must be < 1",
                self.epsilon * self.lambda
            )));
        }
        if !(self.st_temperature > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "st_temperature must be > 0, got {}",
                self.st_temperature
            )));
        }
        if !(self.baseline_decay > 0.0 && self.baseline_decay < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "baseline_decay must lie in (0, 1), got {}",
                self.baseline_decay
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidConfig("n_samples must be >= 1".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        match self.strategy {
            StrategyKind::Modulated => {
                if self.gating != GatingKind::Deterministic {
                    return Err(Error::InvalidConfig(
                        "the modulated strategy requires deterministic gating".into(),
                    ));
                }
                if !self.nonneg_inputs {
                    return Err(Error::InvalidConfig(
                        "the modulated strategy assumes rectifier (non-negative) inputs; \
                         set nonneg_inputs = true"
                            .into(),
                    ));
                }
            }
            StrategyKind::Reinforce => {
                if self.gating != GatingKind::Stochastic {
                    return Err(Error::InvalidConfig(
                        "the reinforce strategy trains gate-projection parameters and \
                         requires stochastic gating"
                            .into(),
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn credit_strategy(&self) -> CreditStrategy {
        match self.strategy {
            StrategyKind::Detached => CreditStrategy::DetachedGates,
            StrategyKind::StraightThrough => CreditStrategy::StraightThrough {
                st_temperature: self.st_temperature,
            },
            StrategyKind::Modulated => CreditStrategy::Modulated,
            StrategyKind::Reinforce => CreditStrategy::Reinforce,
        }
    }

    pub fn optimizer(&self) -> OptimizerConfig {
        OptimizerConfig {
            epsilon: self.epsilon,
            lambda: self.lambda,
            reg: self.reg.into(),
            baseline_decay: self.baseline_decay,
        }
    }

    fn selector_strategy(&self) -> SelectorStrategy {
        match self.selector {
            SelectorKindCfg::FirstK => SelectorStrategy::first_k(self.k),
            SelectorKindCfg::SlidingWindow => SelectorStrategy::sliding_window(self.k),
        }
    }

    pub fn task_seed(&self) -> u64 {
        self.seed
    }

    pub fn init_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }

    pub fn train_seed(&self) -> u64 {
        self.seed.wrapping_add(2)
    }

    /// Generate the region task this config describes.
    pub fn build_task(&self) -> Result<RegionTask> {
        let (lo, hi) = if self.nonneg_inputs { (0.0, 1.0) } else { (-1.0, 1.0) };
        let opts = TaskOptions {
            input_low: lo,
            input_high: hi,
            truth_tau: self.tau,
            selector: self.selector_strategy(),
        };
        crate::harness::gen_region_task_with(
            self.p,
            self.q,
            self.k,
            self.m,
            self.n_samples,
            self.noise_sigma,
            self.task_seed(),
            opts,
        )
    }

    /// Build a freshly initialized learner layer.
    pub fn build_layer(&self) -> Result<ConditionalLayer> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.init_seed());
        let gate = match self.gating {
            GatingKind::Deterministic => GateConfig::deterministic(self.tau, self.m),
            GatingKind::Stochastic => {
                let scale = 1.0 / (self.p as f64).sqrt();
                let projection = Matrix::random_uniform(self.p, self.m, scale, &mut rng);
                GateConfig::stochastic(projection, self.eval_policy.into())
            }
        };
        let table = PrefixTreeTable::init_root_uniform(self.p, self.q, self.k, &mut rng)?;
        ConditionalLayer::new(
            gate,
            self.selector_strategy(),
            table,
            vec![0.0; self.q],
            self.activation.into(),
        )
    }
}

/// Parse and validate a config file. Error classes are distinct: a missing
/// file is an I/O error, a schema violation (bad JSON, unknown key, wrong
/// type) is a config error, and a cross-field violation is a validation
/// error; the CLI maps each to its own exit code.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg: RunConfig =
        serde_json::from_str(&text).map_err(|e| Error::ConfigSyntax(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_documented_defaults() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg.tau, 0.0);
        assert_eq!(cfg.st_temperature, 1.0);
        assert_eq!(cfg.baseline_decay, 0.9);
        assert_eq!(cfg.seed, 42);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = serde_json::from_str::<RunConfig>(r#"{"epsilonn": 0.1}"#).unwrap_err();
        assert!(err.to_string().contains("epsilonn"), "{err}");
    }

    #[test]
    fn capacity_guard_rejects_deep_trees() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"k": 30, "m": 30, "p": 32}"#).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn cross_field_rules() {
        let mut cfg = RunConfig::default();
        cfg.k = 3; // k > m = 2
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.m = 5; // deterministic needs m <= p = 4
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.reg = RegKindCfg::L2;
        cfg.lambda = 30.0; // eps*lambda = 1.5
        assert!(cfg.validate().is_err());

        let mut cfg = RunConfig::default();
        cfg.strategy = StrategyKind::Reinforce; // needs stochastic gating
        assert!(cfg.validate().is_err());
        cfg.gating = GatingKind::Stochastic;
        cfg.validate().unwrap();

        let mut cfg = RunConfig::default();
        cfg.strategy = StrategyKind::Modulated; // needs nonneg inputs
        assert!(cfg.validate().is_err());
        cfg.nonneg_inputs = true;
        cfg.validate().unwrap();
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = parse_config(Path::new("/nonexistent/c.json")).unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }
}
