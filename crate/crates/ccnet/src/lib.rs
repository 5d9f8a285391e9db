//! Conditional-computation neural layers with tree-structured prefix-sum
//! weight tables.
//!
//! A conventional layer computes `h = phi(W^T x + b)` with one weight matrix
//! touched in full by every example. Here the effective weights are chosen by
//! the input itself: hard gate bits derived from `x` spell a root-to-leaf
//! path through a per-unit binary tree of weight vectors, and the unit's
//! weight vector is the sum of the `k+1` node vectors along that path. A
//! depth-`k` layer stores `p*q*(2^(k+1)-1)` parameters but still spends only
//! `p*q` multiply-adds plus `p*k*q` additions per example, so the
//! parameters-to-computation ratio grows like `2^k/k` while short prefixes
//! stay shared and deep nodes act as small, rarely-updated corrections.
//!
//! The crate covers the full experiment loop around that parametrization:
//!
//! * [`gating`] — deterministic threshold gates, Bernoulli gates with
//!   `sigmoid(U^T x)` means, and per-unit bit selectors.
//! * [`prefix_weights`] — the prefix-sum table, its enumeration oracle, and
//!   parameter/capacity accounting.
//! * [`cond_layer`] — forward/backward passes under four credit-assignment
//!   strategies (detached gates, straight-through, modulated weights,
//!   REINFORCE), plus the dense baseline.
//! * [`optimizer`] — per-example SGD with lazy L1/L2 weight decay and
//!   delta-t catch-up, and the variance-reduced REINFORCE estimator.
//! * [`harness`] — synthetic realizable tasks, training, finite-difference
//!   gradient checking, cost measurement, and dense-baseline comparisons.
//! * [`cli`] — the `ccnet` binary: `train`, `gradcheck`, `params`, `bench`,
//!   `compare`, `oracle-check`.
//!
//! # Example
//!
//! ```
//! use ccnet::cond_layer::{Activation, ConditionalLayer, CreditStrategy};
//! use ccnet::cost::CostMeter;
//! use ccnet::gating::{GateConfig, SelectorStrategy};
//! use ccnet::prefix_weights::PrefixTreeTable;
//! use rand::SeedableRng;
//!
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
//! let layer = ConditionalLayer::new(
//!     GateConfig::deterministic(0.0, 3),
//!     SelectorStrategy::first_k(3),
//!     PrefixTreeTable::init_root_uniform(4, 2, 3, &mut rng)?,
//!     vec![0.0; 2],
//!     Activation::Tanh,
//! )?;
//! let mut meter = CostMeter::new();
//! let (h, trace) = layer.forward(
//!     &[0.4, -0.2, 0.9, 0.1],
//!     &CreditStrategy::DetachedGates,
//!     &mut rng,
//!     &mut meter,
//! )?;
//! assert_eq!(h.len(), 2);
//! assert_eq!(meter.multiply_adds, 4 * 2);      // p*q contraction
//! assert_eq!(meter.additions, 4 * 3 * 2);      // p*k*q weight construction
//! let grads = layer.backward(&trace, &[1.0, 1.0], &CreditStrategy::DetachedGates)?;
//! assert_eq!(grads.d_table.len(), 4 * (3 + 1)); // only traversed nodes
//! # Ok::<(), ccnet::Error>(())
//! ```
//!
//! The `examples/` directory holds one runnable program per capability; start
//! with `cargo run --example train_region`.

pub mod cli;
pub mod cond_layer;
pub mod cost;
pub mod error;
pub mod gating;
pub mod harness;
pub mod matrix;
pub mod optimizer;
pub mod prefix_weights;

pub use cond_layer::{Activation, ConditionalLayer, CreditStrategy, ForwardTrace, LayerGrads};
pub use cost::CostMeter;
pub use error::{Error, Result};
pub use gating::{GateConfig, GateVector, SelectorStrategy};
pub use prefix_weights::{ParamReport, PrefixTreeTable};
