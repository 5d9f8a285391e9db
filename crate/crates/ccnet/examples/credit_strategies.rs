//! Compare the four credit-assignment strategies on matched tasks.
//!
//! Detached gates never inform the gating parameters; straight-through and
//! REINFORCE route training signal into them; the modulated variant changes
//! the forward itself. Results are reported side by side, nothing is
//! asserted.
//!
//! ```bash
//! cargo run --release --example credit_strategies
//! ```

use ccnet::cli::config::{GatingKind, RunConfig, StrategyKind};
use ccnet::harness::train;

fn run(cfg: RunConfig) -> ccnet::Result<(String, f64, f64)> {
    cfg.validate()?;
    let task = cfg.build_task()?;
    let mut layer = cfg.build_layer()?;
    let metrics = train(
        &mut layer,
        &task,
        &cfg.credit_strategy(),
        &cfg.optimizer(),
        cfg.epochs,
        cfg.train_seed(),
    )?;
    Ok((metrics.strategy, metrics.final_mse, metrics.wall_time_secs))
}

fn main() -> ccnet::Result<()> {
    let base = RunConfig {
        epochs: 20,
        n_samples: 1000,
        seed: 2024,
        ..RunConfig::default()
    };

    let mut rows = Vec::new();

    rows.push(run(RunConfig {
        strategy: StrategyKind::Detached,
        ..base.clone()
    })?);

    rows.push(run(RunConfig {
        strategy: StrategyKind::StraightThrough,
        st_temperature: 0.5,
        ..base.clone()
    })?);

    // Modulated needs rectifier-range inputs and a threshold that still
    // splits them.
    rows.push(run(RunConfig {
        strategy: StrategyKind::Modulated,
        nonneg_inputs: true,
        tau: 0.5,
        epsilon: 0.02,
        ..base.clone()
    })?);

    rows.push(run(RunConfig {
        strategy: StrategyKind::Reinforce,
        gating: GatingKind::Stochastic,
        m: 4,
        ..base.clone()
    })?);

    println!("{:<18} {:>14} {:>9}", "strategy", "final_mse", "time_s");
    for (name, mse, secs) in rows {
        println!("{name:<18} {mse:>14.3e} {secs:>9.2}");
    }
    Ok(())
}
