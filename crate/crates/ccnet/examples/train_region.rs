//! Train a conditional layer on a realizable synthetic task and print the
//! per-epoch metrics CSV.
//!
//! ```bash
//! cargo run --release --example train_region
//! ```

use ccnet::cli::run_metrics_csv;
use ccnet::cond_layer::{Activation, ConditionalLayer, CreditStrategy};
use ccnet::gating::{GateConfig, SelectorStrategy};
use ccnet::harness::{gen_region_task, train, OptimizerConfig};
use ccnet::prefix_weights::PrefixTreeTable;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ccnet::Result<()> {
    let (p, q, k, m) = (4, 4, 2, 2);
    let task = gen_region_task(p, q, k, m, 2000, 0.0, 1234)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1235);
    let mut layer = ConditionalLayer::new(
        GateConfig::deterministic(0.0, m),
        SelectorStrategy::first_k(k),
        PrefixTreeTable::init_root_uniform(p, q, k, &mut rng)?,
        vec![0.0; q],
        Activation::Identity,
    )?;

    let metrics = train(
        &mut layer,
        &task,
        &CreditStrategy::DetachedGates,
        &OptimizerConfig::default(),
        30,
        1236,
    )?;
    print!("{}", run_metrics_csv(&metrics));
    eprintln!(
        "\nfinal mse {:e} in {:.2}s; {} parameters against a dense layer's {}",
        metrics.final_mse,
        metrics.wall_time_secs,
        metrics.params.total_table_entries,
        metrics.params.dense_equivalent_entries,
    );
    Ok(())
}
