//! Train the conditional layer and a compute-matched dense baseline on the
//! same task; both spend p*q multiply-adds per example while the conditional
//! layer stores 2^(k+1)-1 times the parameters.
//!
//! ```bash
//! cargo run --release --example dense_vs_conditional
//! ```

use ccnet::cli::comparison_csv;
use ccnet::cond_layer::{Activation, ConditionalLayer, CreditStrategy};
use ccnet::gating::{GateConfig, SelectorStrategy};
use ccnet::harness::{baseline_comparison, gen_region_task, OptimizerConfig};
use ccnet::prefix_weights::PrefixTreeTable;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ccnet::Result<()> {
    let (p, q, k, m) = (4, 4, 4, 4);
    let task = gen_region_task(p, q, k, m, 2000, 0.0, 77)?;
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let layer = ConditionalLayer::new(
        GateConfig::deterministic(0.0, m),
        SelectorStrategy::first_k(k),
        PrefixTreeTable::init_root_uniform(p, q, k, &mut rng)?,
        vec![0.0; q],
        Activation::Identity,
    )?;

    let paired = baseline_comparison(
        layer,
        &task,
        &CreditStrategy::DetachedGates,
        &OptimizerConfig::default(),
        25,
        79,
    )?;
    print!("{}", comparison_csv(&paired));
    eprintln!(
        "\nconditional: {} params, final mse {:e}",
        paired.conditional.params.total_table_entries, paired.conditional.final_mse
    );
    eprintln!(
        "dense:       {} params, final mse {:e}",
        paired.dense.params.total_table_entries, paired.dense.final_mse
    );
    eprintln!(
        "per-example contraction: {} vs {} multiply-adds",
        paired.conditional.per_example_forward.multiply_adds,
        paired.dense.per_example_forward.multiply_adds
    );
    Ok(())
}
