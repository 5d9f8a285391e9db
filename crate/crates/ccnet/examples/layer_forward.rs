//! A conditional forward pass with exact cost accounting, against the dense
//! baseline's budget.
//!
//! ```bash
//! cargo run --example layer_forward
//! ```

use ccnet::cond_layer::{dense_forward, Activation, ConditionalLayer, CreditStrategy};
use ccnet::cost::CostMeter;
use ccnet::gating::{GateConfig, SelectorStrategy};
use ccnet::harness::cost_report;
use ccnet::matrix::Matrix;
use ccnet::prefix_weights::PrefixTreeTable;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> ccnet::Result<()> {
    let (p, q, k, m) = (8, 4, 3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let layer = ConditionalLayer::new(
        GateConfig::deterministic(0.0, m),
        SelectorStrategy::first_k(k),
        PrefixTreeTable::init_all_uniform(p, q, k, &mut rng)?,
        vec![0.0; q],
        Activation::Tanh,
    )?;

    let x: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut meter = CostMeter::new();
    let (h, trace) = layer.forward(&x, &CreditStrategy::DetachedGates, &mut rng, &mut meter)?;
    println!("gates: {}", trace.gates);
    println!("output h = {h:?}");
    println!("conditional forward cost: {meter}");
    println!("  (p*q = {} multiply-adds, p*k*q = {} additions)", p * q, p * k * q);

    // Dense layer with the same contraction budget.
    let w = Matrix::random_uniform(p, q, 0.5, &mut rng);
    let mut dense_meter = CostMeter::new();
    dense_forward(&w, &vec![0.0; q], Activation::Tanh, &x, &mut dense_meter)?;
    println!("dense forward cost:       {dense_meter}");

    // Measured cost across depths: multiply-adds stay flat while the
    // parameter store grows geometrically.
    println!("\n{:>3} {:>12} {:>10} {:>9} {:>12}", "k", "params", "madds", "adds", "gain 2^k/k");
    for row in cost_report(p, q, &[0, 1, 2, 3, 4, 6, 8])? {
        println!(
            "{:>3} {:>12} {:>10} {:>9} {:>12.2}",
            row.k, row.params_exact, row.fwd_madds, row.fwd_adds, row.ratio_gain
        );
    }
    Ok(())
}
