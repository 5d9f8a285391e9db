//! Hard gate bits and per-unit selectors.
//!
//! ```bash
//! cargo run --example gating_basics
//! ```

use ccnet::gating::{
    deterministic_gates, select_bits, stochastic_gates, stochastic_means, SelectorStrategy,
};
use ccnet::matrix::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ccnet::Result<()> {
    let x = [0.5, -0.2, 1.0, 0.1, -0.8, 0.3];

    // Deterministic gates: bit i is 1 iff x_i > tau (strict).
    let g = deterministic_gates(&x, 0.0, 6)?;
    println!("input x      = {x:?}");
    println!("gates (tau0) = {g}");

    // Each unit reads k bits of g. FirstK gives every unit the same bits;
    // SlidingWindow walks along g as the unit index grows.
    let first = SelectorStrategy::first_k(2);
    let window = SelectorStrategy::sliding_window(2);
    for j in 0..6 {
        let a: Vec<u8> = select_bits(&g, j, &first).iter().map(|&b| b.into()).collect();
        let b: Vec<u8> = select_bits(&g, j, &window).iter().map(|&b| b.into()).collect();
        println!("unit {j}: first_k -> {a:?}   sliding_window -> {b:?}");
    }

    // Stochastic gates: Bernoulli draws with mean sigmoid(U^T x).
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let projection = Matrix::random_uniform(6, 4, 1.0, &mut rng);
    let means = stochastic_means(&x, &projection)?;
    println!("\nstochastic gate means = {means:?}");
    let n = 20_000;
    let mut counts = vec![0u32; 4];
    for _ in 0..n {
        let (g, _) = stochastic_gates(&x, &projection, &mut rng)?;
        for (c, &bit) in counts.iter_mut().zip(&g.bits) {
            *c += u32::from(bit);
        }
    }
    for (i, c) in counts.iter().enumerate() {
        println!(
            "bit {i}: empirical mean {:.4} vs sigmoid mean {:.4}",
            f64::from(*c) / f64::from(n),
            means[i]
        );
    }
    Ok(())
}
