//! Model serialization: canonical JSON with exact float round-tripping.
//!
//! ```bash
//! cargo run --example save_load
//! ```

use ccnet::cli::{load_model, model_to_bytes, save_model};
use ccnet::cond_layer::{Activation, ConditionalLayer, CreditStrategy};
use ccnet::cost::CostMeter;
use ccnet::gating::{GateConfig, SelectorStrategy};
use ccnet::prefix_weights::PrefixTreeTable;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> ccnet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let layer = ConditionalLayer::new(
        GateConfig::deterministic(0.0, 2),
        SelectorStrategy::first_k(2),
        PrefixTreeTable::init_all_uniform(3, 2, 2, &mut rng)?,
        vec![0.05, -0.125],
        Activation::Tanh,
    )?;

    let path = std::env::temp_dir().join("ccnet-example-model.json");
    save_model(&layer, &path)?;
    let text = std::fs::read_to_string(&path)?;
    println!("model file ({} bytes):", text.len());
    println!("{}", &text[..text.len().min(400)]);
    if text.len() > 400 {
        println!("...");
    }

    let loaded = load_model(&path)?;
    assert_eq!(model_to_bytes(&layer)?, model_to_bytes(&loaded)?);
    println!("\nsave -> load -> save: byte-identical");

    let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut m1 = CostMeter::new();
    let mut m2 = CostMeter::new();
    let mut r1 = ChaCha8Rng::seed_from_u64(0);
    let mut r2 = ChaCha8Rng::seed_from_u64(0);
    let (h1, _) = layer.forward(&x, &CreditStrategy::DetachedGates, &mut r1, &mut m1)?;
    let (h2, _) = loaded.forward(&x, &CreditStrategy::DetachedGates, &mut r2, &mut m2)?;
    assert!(h1.iter().zip(&h2).all(|(a, b)| a.to_bits() == b.to_bits()));
    println!("loaded model reproduces forward outputs bit-for-bit: {h1:?}");

    std::fs::remove_file(&path).ok();
    Ok(())
}
