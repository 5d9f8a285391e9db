//! The REINFORCE gate-gradient estimator on a two-gate smoke task: exact
//! enumeration of the expected gradient, unbiasedness of the sampled
//! estimate, and the variance saved by the running baseline.
//!
//! ```bash
//! cargo run --example reinforce_bandit
//! ```

use ccnet::gating::{stochastic_gates, stochastic_means, GateVector};
use ccnet::matrix::Matrix;
use ccnet::optimizer::{reinforce_gate_grad, ReinforceState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn loss_of(g: &GateVector) -> f64 {
    2.0 + 3.0 * f64::from(u8::from(g.bit(0)))
        + f64::from(u8::from(g.bit(1)))
        + 1.5 * f64::from(u8::from(g.bit(0) && g.bit(1)))
}

fn main() -> ccnet::Result<()> {
    let u = Matrix::from_flat(2, 2, vec![0.6, -0.4, 0.2, 0.9])?;
    let x = [0.8, -0.6];
    let mu = stochastic_means(&x, &u)?;
    println!("gate means: {mu:?}");

    // Exact gradient of E[loss] by enumerating the four gate patterns.
    let mut exact = Matrix::zeros(2, 2);
    for pattern in 0..4usize {
        let g = GateVector {
            bits: vec![pattern & 2 != 0, pattern & 1 != 0],
        };
        let prob: f64 = (0..2)
            .map(|i| if g.bit(i) { mu[i] } else { 1.0 - mu[i] })
            .product();
        for t in 0..2 {
            for i in 0..2 {
                let score = f64::from(u8::from(g.bit(i))) - mu[i];
                *exact.at_mut(t, i) += prob * loss_of(&g) * score * x[t];
            }
        }
    }

    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut with_baseline = ReinforceState::new(0.9)?;
    let mut without_baseline = ReinforceState::without_baseline();
    let mut mean_b = Matrix::zeros(2, 2);
    let mut sq_b = Matrix::zeros(2, 2);
    let mut sq_nb = Matrix::zeros(2, 2);
    for _ in 0..n {
        let (g, probs) = stochastic_gates(&x, &u, &mut rng)?;
        let loss = loss_of(&g);
        let db = reinforce_gate_grad(loss, &mut with_baseline, &g, &probs, &x)?;
        let dn = reinforce_gate_grad(loss, &mut without_baseline, &g, &probs, &x)?;
        for t in 0..2 {
            for i in 0..2 {
                *mean_b.at_mut(t, i) += db.at(t, i) / n as f64;
                *sq_b.at_mut(t, i) += db.at(t, i).powi(2) / n as f64;
                *sq_nb.at_mut(t, i) += dn.at(t, i).powi(2) / n as f64;
            }
        }
    }

    println!("\n{:<10} {:>12} {:>12}", "entry", "exact", "empirical");
    for t in 0..2 {
        for i in 0..2 {
            println!(
                "U[{t}][{i}]    {:>12.6} {:>12.6}",
                exact.at(t, i),
                mean_b.at(t, i)
            );
        }
    }

    let var = |sq: &Matrix, mean: Option<&Matrix>| -> f64 {
        let mut v = 0.0;
        for t in 0..2 {
            for i in 0..2 {
                let m = mean.map(|m| m.at(t, i)).unwrap_or(exact.at(t, i));
                v += sq.at(t, i) - m * m;
            }
        }
        v
    };
    let v_b = var(&sq_b, Some(&mean_b));
    let v_nb = var(&sq_nb, None);
    println!("\ntotal estimator variance with baseline:    {v_b:.4}");
    println!("total estimator variance without baseline:  {v_nb:.4}");
    println!("variance ratio: {:.3}", v_b / v_nb);
    Ok(())
}
