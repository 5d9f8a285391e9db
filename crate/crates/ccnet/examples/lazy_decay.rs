//! Lazy weight decay with delta-t catch-up against the eager per-step
//! schedule.
//!
//! ```bash
//! cargo run --example lazy_decay
//! ```

use ccnet::optimizer::{
    eager_decay_oracle, lazy_l1_catchup, lazy_l2_catchup, sgd_apply_table_step, DecayStep,
    LazyRegState, RegKind,
};
use ccnet::prefix_weights::PrefixTreeTable;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> ccnet::Result<()> {
    let (eps, lam) = (0.1, 0.5);

    // A weight skipped for dt steps owes (1 - eps*lambda)^dt of L2 decay...
    let w = [1.0, -0.4];
    for dt in [0u64, 1, 3, 10] {
        println!("L2 catch-up dt={dt:>2}: {:?}", lazy_l2_catchup(&w, eps, lam, dt)?);
    }
    // ...or an eps*lambda*dt soft-threshold under L1, never crossing zero.
    for dt in [0u64, 5, 12, 30] {
        println!("L1 catch-up dt={dt:>2}: {:?}", lazy_l1_catchup(&w, eps, lam, dt));
    }

    // Full equivalence on a random 200-step schedule: lazily decaying only
    // the touched nodes, then settling everything with finalize, lands on the
    // same table as decaying every node at every step.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (p, q, k) = (3, 2, 2);
    let initial = PrefixTreeTable::init_all_uniform(p, q, k, &mut rng)?;
    let nodes = initial.nodes_per_unit();
    let schedule: Vec<DecayStep> = (0..200)
        .map(|_| {
            let count = rng.random_range(0..3usize);
            let touched = (0..count)
                .map(|_| {
                    let j = rng.random_range(0..p);
                    let node = rng.random_range(0..nodes);
                    let grad: Vec<f64> = (0..q).map(|_| rng.random_range(-1.0..1.0)).collect();
                    ((j, node), grad)
                })
                .collect();
            DecayStep { touched }
        })
        .collect();

    let mut lazy = initial.clone();
    let mut state = LazyRegState::new(&lazy, RegKind::L2, lam, eps)?;
    let mut touches = 0usize;
    for step in &schedule {
        touches += step.touched.len();
        sgd_apply_table_step(&mut lazy, &step.touched, &mut state)?;
    }
    state.finalize(&mut lazy)?;

    let eager = eager_decay_oracle(&initial, &schedule, RegKind::L2, lam, eps)?;
    let max_rel = lazy
        .entries()
        .iter()
        .zip(eager.entries())
        .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
        .fold(0.0f64, f64::max);
    let total_slots = 200 * p * nodes;
    println!(
        "\n200-step schedule: {touches} node touches (eager would decay {total_slots} slots)"
    );
    println!("lazy-with-finalize vs eager per-step: max rel err {max_rel:.3e}");
    Ok(())
}
