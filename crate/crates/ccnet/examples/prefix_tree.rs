//! The prefix-sum weight table: path sums, the enumeration oracle, and
//! parameter accounting.
//!
//! ```bash
//! cargo run --example prefix_tree
//! ```

use ccnet::cost::CostMeter;
use ccnet::prefix_weights::{count_parameters, naive_leaf_oracle, node_index, PrefixTreeTable};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> ccnet::Result<()> {
    let k = 3;

    // Implicit layout: node (level l, prefix value v) lives at 2^l - 1 + v.
    println!("flat indices by prefix (k = {k}):");
    for l in 0..=k {
        let row: Vec<String> = (0..(1usize << l))
            .map(|v| {
                let bits: Vec<bool> = (0..l).map(|i| (v >> (l - 1 - i)) & 1 == 1).collect();
                let tag: String = bits.iter().map(|&b| if b { '1' } else { '0' }).collect();
                format!("({}):{}", tag, node_index(k, &bits).unwrap())
            })
            .collect();
        println!("  level {l}: {}", row.join(" "));
    }

    // The effective weight for a bit sequence is the sum of the k+1 node
    // vectors along its root-to-leaf path; an explicit enumeration of all
    // 2^k leaf sums agrees.
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let table = PrefixTreeTable::init_all_uniform(2, 3, k, &mut rng)?;
    let bits = [true, false, true];
    let mut meter = CostMeter::new();
    let fast = table.effective_weight(0, &bits, &mut meter);
    let slow = naive_leaf_oracle(&table, 0, &bits)?;
    println!("\npath sum for b=101:   {fast:?}");
    println!("leaf enumeration:     {slow:?}");
    println!("cost of one unit:     {meter}");

    // Parameter accounting across depths.
    println!("\n{:>3} {:>14} {:>16} {:>14} {:>12}", "k", "entries_exact", "entries_nominal", "dense_entries", "gain 2^k/k");
    for k in [0, 1, 2, 3, 4, 8, 12] {
        let r = count_parameters(16, 16, k)?;
        println!(
            "{:>3} {:>14} {:>16} {:>14} {:>12.2}",
            k,
            r.total_table_entries,
            r.paper_nominal_entries,
            r.dense_equivalent_entries,
            r.capacity_ratio_gain
        );
    }
    Ok(())
}
