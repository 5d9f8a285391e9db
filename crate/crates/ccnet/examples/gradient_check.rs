//! Finite-difference verification of every backward pass.
//!
//! ```bash
//! cargo run --example gradient_check
//! ```

use ccnet::cli::gradcheck_table;
use ccnet::harness::{gradcheck_suite, GradcheckConfig};

fn main() -> ccnet::Result<()> {
    let report = gradcheck_suite(&GradcheckConfig {
        configs: 25,
        seed: 7,
        ..GradcheckConfig::default()
    })?;
    print!("{}", gradcheck_table(&report));
    std::process::exit(if report.pass() { 0 } else { 1 });
}
