//! Brute-force verification of closed-form marginals, exact scores,
//! reverse samplers and the likelihood bound on enumerable toys.
//!
//! Run with `cargo run --release --example oracle_check`.

use gsedd::oracle::run_suite;

fn main() -> gsedd::Result<()> {
    let checks = run_suite(0, false)?;
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} failed", checks.len());
    Ok(())
}
