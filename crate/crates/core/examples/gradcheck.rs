//! Finite-difference check of every parameter of a d=16, two-block model in f64.
//!
//! ```text
//! cargo run --release --example gradcheck
//! ```

use std::time::Instant;

use sequnlearn::model::{check_model_gradients, ModelConfig};

fn main() -> sequnlearn::Result<()> {
    let config = ModelConfig::gradcheck();
    let start = Instant::now();
    let report = check_model_gradients(&config, 1e-5, 1e-5)?;
    for p in &report.params {
        println!("{:<28} max rel err {:.2e}", p.name, p.max_rel_error);
    }
    let worst = report.worst().expect("at least one parameter");
    println!(
        "worst: {} [{}] analytic {:.6e} numeric {:.6e}",
        worst.name, worst.worst_index, worst.analytic, worst.numeric
    );
    println!(
        "max relative error {:.3e} (tol {:.0e}): {} in {:.1?}",
        report.max_rel_error(),
        report.tol,
        if report.passed() { "PASS" } else { "FAIL" },
        start.elapsed()
    );
    Ok(())
}
