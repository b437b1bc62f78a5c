//! Compares backpropagated gradients of every parameter of a small model
//! with central differences.
//!
//! ```text
//! cargo run --release --example gradient_check -- [seed]
//! ```

use mtsm::gradcheck::{run_preset, DEFAULT_TOLERANCE};
use mtsm::model::ModelConfig;

fn main() -> mtsm::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let config = ModelConfig { dropout_rate: 0.0, ..ModelConfig::tiny(12) };
    let report = run_preset(config, seed, 3, 4)?;
    for p in &report.params {
        println!("{:<24} {:>6} params  rel err {:.2e}", p.name, p.numel, p.relative_error);
    }
    println!("worst: {} at {:.2e}", report.worst, report.max_relative_error);
    println!("{}", if report.passed(DEFAULT_TOLERANCE) { "PASS" } else { "FAIL" });
    Ok(())
}
