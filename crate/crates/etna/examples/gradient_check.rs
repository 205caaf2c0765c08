//! Verify every variant's hand-derived backward pass against central
//! finite differences on random toy instances.
//!
//!     cargo run --release -p etna --example gradient_check

use etna::model::{toy_grad_check, Variant};

fn main() -> etna::Result<()> {
    for variant in Variant::ALL {
        for seed in 0..5 {
            let report = toy_grad_check(variant, seed, false)?;
            println!(
                "{:<5} seed {seed}: max rel err {:.3e} over {} tensors ... {}",
                variant.name(),
                report.max_rel_err,
                report.per_param.len(),
                if report.passed() { "pass" } else { "FAIL" }
            );
        }
    }

    // Negative control: a corrupted gradient must be caught.
    let corrupted = toy_grad_check(Variant::Etna, 0, true)?;
    println!(
        "corrupted etna gradient detected: {} (max rel err {:.3e})",
        !corrupted.passed(),
        corrupted.max_rel_err
    );
    Ok(())
}
