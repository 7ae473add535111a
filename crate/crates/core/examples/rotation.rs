//! Learn the rotation that maps canonical training glyphs onto a rotated
//! test distribution, next to a classifier trained without it.
//!
//! Run with `cargo run --release --example rotation [seed]`.

use evograd::evograd::{HypergradMethod, PerturbationConfig};
use evograd::problems::rotation::{run_rotation_experiment, RotationConfig};
use evograd::Result;

fn main() -> Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let evo = run_rotation_experiment(&RotationConfig {
        method: HypergradMethod::EvoGrad(PerturbationConfig::default()),
        seed,
        ..Default::default()
    })?;
    let base = run_rotation_experiment(&RotationConfig { method: HypergradMethod::Zero, seed, ..Default::default() })?;
    for r in evo.records.iter().step_by(50) {
        println!("step {:>4}: angle {:>7.3} deg", r.step, r.lambda.unwrap_or(f64::NAN));
    }
    println!("learned angle {:.2} deg", evo.final_angle_deg);
    println!("test accuracy {:.2}% (no rotation learned: {:.2}%)", 100.0 * evo.test_accuracy, 100.0 * base.test_accuracy);
    Ok(())
}
