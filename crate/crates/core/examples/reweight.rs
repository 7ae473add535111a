//! Meta-learn per-instance loss weights on a training set with 40% flipped
//! labels and compare with unweighted training.
//!
//! Run with `cargo run --release --example reweight [rho]`.

use evograd::evograd::{HypergradMethod, PerturbationConfig};
use evograd::problems::reweight::{run_reweight_experiment, ReweightConfig};
use evograd::Result;

fn main() -> Result<()> {
    let rho = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.4);
    let run = |method| {
        let mut cfg = ReweightConfig { method, ..Default::default() };
        cfg.data.rho = rho;
        run_reweight_experiment(&cfg)
    };
    let evo = run(HypergradMethod::EvoGrad(PerturbationConfig::default()))?;
    let base = run(HypergradMethod::Zero)?;
    println!("rho = {rho}");
    println!("test accuracy {:.2}% (unweighted: {:.2}%)", 100.0 * evo.test_accuracy, 100.0 * base.test_accuracy);
    println!("mean weight: clean {:.4}, corrupted {:.4}", evo.mean_weight_clean, evo.mean_weight_corrupted);
    Ok(())
}
