//! The single-tape estimate and the factorized estimate, which never holds
//! the whole population graph, agree up to rounding on the same population.
//!
//! Run with `cargo run --example factorized_identity`.

use evograd::evograd::{evograd_hypergrad, factorized_hypergrad, PerturbationConfig};
use evograd::problems::reweight::{gen_noisy_classification, ReweightConfig};
use evograd::rng::{Purpose, SeedStreams};
use evograd::Result;

fn main() -> Result<()> {
    let mut cfg = ReweightConfig { hidden: vec![32], weight_hidden: 16, ..Default::default() };
    cfg.data.n_train = 128;
    let task = gen_noisy_classification(128, cfg.data.classes, 0.4, 0)?;
    let problem = cfg.problem();
    let state = cfg.initial_state(&problem)?;
    let pert = PerturbationConfig { k: 8, ..Default::default() };

    let rng = || SeedStreams::new(5).stream(Purpose::Population);
    let single = evograd_hypergrad(&problem, &state.theta, &state.hyper, &task.train, &task.val, &pert, &mut rng())?;
    let split = factorized_hypergrad(&problem, &state.theta, &state.hyper, &task.train, &task.val, &pert, &mut rng())?;

    let gap: f64 = single.grad.data().iter().zip(split.grad.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    println!("hypergradient norm {:.6e}, relative gap {:.3e}", single.grad.norm(), gap / single.grad.norm());
    println!(
        "single tape: {} bytes over {} backward pass(es); factorized: {} bytes over {}",
        single.cost.peak.stored_bytes, single.cost.backwards, split.cost.peak.stored_bytes, split.cost.backwards
    );
    Ok(())
}
