//! Hypergradient estimators side by side on the 1-D problem at the inner
//! optimum, where the one-step estimators approximate the closed form.
//!
//! Run with `cargo run --example t1t2_baselines`.

use evograd::baselines::{oracle_hypergrad_1d, t1t2_hypergrad, unrolled_t1t2_hypergrad, T1T2Config};
use evograd::evograd::evograd_hypergrad;
use evograd::problems::one_d::{one_d_perturbation, OneDProblem};
use evograd::rng::{Purpose, SeedStreams};
use evograd::Result;

fn main() -> Result<()> {
    let cfg = T1T2Config { fd_delta: 1e-5, inner_lr: 0.1 };
    let pert = one_d_perturbation(1000, 0.5);
    let mut rng = SeedStreams::new(0).stream(Purpose::Population);
    println!("{:>6} {:>10} {:>10} {:>10} {:>10}", "lambda", "oracle", "t1t2-fd", "unrolled", "evograd");
    for lambda in [0.25, 0.5, 1.0, 1.5, 2.0] {
        let theta = OneDProblem::theta(1.0 / (1.0 + lambda));
        let hyper = OneDProblem::lambda(lambda);
        let fd = t1t2_hypergrad(&OneDProblem, &theta, &hyper, &(), &(), &cfg)?;
        let un = unrolled_t1t2_hypergrad(&OneDProblem, &theta, &hyper, &(), &(), &cfg)?;
        let evo = evograd_hypergrad(&OneDProblem, &theta, &hyper, &(), &(), &pert, &mut rng)?;
        println!(
            "{lambda:>6.2} {:>10.5} {:>10.5} {:>10.5} {:>10.5}",
            oracle_hypergrad_1d(lambda)?,
            fd.grad.item(),
            un.grad.item(),
            evo.grad.item()
        );
    }
    Ok(())
}
