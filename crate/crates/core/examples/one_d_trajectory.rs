//! Joint SGD on the parameter and the hyperparameter of the 1-D problem,
//! with EvoGrad and with the closed-form hypergradient.
//!
//! Run with `cargo run --example one_d_trajectory`.

use evograd::evograd::HypergradMethod;
use evograd::problems::one_d::{one_d_perturbation, trajectory, TRAJECTORY_STARTS};
use evograd::Result;

fn main() -> Result<()> {
    let methods = [
        HypergradMethod::EvoGrad(one_d_perturbation(2, 0.5)),
        HypergradMethod::EvoGrad(one_d_perturbation(100, 0.5)),
        HypergradMethod::Oracle,
    ];
    for (i, start) in TRAJECTORY_STARTS.into_iter().enumerate() {
        println!("start x={:.2} lambda={:.2}", start.0, start.1);
        for method in &methods {
            let path = trajectory(start, method, 5, 0.1, i as u64)?;
            let end = path.last().unwrap();
            let label = match method {
                HypergradMethod::EvoGrad(p) => format!("evograd k={}", p.k),
                other => other.name().to_string(),
            };
            println!("  {label:<14} -> x={:.4} lambda={:.4} f_V={:.5}", end.x, end.lambda, end.f_val);
        }
    }
    Ok(())
}
