//! EvoGrad estimates of the 1-D hypergradient against the closed form,
//! for several population sizes.
//!
//! Run with `cargo run --release --example one_d_hypergradient`.

use evograd::problems::one_d::{hypergrad_grid, lambda_grid, one_d_perturbation};
use evograd::Result;

fn main() -> Result<()> {
    let lambdas = lambda_grid(10, 2.0);
    let points = hypergrad_grid(&lambdas, &[2, 10, 100], &one_d_perturbation(2, 0.5), 500, 0)?;
    println!("{:>3} {:>6} {:>10} {:>10} {:>10}", "k", "lambda", "oracle", "mean", "std");
    for p in points {
        println!("{:>3} {:>6.2} {:>10.4} {:>10.4} {:>10.4}", p.k, p.lambda, p.oracle, p.mean, p.std);
    }
    Ok(())
}
