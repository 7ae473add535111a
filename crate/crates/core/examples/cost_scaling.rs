//! Peak retained tape bytes and step time as the classifier widens, for
//! EvoGrad and both T1-T2 variants. Retained bytes stand in for accelerator
//! memory; they count tracked activations only.
//!
//! Run with `cargo run --release --example cost_scaling`.

use evograd::harness::sweep::{scaling_sweep, SweepConfig, SweepDimension};
use evograd::Result;

fn main() -> Result<()> {
    let cfg = SweepConfig { steps: 5, ..SweepConfig::new(SweepDimension::ModelWidth) };
    println!("{:>5} {:<14} {:>12} {:>8} {:>4} {:>4}", "width", "method", "peak bytes", "ms", "fwd", "bwd");
    for p in scaling_sweep(&cfg)? {
        let r = &p.report;
        println!(
            "{:>5} {:<14} {:>12} {:>8.3} {:>4} {:>4}",
            p.value, r.method, r.peak_bytes, r.median_step_ms, r.forwards_per_step, r.backwards_per_step
        );
    }
    Ok(())
}
