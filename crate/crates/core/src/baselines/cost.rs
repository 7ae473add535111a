use crate::bilevel::Bilevel;
use crate::error::Result;
use crate::evograd::{meta_step, HypergradMethod, MetaConfig, MetaState, StepOrder};
use crate::rng::{Purpose, SeedStreams};

/// Structural and timing cost of a hypergradient method on one problem.
#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub method: String,
    pub steps: usize,
    /// Median wall-clock of a whole meta-step, in milliseconds.
    pub median_step_ms: f64,
    /// Largest tape over all steps.
    pub peak_nodes: usize,
    pub peak_bytes: usize,
    pub forwards_per_step: usize,
    pub backwards_per_step: usize,
}

impl CostReport {
    /// `(metric, value)` pairs in a fixed order, for CSV output.
    pub fn metrics(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("median_step_ms", self.median_step_ms),
            ("peak_nodes", self.peak_nodes as f64),
            ("peak_bytes", self.peak_bytes as f64),
            ("forwards_per_step", self.forwards_per_step as f64),
            ("backwards_per_step", self.backwards_per_step as f64),
        ]
    }
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

/// Runs `steps` meta-steps of `method` from `initial`, drawing batches from
/// `batches(step)`, and reports the per-step cost.
pub fn cost_probe<P, F>(
    problem: &P,
    initial: &MetaState,
    mut batches: F,
    method: &HypergradMethod,
    steps: usize,
    seed: u64,
) -> Result<CostReport>
where
    P: Bilevel + Sync,
    P::Batch: Sync,
    F: FnMut(usize) -> (P::Batch, P::Batch),
{
    let mut state = initial.clone();
    let mut rng = SeedStreams::new(seed).stream(Purpose::Population);
    let cfg = MetaConfig {
        method: method.clone(),
        order: StepOrder::ThetaFirst,
    };
    let mut times = Vec::with_capacity(steps);
    let mut report = CostReport {
        method: method.name().to_string(),
        steps,
        median_step_ms: f64::NAN,
        peak_nodes: 0,
        peak_bytes: 0,
        forwards_per_step: 0,
        backwards_per_step: 0,
    };
    for step in 0..steps {
        let (train, val) = batches(step);
        let r = meta_step(problem, &mut state, &train, &val, &cfg, &mut rng)?;
        times.push(r.wall.as_secs_f64() * 1e3);
        report.peak_nodes = report.peak_nodes.max(r.cost.peak.node_count);
        report.peak_bytes = report.peak_bytes.max(r.cost.peak.stored_bytes);
        report.forwards_per_step = r.cost.forwards;
        report.backwards_per_step = r.cost.backwards;
    }
    report.median_step_ms = median(&mut times);
    Ok(report)
}
