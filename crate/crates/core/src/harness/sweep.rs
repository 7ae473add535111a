//! Cost sweeps on the reweighting problem.

use std::fmt;
use std::str::FromStr;

use crate::baselines::{cost_probe, CostReport, T1T2Config};
use crate::error::{Error, Result};
use crate::evograd::{HypergradMethod, PerturbationConfig};
use crate::metrics::Row;
use crate::problems::reweight::{gen_noisy_classification_with, NoisyDataConfig, ReweightConfig};
use crate::problems::sample_indices;
use crate::rng::{Purpose, SeedStreams};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepDimension {
    /// Classifier hidden width as a multiple of the base width.
    ModelWidth,
    /// Number of weighting-network parameters (`3H + 1` for `H` hidden units).
    HyperparamCount,
    /// Population size.
    PopulationK,
}

impl SweepDimension {
    pub const ALL: [SweepDimension; 3] = [Self::ModelWidth, Self::HyperparamCount, Self::PopulationK];

    pub fn name(&self) -> &'static str {
        match self {
            Self::ModelWidth => "model_width",
            Self::HyperparamCount => "hyperparam_count",
            Self::PopulationK => "population_k",
        }
    }

    pub fn default_grid(&self) -> Vec<usize> {
        match self {
            Self::ModelWidth => vec![1, 2, 3, 4, 5],
            Self::HyperparamCount => vec![300, 3000, 30000],
            Self::PopulationK => vec![2, 4, 8],
        }
    }
}

impl fmt::Display for SweepDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepDimension {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| format!("unknown sweep dimension '{s}' (model_width, hyperparam_count, population_k)"))
    }
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub dimension: SweepDimension,
    pub grid: Vec<usize>,
    /// Meta-steps per grid point; the reported time is their median.
    pub steps: usize,
    pub seed: u64,
    pub perturbation: PerturbationConfig,
    pub data: NoisyDataConfig,
    /// Classifier hidden layers at width multiplier 1. The hyperparameter
    /// and population sweeps use a classifier large enough to dominate the
    /// weighting network, as in the full-scale setting.
    pub hidden: Vec<usize>,
    pub weight_hidden: usize,
    pub batch: usize,
}

impl SweepConfig {
    pub fn new(dimension: SweepDimension) -> Self {
        Self {
            dimension,
            grid: dimension.default_grid(),
            steps: 20,
            seed: 0,
            perturbation: PerturbationConfig::default(),
            data: NoisyDataConfig {
                n_train: 512,
                n_val: 128,
                n_test: 1,
                dim: 64,
                ..NoisyDataConfig::default()
            },
            hidden: match dimension {
                SweepDimension::ModelWidth => vec![128, 128],
                _ => vec![1024, 1024],
            },
            weight_hidden: 32,
            batch: 64,
        }
    }
}

/// One method at one grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub dimension: SweepDimension,
    pub value: usize,
    pub report: CostReport,
}

impl SweepPoint {
    pub fn rows(&self) -> Vec<Row> {
        let run_id = format!("{}-{}", self.dimension, self.report.method);
        self.report
            .metrics()
            .into_iter()
            .map(|(name, v)| Row::new(&run_id, 0, self.value as u64, name, v))
            .collect()
    }
}

/// The per-point reweighting setup and the methods compared at it.
fn point_setup(cfg: &SweepConfig, value: usize) -> (ReweightConfig, Vec<HypergradMethod>) {
    let mut run = ReweightConfig {
        data: cfg.data.clone(),
        hidden: cfg.hidden.clone(),
        weight_hidden: cfg.weight_hidden,
        batch: cfg.batch,
        seed: cfg.seed,
        ..ReweightConfig::default()
    };
    let mut pert = cfg.perturbation;
    let unrolled = HypergradMethod::T1T2Unrolled(T1T2Config::default());
    let methods = match cfg.dimension {
        SweepDimension::ModelWidth => {
            run.hidden = cfg.hidden.iter().map(|h| h * value).collect();
            vec![HypergradMethod::EvoGrad(pert), unrolled, HypergradMethod::T1T2(T1T2Config::default())]
        }
        SweepDimension::HyperparamCount => {
            run.weight_hidden = (value / 3).max(1);
            vec![HypergradMethod::EvoGrad(pert), unrolled]
        }
        SweepDimension::PopulationK => {
            pert.k = value;
            vec![HypergradMethod::EvoGrad(pert), HypergradMethod::EvoGradFactorized(pert)]
        }
    };
    (run, methods)
}

/// Runs [`cost_probe`] for every grid point and applicable method.
pub fn scaling_sweep(cfg: &SweepConfig) -> Result<Vec<SweepPoint>> {
    if cfg.grid.is_empty() {
        return Err(Error::Config(vec![format!("{} sweep needs a nonempty grid", cfg.dimension)]));
    }
    if let Some(bad) = cfg.grid.iter().find(|&&v| v == 0) {
        return Err(Error::Config(vec![format!("grid values must be positive, got {bad}")]));
    }
    let task = gen_noisy_classification_with(&cfg.data, cfg.seed)?;
    let mut out = Vec::new();
    for &value in &cfg.grid {
        let (run, methods) = point_setup(cfg, value);
        let problem = run.problem();
        let initial = run.initial_state(&problem)?;
        for method in methods {
            let mut rng = SeedStreams::new(cfg.seed).stream(Purpose::Batches);
            let batches = |_step: usize| {
                let train = task.train.subset(&sample_indices(task.train.len(), cfg.batch, &mut rng));
                let val = task.val.subset(&sample_indices(task.val.len(), cfg.batch, &mut rng));
                (train, val)
            };
            let report = cost_probe(&problem, &initial, batches, &method, cfg.steps, cfg.seed)?;
            out.push(SweepPoint {
                dimension: cfg.dimension,
                value,
                report,
            });
        }
    }
    Ok(out)
}
