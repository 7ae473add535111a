//! Turns a validated configuration into metric rows.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use super::config::{ExperimentConfig, ExperimentKind, MethodKind};
use super::sweep::{scaling_sweep, SweepConfig};
use crate::baselines::T1T2Config;
use crate::bilevel::Bilevel;
use crate::error::{Error, Result};
use crate::evograd::{evograd_hypergrad, HypergradMethod, MetaState, PerturbationConfig};
use crate::metrics::Row;
use crate::problems::one_d::{lambda_grid, method_grid, trajectory, OneDProblem, TRAJECTORY_STARTS};
use crate::problems::reweight::{gen_noisy_classification_with, run_reweight_experiment, ReweightConfig};
use crate::problems::rotation::{run_rotation_experiment, RotationConfig};
use crate::problems::{sample_indices, LabeledSet};
use crate::rng::{Purpose, SeedStreams};

const GRID_END: f64 = 2.0;
const ROTATION_HIDDEN: usize = 64;
const REWEIGHT_HIDDEN: usize = 64;

fn method_for(cfg: &ExperimentConfig, pert: PerturbationConfig, inner_lr: f64) -> HypergradMethod {
    match cfg.method {
        MethodKind::EvoGrad => HypergradMethod::EvoGrad(pert),
        MethodKind::T1T2 => HypergradMethod::T1T2(T1T2Config {
            inner_lr,
            ..T1T2Config::default()
        }),
        MethodKind::Oracle => HypergradMethod::Oracle,
        MethodKind::BaselineNoMeta => HypergradMethod::Zero,
    }
}

pub fn rotation_config(cfg: &ExperimentConfig, seed: u64) -> RotationConfig {
    let d = RotationConfig::default();
    let base_lr = cfg.lr.unwrap_or(d.base_lr);
    RotationConfig {
        n_train: cfg.n_train.unwrap_or(d.n_train),
        true_angle_deg: cfg.true_angle,
        hidden: ROTATION_HIDDEN * cfg.width,
        epochs: cfg.epochs.unwrap_or(d.epochs),
        base_lr,
        meta_lr: cfg.meta_lr.unwrap_or(d.meta_lr),
        method: method_for(cfg, cfg.perturbation(), base_lr),
        seed,
        run_id: cfg.run_id(),
        timing: cfg.timing,
        ..d
    }
}

pub fn reweight_config(cfg: &ExperimentConfig, seed: u64) -> ReweightConfig {
    let d = ReweightConfig::default();
    let base_lr = cfg.lr.unwrap_or(d.base_lr);
    let mut data = d.data.clone();
    data.rho = cfg.rho;
    data.n_train = cfg.n_train.unwrap_or(data.n_train);
    ReweightConfig {
        data,
        hidden: vec![REWEIGHT_HIDDEN * cfg.width],
        weight_hidden: cfg.weight_hidden.unwrap_or(d.weight_hidden),
        epochs: cfg.epochs.unwrap_or(d.epochs),
        base_lr,
        meta_lr: cfg.meta_lr.unwrap_or(d.meta_lr),
        method: method_for(cfg, cfg.perturbation(), base_lr),
        order: cfg.order.unwrap_or(d.order),
        seed,
        run_id: cfg.run_id(),
        timing: cfg.timing,
        ..d
    }
}

fn one_d_grid(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Row>> {
    let lambdas = lambda_grid(cfg.grid_points, GRID_END);
    let pert = cfg.perturbation();
    let methods: Vec<HypergradMethod> = match cfg.method {
        MethodKind::EvoGrad => cfg
            .population_sizes(&[2, 10, 100])
            .into_iter()
            .map(|k| HypergradMethod::EvoGrad(PerturbationConfig { k, ..pert }))
            .collect(),
        _ => vec![method_for(cfg, pert, cfg.lr.unwrap_or(0.1))],
    };
    let points = method_grid(&lambdas, &methods, cfg.reps, seed)?;
    let mut rows = Vec::with_capacity(points.len() * 5);
    let per_method = lambdas.len();
    for (i, p) in points.iter().enumerate() {
        let run_id = match p.k {
            0 => cfg.run_id(),
            k => format!("{}-k{k}", cfg.run_id()),
        };
        let step = (i % per_method) as u64 + 1;
        let mut push = |name: &str, v: f64| rows.push(Row::new(&run_id, seed, step, name, v));
        push("lambda", p.lambda);
        push("mean", p.mean);
        push("std", p.std);
        push("oracle", p.oracle);
    }
    Ok(rows)
}

fn one_d_traj(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Row>> {
    let lr = cfg.lr.unwrap_or(0.1);
    let steps = cfg.steps.unwrap_or(5);
    let pert = cfg.perturbation();
    let mut runs: Vec<(String, HypergradMethod)> = match cfg.method {
        MethodKind::EvoGrad => cfg
            .population_sizes(&[2, 10, 100])
            .into_iter()
            .map(|k| (format!("one_d_traj-evograd-k{k}"), HypergradMethod::EvoGrad(PerturbationConfig { k, ..pert })))
            .collect(),
        MethodKind::Oracle => Vec::new(),
        _ => vec![(cfg.run_id(), method_for(cfg, pert, lr))],
    };
    runs.push(("one_d_traj-oracle".into(), HypergradMethod::Oracle));
    let streams = SeedStreams::new(seed);
    let mut rows = Vec::new();
    for (run, method) in &runs {
        for (i, &start) in TRAJECTORY_STARTS.iter().enumerate() {
            let path = trajectory(start, method, steps, lr, streams.child(i as u64).seed())?;
            let run_id = format!("{run}-start{i}");
            for p in path {
                for (name, v) in [("x", p.x), ("lambda", p.lambda), ("f_val", p.f_val)] {
                    rows.push(Row::new(&run_id, seed, p.step as u64, name, v));
                }
            }
        }
    }
    Ok(rows)
}

fn rotation(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Row>> {
    let out = run_rotation_experiment(&rotation_config(cfg, seed))?;
    Ok(out.records.iter().flat_map(|r| r.rows()).collect())
}

fn reweight(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Row>> {
    let out = run_reweight_experiment(&reweight_config(cfg, seed))?;
    let mut rows: Vec<Row> = out.records.iter().flat_map(|r| r.rows()).collect();
    if cfg.method != MethodKind::BaselineNoMeta {
        let step = out.records.last().map_or(0, |r| r.step);
        let run_id = cfg.run_id();
        rows.push(Row::new(&run_id, seed, step, "weight_clean", out.mean_weight_clean));
        if out.mean_weight_corrupted.is_finite() {
            rows.push(Row::new(&run_id, seed, step, "weight_corrupted", out.mean_weight_corrupted));
        }
    }
    Ok(rows)
}

fn scaling(cfg: &ExperimentConfig) -> Result<Vec<Row>> {
    if !cfg.grid.is_empty() && cfg.dimension.len() > 1 {
        return Err(Error::Config(vec!["grid: set exactly one dimension when giving a grid".into()]));
    }
    let seed = cfg.seeds[0];
    let mut rows = Vec::new();
    for &dimension in &cfg.dimension {
        let mut sweep = SweepConfig::new(dimension);
        if !cfg.grid.is_empty() {
            sweep.grid = cfg.grid.clone();
        }
        sweep.steps = cfg.steps.unwrap_or(sweep.steps);
        sweep.seed = seed;
        sweep.perturbation = cfg.perturbation();
        for point in scaling_sweep(&sweep)? {
            rows.extend(point.rows().into_iter().map(|r| Row { seed, ..r }));
        }
    }
    Ok(rows)
}

/// Runs the configured experiment for every seed. Seeds run in parallel;
/// rows come back grouped by seed in the configured order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<Row>> {
    if cfg.experiment == ExperimentKind::Scaling {
        return scaling(cfg);
    }
    let per_seed: Vec<Vec<Row>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| match cfg.experiment {
            ExperimentKind::OneDGrid => one_d_grid(cfg, seed),
            ExperimentKind::OneDTraj => one_d_traj(cfg, seed),
            ExperimentKind::Rotation => rotation(cfg, seed),
            ExperimentKind::Reweight => reweight(cfg, seed),
            ExperimentKind::Scaling => unreachable!("handled above"),
        })
        .collect::<Result<_>>()?;
    Ok(per_seed.into_iter().flatten().collect())
}

pub(crate) fn with_path(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub(crate) fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| with_path(e, path))
}

fn dump_estimate<P: Bilevel>(problem: &P, state: &MetaState, train: &P::Batch, val: &P::Batch, pert: &PerturbationConfig, seed: u64, path: &Path) -> Result<()> {
    let mut rng = SeedStreams::new(seed).stream(Purpose::Population);
    let est = evograd_hypergrad(problem, &state.theta, &state.hyper, train, val, pert, &mut rng)?;
    let mut out = BufWriter::new(create(path)?);
    est.tape.expect("single-tape estimate keeps its tape").dump(&mut out)?;
    out.flush()?;
    Ok(())
}

fn first_batches(train: &LabeledSet, val: &LabeledSet, batch: usize, seed: u64) -> (LabeledSet, LabeledSet) {
    let mut rng = SeedStreams::new(seed).stream(Purpose::Batches);
    (
        train.subset(&sample_indices(train.len(), batch, &mut rng)),
        val.subset(&sample_indices(val.len(), batch, &mut rng)),
    )
}

/// Writes the graph of one EvoGrad estimate at the first seed's initial
/// state, one node per line.
pub fn dump_tape(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    let seed = cfg.seeds[0];
    let pert = cfg.perturbation();
    match cfg.experiment {
        ExperimentKind::OneDGrid | ExperimentKind::OneDTraj => {
            let (x, lambda) = TRAJECTORY_STARTS[0];
            let state = MetaState {
                theta: OneDProblem::theta(x),
                hyper: OneDProblem::lambda(lambda),
                theta_opt: crate::optim::Optimizer::sgd(0.1),
                hyper_opt: crate::optim::Optimizer::sgd(0.1),
            };
            dump_estimate(&OneDProblem, &state, &(), &(), &pert, seed, path)
        }
        ExperimentKind::Rotation => {
            let rc = rotation_config(cfg, seed);
            let (task, problem, state) = rc.setup()?;
            let (train, val) = first_batches(&task.train, &task.val, rc.batch, seed);
            dump_estimate(&problem, &state, &train, &val, &pert, seed, path)
        }
        ExperimentKind::Reweight | ExperimentKind::Scaling => {
            let rc = reweight_config(cfg, seed);
            let task = gen_noisy_classification_with(&rc.data, seed)?;
            let mut problem = rc.problem();
            problem.weighting = crate::problems::reweight::Weighting::Net;
            let state = rc.initial_state(&problem)?;
            let (train, val) = first_batches(&task.train, &task.val, rc.batch, seed);
            dump_estimate(&problem, &state, &train, &val, &pert, seed, path)
        }
    }
}

/// Writes the first seed's training set, one instance per row.
pub fn export_data(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    let seed = cfg.seeds[0];
    let (set, corrupted) = match cfg.experiment {
        ExperimentKind::Rotation => (rotation_config(cfg, seed).setup()?.0.train, None),
        ExperimentKind::Reweight => {
            let task = gen_noisy_classification_with(&reweight_config(cfg, seed).data, seed)?;
            (task.train, Some(task.corrupted))
        }
        other => {
            return Err(Error::Config(vec![format!(
                "export_data: experiment '{other}' has no dataset"
            )]))
        }
    };
    let mut out = BufWriter::new(create(path)?);
    set.write_csv(&mut out, corrupted.as_deref())?;
    out.flush()?;
    Ok(())
}
