//! Instance reweighting under uniform label noise.
//!
//! A classifier trains on `sum_i v_i * CE_i`, where `v_i` is the output of a
//! small weighting network fed the (detached) loss of instance `i`. The
//! weighting network's parameters are the hyperparameters, tuned on a clean
//! validation set.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::mlp::{Mlp, RowScale};
use super::{epoch_batches, sample_indices, step_record, LabeledSet};
use crate::bilevel::Bilevel;
use crate::error::{Error, Result};
use crate::evograd::{meta_step, HypergradMethod, MetaConfig, MetaState, StepOrder};
use crate::metrics::MetricsRecord;
use crate::optim::Optimizer;
use crate::params::{HyperParams, HyperRole, ParamVector};
use crate::rng::{Purpose, SeedStreams};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Sizes and geometry of the synthetic Gaussian mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisyDataConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub classes: usize,
    pub dim: usize,
    /// Scale of the class means relative to the unit within-class noise.
    pub separation: f64,
    pub rho: f64,
}

impl Default for NoisyDataConfig {
    fn default() -> Self {
        Self {
            n_train: 600,
            n_val: 100,
            n_test: 2000,
            classes: 4,
            dim: 20,
            separation: 0.8,
            rho: 0.4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NoisyLabelTask {
    /// Training features with observed (possibly corrupted) labels.
    pub train: LabeledSet,
    pub clean_labels: Vec<usize>,
    /// `corrupted[i]` is true when `train.labels[i] != clean_labels[i]`.
    pub corrupted: Vec<bool>,
    pub val: LabeledSet,
    pub test: LabeledSet,
}

impl NoisyLabelTask {
    pub fn corrupted_count(&self) -> usize {
        self.corrupted.iter().filter(|&&c| c).count()
    }
}

/// Gaussian mixture with the default geometry, `n` training instances and
/// exactly `round(rho * n)` labels replaced by a uniformly drawn wrong class.
pub fn gen_noisy_classification(n: usize, classes: usize, rho: f64, seed: u64) -> Result<NoisyLabelTask> {
    gen_noisy_classification_with(
        &NoisyDataConfig {
            n_train: n,
            classes,
            rho,
            ..Default::default()
        },
        seed,
    )
}

pub fn gen_noisy_classification_with(cfg: &NoisyDataConfig, seed: u64) -> Result<NoisyLabelTask> {
    if !(0.0..=0.9).contains(&cfg.rho) {
        return Err(Error::InvalidInput {
            op: "gen_noisy_classification",
            detail: format!("rho must lie in [0, 0.9], got {}", cfg.rho),
        });
    }
    if cfg.classes < 2 || cfg.dim == 0 || cfg.n_train == 0 {
        return Err(Error::InvalidInput {
            op: "gen_noisy_classification",
            detail: format!("need >= 2 classes, dim > 0, n > 0; got {cfg:?}"),
        });
    }
    let mut rng = SeedStreams::new(seed).stream(Purpose::Data);
    let means: Vec<Vec<f64>> = (0..cfg.classes)
        .map(|_| (0..cfg.dim).map(|_| cfg.separation * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let draw = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        let mut data = Vec::with_capacity(n * cfg.dim);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let c = rng.random_range(0..cfg.classes);
            data.extend(means[c].iter().map(|m| { let z: f64 = StandardNormal.sample(rng); m + z }));
            labels.push(c);
        }
        LabeledSet::new(Tensor::matrix(n, cfg.dim, data).expect("shape"), labels).expect("rows")
    };
    let mut train = draw(cfg.n_train, &mut rng);
    let val = draw(cfg.n_val, &mut rng);
    let test = draw(cfg.n_test, &mut rng);

    let clean_labels = train.labels.clone();
    let n_bad = (cfg.rho * cfg.n_train as f64).round() as usize;
    let mut corrupted = vec![false; cfg.n_train];
    for i in rand::seq::index::sample(&mut rng, cfg.n_train, n_bad) {
        let shift = rng.random_range(1..cfg.classes);
        train.labels[i] = (clean_labels[i] + shift) % cfg.classes;
        corrupted[i] = true;
    }
    Ok(NoisyLabelTask {
        train,
        clean_labels,
        corrupted,
        val,
        test,
    })
}

/// How per-instance losses are weighted in the training loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Weighting {
    /// Weights from the weighting network.
    Net,
    /// Every instance weighted 1; the hyperparameters are unused.
    Unit,
}

/// Classifier parameters are `theta`; weighting-network parameters are the
/// hyperparameters.
#[derive(Clone, Debug)]
pub struct ReweightProblem {
    pub classifier: Mlp,
    /// Scalar loss in, `hidden` rectified units, one sigmoid output.
    pub weight_net: Mlp,
    pub weighting: Weighting,
}

impl ReweightProblem {
    pub fn new(dim: usize, hidden: &[usize], classes: usize, weight_hidden: usize, weighting: Weighting) -> Self {
        let mut sizes = vec![dim];
        sizes.extend_from_slice(hidden);
        sizes.push(classes);
        Self {
            classifier: Mlp::new(sizes),
            weight_net: Mlp::new(vec![1, weight_hidden, 1]),
            weighting,
        }
    }

    /// Per-instance weights in `(0, 1)` for a `[B]` vector of losses.
    pub fn record_weights(&self, tape: &mut Tape, omega: &[Var], losses: Var) -> Result<Var> {
        let n = tape.shape(losses)?.iter().product();
        let col = tape.reshape(losses, &[n, 1])?;
        let out = self.weight_net.forward(tape, omega, col)?;
        let w = tape.sigmoid(out)?;
        tape.reshape(w, &[n])
    }

    /// Weighting-network outputs for plain loss values.
    pub fn weights(&self, omega: &ParamVector, losses: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let om = omega.register(&mut tape, false);
        let l = tape.constant(Tensor::vector(losses.to_vec()));
        let w = self.record_weights(&mut tape, &om, l)?;
        Ok(tape.value(w)?.data().to_vec())
    }

    /// Per-instance cross-entropy of the classifier.
    pub fn instance_losses(&self, theta: &ParamVector, set: &LabeledSet) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let p = theta.register(&mut tape, false);
        let x = tape.constant(set.x.clone());
        let logits = self.classifier.forward(&mut tape, &p, x)?;
        let ce = tape.cross_entropy(logits, &set.labels)?;
        Ok(tape.value(ce)?.data().to_vec())
    }

    /// Per-instance losses and their weights (`None` for unit weighting).
    fn weighted_terms(&self, tape: &mut Tape, theta: &[Var], omega: &[Var], batch: &LabeledSet) -> Result<(super::mlp::Activations, Var, Option<Var>)> {
        let x = tape.constant(batch.x.clone());
        let acts = self.classifier.forward_cached(tape, theta, x)?;
        let ce = tape.cross_entropy(acts.logits, &batch.labels)?;
        let weights = match self.weighting {
            Weighting::Net => {
                let input = tape.detach(ce)?;
                Some(self.record_weights(tape, omega, input)?)
            }
            Weighting::Unit => None,
        };
        Ok((acts, ce, weights))
    }
}

impl Bilevel for ReweightProblem {
    type Batch = LabeledSet;

    fn train_loss(&self, tape: &mut Tape, theta: &[Var], hyper: &[Var], batch: &LabeledSet) -> Result<Var> {
        let (_, ce, weights) = self.weighted_terms(tape, theta, hyper, batch)?;
        let terms = match weights {
            Some(w) => tape.mul(ce, w)?,
            None => ce,
        };
        tape.sum(terms)
    }

    fn val_loss(&self, tape: &mut Tape, theta: &[Var], _hyper: &[Var], batch: &LabeledSet) -> Result<Var> {
        let x = tape.constant(batch.x.clone());
        let logits = self.classifier.forward(tape, theta, x)?;
        let ce = tape.cross_entropy(logits, &batch.labels)?;
        tape.mean(ce)
    }

    fn train_grad_graph(&self, tape: &mut Tape, theta: &[Var], hyper: &[Var], batch: &LabeledSet) -> Option<Result<Vec<Var>>> {
        let mut record = || {
            let (acts, _, weights) = self.weighted_terms(tape, theta, hyper, batch)?;
            let scale = weights.map_or(RowScale::Uniform(1.0), RowScale::PerRow);
            self.classifier.record_ce_grad(tape, theta, &acts, &batch.labels, scale)
        };
        Some(record())
    }
}

#[derive(Clone, Debug)]
pub struct ReweightConfig {
    pub data: NoisyDataConfig,
    pub hidden: Vec<usize>,
    pub weight_hidden: usize,
    pub batch: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub meta_lr: f64,
    /// `Zero` trains the classifier on the unweighted loss.
    pub method: HypergradMethod,
    pub order: StepOrder,
    pub seed: u64,
    pub run_id: String,
    pub timing: bool,
}

impl Default for ReweightConfig {
    fn default() -> Self {
        Self {
            data: NoisyDataConfig::default(),
            hidden: vec![64],
            weight_hidden: 32,
            batch: 64,
            epochs: 100,
            base_lr: 0.001,
            meta_lr: 0.001,
            method: HypergradMethod::EvoGrad(Default::default()),
            order: StepOrder::HyperFirst,
            seed: 0,
            run_id: "reweight".into(),
            timing: false,
        }
    }
}

impl ReweightConfig {
    pub fn problem(&self) -> ReweightProblem {
        let weighting = if matches!(self.method, HypergradMethod::Zero) {
            Weighting::Unit
        } else {
            Weighting::Net
        };
        ReweightProblem::new(self.data.dim, &self.hidden, self.data.classes, self.weight_hidden, weighting)
    }

    /// Initial classifier and weighting-network parameters.
    pub fn initial_state(&self, problem: &ReweightProblem) -> Result<MetaState> {
        let mut init = SeedStreams::new(self.seed).stream(Purpose::Init);
        let theta = problem.classifier.init(&mut init);
        let omega = problem.weight_net.init(&mut init);
        Ok(MetaState {
            theta,
            hyper: HyperParams::new(omega, HyperRole::NetworkMeta)?,
            theta_opt: Optimizer::adam(self.base_lr),
            hyper_opt: Optimizer::adam(self.meta_lr),
        })
    }
}

#[derive(Clone, Debug)]
pub struct ReweightOutcome {
    pub test_accuracy: f64,
    /// Mean weight on clean training instances at the end of training.
    pub mean_weight_clean: f64,
    /// Mean weight on corrupted training instances; `NaN` when there are none.
    pub mean_weight_corrupted: f64,
    pub records: Vec<MetricsRecord>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

pub fn run_reweight_experiment(cfg: &ReweightConfig) -> Result<ReweightOutcome> {
    let task = gen_noisy_classification_with(&cfg.data, cfg.seed)?;
    let problem = cfg.problem();
    let mut state = cfg.initial_state(&problem)?;
    let meta = MetaConfig {
        method: cfg.method.clone(),
        order: cfg.order,
    };
    let learns = problem.weighting == Weighting::Net;
    let streams = SeedStreams::new(cfg.seed);
    let mut batch_rng = streams.stream(Purpose::Batches);
    let mut pop_rng = streams.stream(Purpose::Population);
    let mut records = Vec::new();
    let mut step = 0u64;
    for _ in 0..cfg.epochs {
        for idx in epoch_batches(task.train.len(), cfg.batch, &mut batch_rng) {
            let train = task.train.subset(&idx);
            let val = task.val.subset(&sample_indices(task.val.len(), cfg.batch, &mut batch_rng));
            let report = meta_step(&problem, &mut state, &train, &val, &meta, &mut pop_rng)?;
            step += 1;
            let lambda = learns.then(|| state.hyper.values.norm());
            records.push(step_record(&cfg.run_id, cfg.seed, step, &report, lambda, cfg.timing));
        }
    }

    let test_accuracy = problem.classifier.accuracy(&state.theta, &task.test.x, &task.test.labels)?;
    let losses = problem.instance_losses(&state.theta, &task.train)?;
    let weights = match problem.weighting {
        Weighting::Net => problem.weights(&state.hyper.values, &losses)?,
        Weighting::Unit => vec![1.0; losses.len()],
    };
    let pick = |want: bool| mean(weights.iter().zip(&task.corrupted).filter(|(_, &c)| c == want).map(|(w, _)| *w));
    if let Some(last) = records.last_mut() {
        last.accuracy = Some(test_accuracy);
    }
    Ok(ReweightOutcome {
        test_accuracy,
        mean_weight_clean: pick(false),
        mean_weight_corrupted: pick(true),
        records,
    })
}
