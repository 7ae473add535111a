//! Learning a rotation of the training inputs from a rotated validation set.
//!
//! Each instance is a glyph of [`GLYPH_POINTS`] ordered 2-D points, flattened
//! to `2 * GLYPH_POINTS` features. Class `c` is a prototype glyph turned by
//! `c * 45` degrees, so class identity depends on orientation. The training
//! set is canonical; validation and test sets are turned by the true angle.
//! The only hyperparameter is the angle applied to training inputs, kept in
//! radians internally and reported in degrees.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::mlp::{Mlp, RowScale};
use super::{epoch_batches, sample_indices, step_record, LabeledSet};
use crate::bilevel::Bilevel;
use crate::error::{Error, Result};
use crate::evograd::{meta_step, HypergradMethod, MetaConfig, MetaState, StepOrder};
use crate::metrics::MetricsRecord;
use crate::optim::Optimizer;
use crate::params::HyperParams;
use crate::rng::{Purpose, SeedStreams};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const GLYPH_POINTS: usize = 8;
pub const CLASSES: usize = 4;
const CLASS_STEP_DEG: f64 = 45.0;

/// An asymmetric open stroke; no rotation maps it onto itself.
const PROTOTYPE: [(f64, f64); GLYPH_POINTS] = [
    (-0.2, 1.0),
    (0.35, 0.95),
    (0.7, 0.6),
    (0.55, 0.1),
    (0.05, -0.2),
    (-0.35, -0.55),
    (-0.1, -0.95),
    (0.6, -0.9),
];

const SCALE_JITTER: f64 = 0.15;
const POINT_NOISE: f64 = 0.08;
const ANGLE_JITTER_DEG: f64 = 3.0;

#[derive(Clone, Debug)]
pub struct RotationTask {
    pub train: LabeledSet,
    pub val: LabeledSet,
    pub test: LabeledSet,
    pub true_angle_deg: f64,
}

fn rotate_point((x, y): (f64, f64), angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (c * x - s * y, s * x + c * y)
}

/// Rotates every point of row-major `[n, 2 * GLYPH_POINTS]` features.
pub fn rotate_features(x: &Tensor, angle_rad: f64) -> Tensor {
    let data = x
        .data()
        .chunks(2)
        .flat_map(|p| {
            let (a, b) = rotate_point((p[0], p[1]), angle_rad);
            [a, b]
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

fn sample_glyphs(n: usize, angle_deg: f64, rng: &mut impl Rng) -> LabeledSet {
    let noise = Normal::new(0.0, POINT_NOISE).expect("valid");
    let jitter = Normal::new(0.0, ANGLE_JITTER_DEG).expect("valid");
    let mut data = Vec::with_capacity(n * 2 * GLYPH_POINTS);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let class = rng.random_range(0..CLASSES);
        let scale = rng.random_range(1.0 - SCALE_JITTER..1.0 + SCALE_JITTER);
        let deg = class as f64 * CLASS_STEP_DEG + jitter.sample(rng);
        for &(px, py) in &PROTOTYPE {
            let p = (scale * px + noise.sample(rng), scale * py + noise.sample(rng));
            let (x, y) = rotate_point(rotate_point(p, deg.to_radians()), angle_deg.to_radians());
            data.push(x);
            data.push(y);
        }
        labels.push(class);
    }
    LabeledSet::new(Tensor::matrix(n, 2 * GLYPH_POINTS, data).expect("shape"), labels).expect("rows")
}

/// `n` canonical training glyphs, `n / 5` validation and `n` test glyphs
/// turned by `true_angle_deg`.
pub fn gen_rotated_digits(n: usize, true_angle_deg: f64, seed: u64) -> Result<RotationTask> {
    if n < 100 {
        return Err(Error::InvalidInput {
            op: "gen_rotated_digits",
            detail: format!("n must be >= 100, got {n}"),
        });
    }
    let mut rng = SeedStreams::new(seed).stream(Purpose::Data);
    Ok(RotationTask {
        train: sample_glyphs(n, 0.0, &mut rng),
        val: sample_glyphs(n / 5, true_angle_deg, &mut rng),
        test: sample_glyphs(n, true_angle_deg, &mut rng),
        true_angle_deg,
    })
}

/// Classifier on rotated training inputs; the hyperparameter is the angle.
#[derive(Clone, Debug)]
pub struct RotationProblem {
    pub classifier: Mlp,
}

impl RotationProblem {
    pub fn new(hidden: usize) -> Self {
        Self {
            classifier: Mlp::new(vec![2 * GLYPH_POINTS, hidden, CLASSES]),
        }
    }

    /// Records the rotated batch features.
    fn transformed(&self, tape: &mut Tape, angle: Var, batch: &LabeledSet) -> Result<Var> {
        let n = batch.len();
        let x = tape.constant(batch.x.clone());
        let points = tape.reshape(x, &[n * GLYPH_POINTS, 2])?;
        let turned = tape.rotate2d(points, angle)?;
        tape.reshape(turned, &[n, 2 * GLYPH_POINTS])
    }

    fn mean_ce(&self, tape: &mut Tape, theta: &[Var], x: Var, labels: &[usize]) -> Result<Var> {
        let logits = self.classifier.forward(tape, theta, x)?;
        let ce = tape.cross_entropy(logits, labels)?;
        tape.mean(ce)
    }
}

impl Bilevel for RotationProblem {
    type Batch = LabeledSet;

    fn train_loss(&self, tape: &mut Tape, theta: &[Var], hyper: &[Var], batch: &LabeledSet) -> Result<Var> {
        let x = self.transformed(tape, hyper[0], batch)?;
        self.mean_ce(tape, theta, x, &batch.labels)
    }

    fn val_loss(&self, tape: &mut Tape, theta: &[Var], _hyper: &[Var], batch: &LabeledSet) -> Result<Var> {
        let x = tape.constant(batch.x.clone());
        self.mean_ce(tape, theta, x, &batch.labels)
    }

    fn train_grad_graph(&self, tape: &mut Tape, theta: &[Var], hyper: &[Var], batch: &LabeledSet) -> Option<Result<Vec<Var>>> {
        let mut record = || {
            let x = self.transformed(tape, hyper[0], batch)?;
            let acts = self.classifier.forward_cached(tape, theta, x)?;
            let scale = RowScale::Uniform(1.0 / batch.len() as f64);
            self.classifier.record_ce_grad(tape, theta, &acts, &batch.labels, scale)
        };
        Some(record())
    }
}

#[derive(Clone, Debug)]
pub struct RotationConfig {
    pub n_train: usize,
    pub true_angle_deg: f64,
    pub hidden: usize,
    pub batch: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub meta_lr: f64,
    pub method: HypergradMethod,
    pub seed: u64,
    pub run_id: String,
    pub timing: bool,
}

impl Default for RotationConfig {
    fn default() -> Self {
        Self {
            n_train: 4000,
            true_angle_deg: 30.0,
            hidden: 64,
            batch: 128,
            epochs: 10,
            base_lr: 0.001,
            meta_lr: 0.01,
            method: HypergradMethod::EvoGrad(Default::default()),
            seed: 0,
            run_id: "rotation".into(),
            timing: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RotationOutcome {
    pub final_angle_deg: f64,
    pub test_accuracy: f64,
    pub records: Vec<MetricsRecord>,
}

impl RotationConfig {
    /// The task, the problem and the initial state (angle 0).
    pub fn setup(&self) -> Result<(RotationTask, RotationProblem, MetaState)> {
        let task = gen_rotated_digits(self.n_train, self.true_angle_deg, self.seed)?;
        let problem = RotationProblem::new(self.hidden);
        let state = MetaState {
            theta: problem.classifier.init(&mut SeedStreams::new(self.seed).stream(Purpose::Init)),
            hyper: HyperParams::scalar("angle", 0.0),
            theta_opt: Optimizer::adam(self.base_lr),
            hyper_opt: Optimizer::adam(self.meta_lr),
        };
        Ok((task, problem, state))
    }
}

pub fn run_rotation_experiment(cfg: &RotationConfig) -> Result<RotationOutcome> {
    let (task, problem, mut state) = cfg.setup()?;
    let streams = SeedStreams::new(cfg.seed);
    let meta = MetaConfig {
        method: cfg.method.clone(),
        order: StepOrder::ThetaFirst,
    };
    let learns_angle = !matches!(cfg.method, HypergradMethod::Zero);
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
            let angle = learns_angle.then(|| state.hyper.values.flatten()[0].to_degrees());
            records.push(step_record(&cfg.run_id, cfg.seed, step, &report, angle, cfg.timing));
        }
    }
    let test_accuracy = problem.classifier.accuracy(&state.theta, &task.test.x, &task.test.labels)?;
    if let Some(last) = records.last_mut() {
        last.accuracy = Some(test_accuracy);
    }
    Ok(RotationOutcome {
        final_angle_deg: state.hyper.values.flatten()[0].to_degrees(),
        test_accuracy,
        records,
    })
}
