//! End-to-end acceptance checks. Prints one PASS or FAIL line per criterion
//! and exits nonzero when any criterion fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{gradcheck, identity_gap, op_cases, split_inputs, total_len, Poly};
use evograd::baselines::{oracle_hypergrad_1d, t1t2_hypergrad, T1T2Config};
use evograd::evograd::{combine, evograd_hypergrad, fitness_weights, sample_population, HypergradMethod, NoiseKind, PerturbationConfig};
use evograd::harness::config::{ExperimentConfig, RawConfig};
use evograd::harness::run::run_experiment;
use evograd::harness::sweep::{scaling_sweep, SweepConfig, SweepDimension};
use evograd::metrics::CsvWriter;
use evograd::problems::one_d::{hypergrad_grid, lambda_grid, mean_std, one_d_perturbation, trajectory, OneDProblem, TRAJECTORY_STARTS};
use evograd::problems::reweight::{run_reweight_experiment, ReweightConfig};
use evograd::problems::rotation::{run_rotation_experiment, RotationConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Outcomes of the individual conditions that make up one criterion.
#[derive(Default)]
struct Checks(Vec<(String, bool)>);

impl Checks {
    fn check(&mut self, ok: bool, what: String) {
        self.0.push((what, ok));
    }

    fn passed(&self) -> bool {
        self.0.iter().all(|(_, ok)| *ok)
    }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, _) = mean_std(a);
    let (mb, _) = mean_std(b);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn one_d_fidelity(c: &mut Checks) {
    let lambdas = lambda_grid(20, 2.0);
    let reps = 1000;
    let grid = hypergrad_grid(&lambdas, &[100], &one_d_perturbation(100, 0.5), reps, 0).unwrap();
    let mut wrong = Vec::new();
    for p in &grid {
        let g = oracle_hypergrad_1d(p.lambda).unwrap();
        if g.abs() > 0.02 && p.mean.signum() != g.signum() {
            wrong.push(p.lambda);
        }
    }
    c.check(wrong.is_empty(), format!("sign agrees where |g| > 0.02 (disagreeing at {wrong:?})"));
    let means: Vec<f64> = grid.iter().map(|p| p.mean).collect();
    let oracle: Vec<f64> = grid.iter().map(|p| p.oracle).collect();
    let r = pearson(&means, &oracle);
    c.check(r >= 0.95, format!("pearson {r:.4} >= 0.95"));
    let at_one = grid.iter().find(|p| (p.lambda - 1.0).abs() < 1e-12).unwrap();
    let se = at_one.std / (reps as f64).sqrt();
    c.check(
        at_one.mean.abs() <= 2.0 * se,
        format!("mean at lambda=1 {:.5} within 2 SE ({:.5}) of 0", at_one.mean, 2.0 * se),
    );
}

fn variance_shrinks(c: &mut Checks) {
    let lambdas = [0.5, 1.0, 1.5];
    let grid = hypergrad_grid(&lambdas, &[2, 10, 100], &one_d_perturbation(2, 0.5), 1000, 1).unwrap();
    for &lambda in &lambdas {
        let std = |k: usize| grid.iter().find(|p| p.k == k && p.lambda == lambda).unwrap().std;
        let (s2, s10, s100) = (std(2), std(10), std(100));
        c.check(
            s100 <= 0.95 * s10 && s10 <= 0.95 * s2,
            format!("lambda {lambda}: std K=100 {s100:.4} < K=10 {s10:.4} < K=2 {s2:.4} with 5% margins"),
        );
    }
}

fn trajectory_agreement(c: &mut Checks) {
    let evo = HypergradMethod::EvoGrad(one_d_perturbation(100, 0.5));
    let (mut dx, mut dl) = (0.0, 0.0);
    let mut worse = Vec::new();
    for (i, &start) in TRAJECTORY_STARTS.iter().enumerate() {
        let a = trajectory(start, &evo, 5, 0.1, i as u64).unwrap();
        let b = trajectory(start, &HypergradMethod::Oracle, 5, 0.1, i as u64).unwrap();
        let (ea, eb) = (a.last().unwrap(), b.last().unwrap());
        dx += (ea.x - eb.x).abs() / 5.0;
        dl += (ea.lambda - eb.lambda).abs() / 5.0;
        for t in [&a, &b] {
            if t.last().unwrap().f_val > t[0].f_val {
                worse.push(start);
            }
        }
    }
    c.check(dx <= 0.15, format!("mean endpoint |dx| {dx:.4} <= 0.15"));
    c.check(dl <= 0.15, format!("mean endpoint |dlambda| {dl:.4} <= 0.15"));
    c.check(worse.is_empty(), format!("every trajectory ends with f_V <= start (violations {worse:?})"));
}

fn factorized_identity(c: &mut Checks) {
    let pert = PerturbationConfig::default();
    let worst = (0..100).map(|s| identity_gap(s, &pert).0).fold(0.0, f64::max);
    c.check(worst <= 1e-9, format!("largest relative gap over 100 seeds {worst:.2e} <= 1e-9"));
}

fn rotation(c: &mut Checks) {
    let run = |method: HypergradMethod, seed: u64| {
        run_rotation_experiment(&RotationConfig { method, seed, ..Default::default() }).unwrap()
    };
    let evo: Vec<_> = SEEDS.iter().map(|&s| run(HypergradMethod::EvoGrad(PerturbationConfig::default()), s)).collect();
    let base: Vec<_> = SEEDS.iter().map(|&s| run(HypergradMethod::Zero, s)).collect();
    let (angle, _) = mean_std(&evo.iter().map(|o| o.final_angle_deg).collect::<Vec<_>>());
    let (acc, _) = mean_std(&evo.iter().map(|o| o.test_accuracy).collect::<Vec<_>>());
    let (acc0, _) = mean_std(&base.iter().map(|o| o.test_accuracy).collect::<Vec<_>>());
    c.check((angle - 30.0).abs() <= 10.0, format!("mean learned angle {angle:.2} within 10 of 30"));
    c.check(
        100.0 * (acc - acc0) >= 5.0,
        format!("accuracy {:.2}% vs baseline {:.2}% (>= 5 points)", 100.0 * acc, 100.0 * acc0),
    );
}

fn reweight(c: &mut Checks) {
    let run = |method: HypergradMethod, rho: f64, seed: u64| {
        let mut cfg = ReweightConfig { method, seed, ..Default::default() };
        cfg.data.rho = rho;
        run_reweight_experiment(&cfg).unwrap()
    };
    let evo_m = || HypergradMethod::EvoGrad(PerturbationConfig::default());
    for rho in [0.4, 0.0] {
        let evo: Vec<_> = SEEDS.iter().map(|&s| run(evo_m(), rho, s)).collect();
        let base: Vec<_> = SEEDS.iter().map(|&s| run(HypergradMethod::Zero, rho, s)).collect();
        let (acc, _) = mean_std(&evo.iter().map(|o| o.test_accuracy).collect::<Vec<_>>());
        let (acc0, _) = mean_std(&base.iter().map(|o| o.test_accuracy).collect::<Vec<_>>());
        let gain = 100.0 * (acc - acc0);
        if rho > 0.0 {
            c.check(gain >= 5.0, format!("rho {rho}: accuracy {:.2}% vs baseline {:.2}% (>= 5 points)", 100.0 * acc, 100.0 * acc0));
            let (clean, _) = mean_std(&evo.iter().map(|o| o.mean_weight_clean).collect::<Vec<_>>());
            let (bad, _) = mean_std(&evo.iter().map(|o| o.mean_weight_corrupted).collect::<Vec<_>>());
            c.check(bad < clean, format!("mean weight corrupted {bad:.4} < clean {clean:.4}"));
        } else {
            c.check(gain.abs() <= 2.0, format!("rho 0: accuracy {:.2}% vs baseline {:.2}% (within 2 points)", 100.0 * acc, 100.0 * acc0));
        }
    }
}

fn cost_structure(c: &mut Checks) {
    let cfg = SweepConfig { steps: 3, ..SweepConfig::new(SweepDimension::ModelWidth) };
    let points = scaling_sweep(&cfg).unwrap();
    let of = |m: &str| points.iter().filter(|p| p.report.method == m).collect::<Vec<_>>();
    let (evo, t1t2) = (of("evograd"), of("t1t2-unrolled"));
    let mut gaps = Vec::new();
    for (e, t) in evo.iter().zip(&t1t2) {
        c.check(
            e.report.peak_bytes < t.report.peak_bytes,
            format!("width x{}: evograd {} < t1t2 {} bytes", e.value, e.report.peak_bytes, t.report.peak_bytes),
        );
        gaps.push(t.report.peak_bytes as i64 - e.report.peak_bytes as i64);
    }
    c.check(evo.len() == 5 && t1t2.len() == 5, "widths x1..x5 measured".into());
    c.check(gaps.windows(2).all(|w| w[0] <= w[1]), format!("gap non-decreasing {gaps:?}"));
    let counts: Vec<_> = evo.iter().map(|e| (e.report.forwards_per_step, e.report.backwards_per_step)).collect();
    c.check(counts.iter().all(|&n| n == (4, 2)), format!("K=2 forwards/backwards per step {counts:?} == (4, 2)"));
}

fn csv_bytes(pairs: &[(&str, &str)]) -> Vec<u8> {
    let mut raw = RawConfig::default();
    for (k, v) in pairs {
        raw.set(k, vec![v.to_string()]);
    }
    let rows = run_experiment(&ExperimentConfig::from_raw(&raw).unwrap()).unwrap();
    let mut w = CsvWriter::new(Vec::new());
    w.write_all(&rows).unwrap();
    w.into_inner().unwrap()
}

fn property_suites(c: &mut Checks) {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for case in op_cases() {
        for _ in 0..5 {
            let flat: Vec<f64> = (0..total_len(&case.shapes)).map(|_| rng.random_range(-1.5..1.5)).collect();
            worst = worst.max(gradcheck(&case, &split_inputs(&case, &flat), 1e-6));
        }
    }
    c.check(worst <= 1e-5, format!("gradcheck over every operator: worst relative error {worst:.2e} <= 1e-5"));

    let (mut simplex, mut shift) = (0.0f64, 0.0f64);
    for _ in 0..500 {
        let k = rng.random_range(2..12);
        let tau = 10f64.powf(rng.random_range(-3.0..3.0));
        let l: Vec<f64> = (0..k).map(|_| rng.random_range(-50.0..50.0)).collect();
        let w = fitness_weights(&l, tau).unwrap().weights;
        simplex = simplex.max((w.iter().sum::<f64>() - 1.0).abs());
        if w.iter().any(|&x| x < 0.0) {
            simplex = f64::INFINITY;
        }
        let off = rng.random_range(-1e3..1e3);
        let moved = fitness_weights(&l.iter().map(|x| x + off).collect::<Vec<_>>(), tau).unwrap().weights;
        shift = w.iter().zip(&moved).map(|(a, b)| (a - b).abs()).fold(shift, f64::max);
    }
    c.check(simplex <= 1e-12, format!("weights on the simplex (worst |sum - 1| {simplex:.1e})"));
    c.check(shift <= 1e-9, format!("weights invariant to loss shifts (worst {shift:.1e})"));

    let zero = PerturbationConfig { sigma: 0.0, tau: 0.05, k: 4, noise: NoiseKind::Gaussian };
    let est = evograd_hypergrad(&Poly { c: [0.1, 0.2, 0.3] }, &Poly::theta([0.5, -0.4, 0.8]), &Poly::lambda([0.7, 1.1]), &(), &(), &zero, &mut rng).unwrap();
    let g = est.grad.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    c.check(g < 1e-12, format!("sigma = 0 gives a zero hypergradient ({g:.1e})"));

    let onehot = PerturbationConfig { sigma: 0.5, tau: 1e-4, k: 5, noise: NoiseKind::Gaussian };
    let theta = OneDProblem::theta(0.2);
    let pop = sample_population(&theta, &onehot, &mut rng.clone()).unwrap();
    let l: Vec<f64> = pop.candidates.iter().map(|c| OneDProblem::train_value(c.flatten()[0], 0.8)).collect();
    let best = (0..l.len()).min_by(|&a, &b| l[a].total_cmp(&l[b])).unwrap();
    let picked = combine(&pop, &fitness_weights(&l, onehot.tau).unwrap()).unwrap();
    c.check(picked == pop.candidates[best], "one-hot weights select the best candidate".into());

    let runs: [&[(&str, &str)]; 2] = [
        &[("experiment", "reweight"), ("seeds", "0,1"), ("epochs", "2"), ("n_train", "200")],
        &[("experiment", "one_d_grid"), ("seeds", "0"), ("k", "2,10"), ("reps", "50"), ("grid_points", "5")],
    ];
    for pairs in runs {
        let same = csv_bytes(pairs) == csv_bytes(pairs);
        c.check(same, format!("{} CSVs byte-identical across runs", pairs[0].1));
    }
}

fn t1t2_fidelity(c: &mut Checks) {
    let problem = Poly { c: [0.3, -0.4, 0.2] };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let t = [0, 1, 2].map(|_| rng.random_range(-1.5..1.5));
        let l = [0, 1].map(|_| rng.random_range(0.1..2.0));
        let eta = rng.random_range(0.01..1.0);
        let m = problem.mixed_vjp(t, l, problem.val_grad(t));
        let want = [-eta * m[0], -eta * m[1]];
        let scale = want.iter().map(|x| x * x).sum::<f64>().sqrt();
        if scale < 1e-2 {
            continue;
        }
        for delta in [1e-6, 3e-6, 1e-5, 3e-5, 1e-4] {
            let cfg = T1T2Config { fd_delta: delta, inner_lr: eta };
            let got = t1t2_hypergrad(&problem, &Poly::theta(t), &Poly::lambda(l), &(), &(), &cfg).unwrap().grad;
            let diff = got.data().iter().zip(&want).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(diff / scale);
        }
    }
    c.check(worst <= 1e-6, format!("worst relative error for delta in [1e-6, 1e-4]: {worst:.2e} <= 1e-6"));
}

fn main() -> ExitCode {
    let criteria: [(&str, fn(&mut Checks), Duration); 9] = [
        ("1-D hypergradient fidelity", one_d_fidelity, Duration::from_secs(30)),
        ("variance shrinks with K", variance_shrinks, Duration::from_secs(60)),
        ("trajectory agreement", trajectory_agreement, Duration::from_secs(10)),
        ("factorized identity", factorized_identity, Duration::from_secs(10)),
        ("rotation", rotation, Duration::from_secs(300)),
        ("reweighting under label noise", reweight, Duration::from_secs(300)),
        ("cost structure", cost_structure, Duration::from_secs(120)),
        ("property suites", property_suites, Duration::from_secs(60)),
        ("T1-T2 finite differences", t1t2_fidelity, Duration::from_secs(5)),
    ];
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.into_iter().enumerate() {
        let mut checks = Checks::default();
        let start = Instant::now();
        run(&mut checks);
        let took = start.elapsed();
        checks.check(took < budget, format!("runtime {:.2}s < {}s", took.as_secs_f64(), budget.as_secs()));
        let verdict = if checks.passed() { "PASS" } else { "FAIL" };
        println!("{verdict} {} {name} ({:.2}s)", i + 1, took.as_secs_f64());
        for (what, ok) in &checks.0 {
            println!("    [{}] {what}", if *ok { "ok" } else { "x" });
        }
        if !checks.passed() {
            failed += 1;
        }
    }
    println!("{} of 9 criteria passed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
