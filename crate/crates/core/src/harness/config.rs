//! Experiment configuration: a `key = value` file merged with command-line
//! overrides, validated as a whole.
//!
//! File format: one `key = value` per line, `#` starts a comment, keys may use
//! `-` or `_`. List keys (`seeds`, `k`, `grid`) take comma-separated values
//! and may be repeated.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::sweep::SweepDimension;
use crate::error::{Error, Result};
use crate::evograd::{NoiseKind, PerturbationConfig, StepOrder};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    OneDGrid,
    OneDTraj,
    Rotation,
    Reweight,
    Scaling,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        Self::OneDGrid,
        Self::OneDTraj,
        Self::Rotation,
        Self::Reweight,
        Self::Scaling,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::OneDGrid => "one_d_grid",
            Self::OneDTraj => "one_d_traj",
            Self::Rotation => "rotation",
            Self::Reweight => "reweight",
            Self::Scaling => "scaling",
        }
    }

    pub fn is_one_d(&self) -> bool {
        matches!(self, Self::OneDGrid | Self::OneDTraj)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodKind {
    EvoGrad,
    T1T2,
    Oracle,
    /// Train the model alone; hyperparameters stay at their initial values.
    BaselineNoMeta,
}

impl MethodKind {
    pub const ALL: [MethodKind; 4] = [Self::EvoGrad, Self::T1T2, Self::Oracle, Self::BaselineNoMeta];

    pub fn name(&self) -> &'static str {
        match self {
            Self::EvoGrad => "evograd",
            Self::T1T2 => "t1t2",
            Self::Oracle => "oracle",
            Self::BaselineNoMeta => "baseline-no-meta",
        }
    }
}

macro_rules! named_enum {
    ($ty:ty, $what:literal) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> std::result::Result<Self, String> {
                Self::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
                    let names: Vec<_> = Self::ALL.iter().map(|v| v.name()).collect();
                    format!("unknown {} '{s}' (expected one of {})", $what, names.join(", "))
                })
            }
        }
    };
}

named_enum!(ExperimentKind, "experiment");
named_enum!(MethodKind, "method");

fn parse_noise(s: &str) -> std::result::Result<NoiseKind, String> {
    match s {
        "gaussian" => Ok(NoiseKind::Gaussian),
        "sign-gaussian" | "sign" => Ok(NoiseKind::SignGaussian),
        _ => Err(format!("unknown noise '{s}' (expected gaussian or sign-gaussian)")),
    }
}

fn parse_order(s: &str) -> std::result::Result<StepOrder, String> {
    match s {
        "theta-first" => Ok(StepOrder::ThetaFirst),
        "hyper-first" => Ok(StepOrder::HyperFirst),
        _ => Err(format!("unknown order '{s}' (expected theta-first or hyper-first)")),
    }
}

/// Raw `key -> values` pairs before validation. Later sources replace the
/// values of keys they set.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, Vec<String>>,
}

pub(crate) fn normalize_key(key: &str) -> String {
    key.trim().trim_start_matches("--").replace('-', "_")
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = RawConfig::default();
        let mut errs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) if !k.trim().is_empty() => {
                    raw.entries.entry(normalize_key(k)).or_default().push(v.trim().to_string());
                }
                _ => errs.push(format!("line {}: expected key = value, got '{line}'", n + 1)),
            }
        }
        if errs.is_empty() {
            Ok(raw)
        } else {
            Err(Error::Config(errs))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(vec![format!("config {}: {e}", path.display())]))?;
        Self::parse(&text)
    }

    /// Replaces all values of `key`.
    pub fn set(&mut self, key: &str, values: Vec<String>) {
        self.entries.insert(normalize_key(key), values);
    }

    /// Applies every key of `other` on top of `self`.
    pub fn merge(&mut self, other: RawConfig) {
        self.entries.extend(other.entries);
    }

    pub fn get(&self, key: &str) -> Option<&[String]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// A validated experiment configuration. Unset numeric options fall back to
/// per-experiment defaults when the experiment is built.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub method: MethodKind,
    pub seeds: Vec<u64>,
    pub sigma: Option<f64>,
    pub tau: Option<f64>,
    pub k: Vec<usize>,
    pub noise: Option<NoiseKind>,
    pub lr: Option<f64>,
    pub meta_lr: Option<f64>,
    pub steps: Option<usize>,
    pub epochs: Option<usize>,
    pub width: usize,
    pub reps: usize,
    pub grid_points: usize,
    pub rho: f64,
    pub true_angle: f64,
    pub n_train: Option<usize>,
    pub weight_hidden: Option<usize>,
    pub order: Option<StepOrder>,
    pub dimension: Vec<SweepDimension>,
    pub grid: Vec<usize>,
    pub out: PathBuf,
    pub summary: Option<PathBuf>,
    pub timing: bool,
    pub dump_tape: Option<PathBuf>,
    pub export_data: Option<PathBuf>,
}

const KEYS: &[&str] = &[
    "experiment",
    "method",
    "seeds",
    "sigma",
    "tau",
    "k",
    "noise",
    "lr",
    "meta_lr",
    "steps",
    "epochs",
    "width",
    "reps",
    "grid_points",
    "rho",
    "true_angle",
    "n_train",
    "weight_hidden",
    "order",
    "dimension",
    "grid",
    "out",
    "summary",
    "timing",
    "dump_tape",
    "export_data",
];

/// Collects parse errors instead of stopping at the first one.
struct Reader<'a> {
    raw: &'a RawConfig,
    errs: Vec<String>,
}

impl Reader<'_> {
    fn one(&mut self, key: &str) -> Option<String> {
        let values = self.raw.get(key)?;
        if values.len() > 1 {
            self.errs.push(format!("{key}: given {} times", values.len()));
        }
        values.last().cloned()
    }

    fn parse<T>(&mut self, key: &str, f: impl Fn(&str) -> std::result::Result<T, String>) -> Option<T> {
        let v = self.one(key)?;
        match f(&v) {
            Ok(x) => Some(x),
            Err(e) => {
                self.errs.push(format!("{key}: {e}"));
                None
            }
        }
    }

    fn num<T: FromStr>(&mut self, key: &str) -> Option<T>
    where
        T::Err: fmt::Display,
    {
        self.parse(key, |s| s.parse::<T>().map_err(|e| format!("'{s}': {e}")))
    }

    fn list<T: FromStr>(&mut self, key: &str) -> Option<Vec<T>>
    where
        T::Err: fmt::Display,
    {
        let values = self.raw.get(key)?;
        let mut out = Vec::new();
        for item in values.iter().flat_map(|v| v.split(',')).map(str::trim).filter(|s| !s.is_empty()) {
            match item.parse::<T>() {
                Ok(x) => out.push(x),
                Err(e) => self.errs.push(format!("{key}: '{item}': {e}")),
            }
        }
        Some(out)
    }
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s {
        "true" | "1" | "yes" | "" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("expected true or false, got '{s}'")),
    }
}

impl ExperimentConfig {
    /// Parses and validates `raw`, reporting every problem at once.
    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let mut r = Reader { raw, errs: Vec::new() };
        for key in raw.keys() {
            if !KEYS.contains(&key) {
                r.errs.push(format!("{key}: unknown option"));
            }
        }
        let experiment = r.parse("experiment", ExperimentKind::from_str);
        if experiment.is_none() && raw.get("experiment").is_none() {
            r.errs.push("experiment: required".into());
        }
        let cfg = ExperimentConfig {
            experiment: experiment.unwrap_or(ExperimentKind::OneDGrid),
            method: r.parse("method", MethodKind::from_str).unwrap_or(MethodKind::EvoGrad),
            seeds: r.list("seeds").unwrap_or_else(|| (0..5).collect()),
            sigma: r.num("sigma"),
            tau: r.num("tau"),
            k: r.list("k").unwrap_or_default(),
            noise: r.parse("noise", parse_noise),
            lr: r.num("lr"),
            meta_lr: r.num("meta_lr"),
            steps: r.num("steps"),
            epochs: r.num("epochs"),
            width: r.num("width").unwrap_or(1),
            reps: r.num("reps").unwrap_or(100),
            grid_points: r.num("grid_points").unwrap_or(20),
            rho: r.num("rho").unwrap_or(0.4),
            true_angle: r.num("true_angle").unwrap_or(30.0),
            n_train: r.num("n_train"),
            weight_hidden: r.num("weight_hidden"),
            order: r.parse("order", parse_order),
            dimension: r.list("dimension").unwrap_or_else(|| SweepDimension::ALL.to_vec()),
            grid: r.list("grid").unwrap_or_default(),
            out: r.one("out").map_or_else(|| PathBuf::from("metrics.csv"), PathBuf::from),
            summary: r.one("summary").map(PathBuf::from),
            timing: r.parse("timing", parse_bool).unwrap_or(false),
            dump_tape: r.one("dump_tape").map(PathBuf::from),
            export_data: r.one("export_data").map(PathBuf::from),
        };
        let mut errs = r.errs;
        errs.extend(cfg.problems());
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Semantic checks on parsed values.
    fn problems(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                errs.push(msg);
            }
        };
        let allowed: &[MethodKind] = match self.experiment {
            ExperimentKind::OneDGrid => &[MethodKind::EvoGrad, MethodKind::T1T2],
            ExperimentKind::OneDTraj => &MethodKind::ALL,
            ExperimentKind::Rotation | ExperimentKind::Reweight => {
                &[MethodKind::EvoGrad, MethodKind::T1T2, MethodKind::BaselineNoMeta]
            }
            ExperimentKind::Scaling => &[MethodKind::EvoGrad],
        };
        check(
            allowed.contains(&self.method),
            format!("method: '{}' is not available for experiment '{}'", self.method, self.experiment),
        );
        check(!self.seeds.is_empty(), "seeds: at least one seed is required".into());
        if let Some(s) = self.sigma {
            check(s.is_finite() && s >= 0.0, format!("sigma: must be finite and >= 0, got {s}"));
        }
        if let Some(t) = self.tau {
            check(t.is_finite() && t > 0.0, format!("tau: must be finite and > 0, got {t}"));
        }
        for &k in &self.k {
            check(k >= 2, format!("k: population size must be >= 2, got {k}"));
        }
        for (name, v) in [("lr", self.lr), ("meta_lr", self.meta_lr)] {
            if let Some(v) = v {
                check(v.is_finite() && v > 0.0, format!("{name}: must be finite and > 0, got {v}"));
            }
        }
        for (name, v) in [("steps", self.steps), ("epochs", self.epochs), ("weight_hidden", self.weight_hidden)] {
            if let Some(v) = v {
                check(v > 0, format!("{name}: must be > 0"));
            }
        }
        if let Some(n) = self.n_train {
            check(n >= 100, format!("n_train: must be >= 100, got {n}"));
        }
        check(self.width >= 1, "width: must be >= 1".into());
        check(self.reps >= 2, format!("reps: need at least 2 repetitions, got {}", self.reps));
        check(self.grid_points >= 1, "grid_points: must be >= 1".into());
        check(
            (0.0..=0.9).contains(&self.rho),
            format!("rho: must lie in [0, 0.9], got {}", self.rho),
        );
        check(self.true_angle.is_finite(), "true_angle: must be finite".into());
        check(
            self.experiment != ExperimentKind::Scaling || !self.dimension.is_empty(),
            "dimension: at least one sweep dimension is required".into(),
        );
        for &g in &self.grid {
            check(g > 0, "grid: values must be positive".into());
        }
        errs
    }

    /// Population settings: explicit options over per-experiment defaults.
    /// The first `k` is used where a single population size is needed.
    pub fn perturbation(&self) -> PerturbationConfig {
        let base = if self.experiment.is_one_d() {
            crate::problems::one_d::one_d_perturbation(2, 0.5)
        } else {
            PerturbationConfig::default()
        };
        PerturbationConfig {
            sigma: self.sigma.unwrap_or(base.sigma),
            tau: self.tau.unwrap_or(base.tau),
            k: self.k.first().copied().unwrap_or(base.k),
            noise: self.noise.unwrap_or(base.noise),
        }
    }

    /// Population sizes for experiments that compare several.
    pub fn population_sizes(&self, default: &[usize]) -> Vec<usize> {
        if self.k.is_empty() {
            default.to_vec()
        } else {
            self.k.clone()
        }
    }

    pub fn run_id(&self) -> String {
        format!("{}-{}", self.experiment, self.method)
    }

    pub fn summary_path(&self) -> PathBuf {
        self.summary.clone().unwrap_or_else(|| self.out.with_extension("json"))
    }
}
