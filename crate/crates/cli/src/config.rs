//! Flat, sectioned `key = value` experiment configuration.
//!
//! ```text
//! # comment
//! [train]
//! steps = 20000
//! ```
//!
//! Every key is checked against [`SCHEMA`]; unknown keys, duplicates and
//! unparsable values are rejected with the offending line number.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use gsr_core::condgen::Architecture;
use gsr_core::data::{make_ring_mixture, ClassDistribution, LongTailSpec};
use gsr_core::metrics::CollapseThresholds;
use gsr_core::regularizers::{RegConfig, Variant};
use gsr_core::train::{AdamConfig, LeCamConfig, TrainConfig};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.line, &self.key) {
            (Some(l), Some(k)) => write!(f, "line {l}: key `{k}`: {}", self.message),
            (Some(l), None) => write!(f, "line {l}: {}", self.message),
            (None, Some(k)) => write!(f, "key `{k}`: {}", self.message),
            (None, None) => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Int,
    Float,
    Bool,
    Variant,
    IntList,
    FloatList,
    PairList,
    Text,
}

/// `(section.key, kind, default)`.
pub const SCHEMA: &[(&str, &str, &str)] = &[
    ("data.num_classes", "int", "8"),
    ("data.rho", "float", "100"),
    ("data.n_max", "int", "2000"),
    ("data.radius", "float", "2"),
    ("data.std", "float", "0.15"),
    ("data.seed", "text", "run"),
    ("model.latent_dim", "int", "16"),
    ("model.hidden", "int", "64"),
    ("model.d_spectral_norm", "bool", "false"),
    ("train.steps", "int", "20000"),
    ("train.n_dis", "int", "5"),
    ("train.batch_size", "int", "32"),
    ("train.lr_d", "float", "0.0002"),
    ("train.lr_g", "float", "0.0002"),
    ("train.beta1", "float", "0.5"),
    ("train.beta2", "float", "0.9"),
    ("train.adam_eps", "float", "1e-8"),
    ("train.ema_decay", "float", "0.999"),
    ("train.ema_start", "int", "1000"),
    ("train.log_interval", "int", "10"),
    ("train.checkpoint_interval", "int", "0"),
    ("reg.variant", "variant", "gsr"),
    ("reg.lambda_gsr", "float", "0.5"),
    ("reg.alpha", "float", "0.99"),
    ("reg.n_g", "int", "8"),
    ("reg.power_iters", "int", "4"),
    ("lecam.enabled", "bool", "true"),
    ("lecam.lambda_lc", "float", "0.1"),
    ("lecam.decay", "float", "0.99"),
    ("metrics.eval_interval", "int", "500"),
    ("metrics.eval_per_class", "int", "500"),
    ("metrics.standing_batch", "int", "500"),
    ("metrics.coverage_radius", "float", "3"),
    ("metrics.collapse_std_fraction", "float", "0.1"),
    ("metrics.collapse_sigma_ratio", "float", "3"),
    ("metrics.tail_classes", "int", "3"),
    ("metrics.dump_covariance", "bool", "true"),
    ("run.seeds", "int_list", "0"),
    ("run.out", "text", "runs"),
    ("run.jobs", "int", "1"),
    ("sweep.lambdas", "float_list", "0.25,0.5,1.0"),
    ("sweep.groups", "pair_list", "2x32,4x16,8x8,16x4"),
];

/// Keys that choose where and how often to run, not what is computed; they
/// are left out of the config hash.
const UNHASHED_PREFIX: &str = "run.";

fn kind_of(name: &str) -> Kind {
    match name {
        "int" => Kind::Int,
        "float" => Kind::Float,
        "bool" => Kind::Bool,
        "variant" => Kind::Variant,
        "int_list" => Kind::IntList,
        "float_list" => Kind::FloatList,
        "pair_list" => Kind::PairList,
        _ => Kind::Text,
    }
}

fn check_value(kind: Kind, v: &str) -> Result<(), String> {
    let list = |v: &str| v.split(',').map(str::trim).map(String::from).collect::<Vec<_>>();
    match kind {
        Kind::Int => v.parse::<u64>().map(|_| ()).map_err(|_| format!("expected a non-negative integer, got `{v}`")),
        Kind::Float => match v.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(()),
            _ => Err(format!("expected a finite number, got `{v}`")),
        },
        Kind::Bool => match v {
            "true" | "false" => Ok(()),
            _ => Err(format!("expected true or false, got `{v}`")),
        },
        Kind::Variant => v.parse::<Variant>().map(|_| ()).map_err(|e| e.to_string()),
        Kind::IntList => list(v)
            .iter()
            .try_for_each(|x| x.parse::<u64>().map(|_| ()).map_err(|_| format!("bad integer `{x}` in list"))),
        Kind::FloatList => list(v).iter().try_for_each(|x| match x.parse::<f64>() {
            Ok(f) if f.is_finite() => Ok(()),
            _ => Err(format!("bad number `{x}` in list")),
        }),
        Kind::PairList => list(v).iter().try_for_each(|x| parse_pair(x).map(|_| ())),
        Kind::Text => {
            if v.is_empty() {
                Err("empty value".into())
            } else {
                Ok(())
            }
        }
    }
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once('x')
        .ok_or_else(|| format!("expected a pair like 8x8, got `{s}`"))?;
    let a = a.trim().parse().map_err(|_| format!("bad pair `{s}`"))?;
    let b = b.trim().parse().map_err(|_| format!("bad pair `{s}`"))?;
    Ok((a, b))
}

/// Resolved `key → (value, source line)` document.
#[derive(Clone, Debug, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, (String, Option<usize>)>,
}

impl RawConfig {
    pub fn defaults() -> Self {
        Self {
            values: SCHEMA
                .iter()
                .map(|(k, _, d)| (k.to_string(), (d.to_string(), None)))
                .collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::defaults();
        let mut seen = BTreeMap::new();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| ConfigError {
                    line: Some(line_no),
                    key: None,
                    message: format!("malformed section header `{line}`"),
                })?;
                section = Some(name.trim().to_string());
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError {
                line: Some(line_no),
                key: None,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let k = k.trim();
            let key = match &section {
                Some(s) if !k.contains('.') => format!("{s}.{k}"),
                _ => k.to_string(),
            };
            if let Some(prev) = seen.insert(key.clone(), line_no) {
                return Err(ConfigError {
                    line: Some(line_no),
                    key: Some(key),
                    message: format!("duplicate key (first set on line {prev})"),
                });
            }
            cfg.set(&key, v.trim(), Some(line_no))?;
        }
        Ok(cfg)
    }

    /// Validates and stores one value; `line` is used for diagnostics.
    pub fn set(&mut self, key: &str, value: &str, line: Option<usize>) -> Result<(), ConfigError> {
        let Some((_, kind, _)) = SCHEMA.iter().find(|(k, _, _)| *k == key) else {
            return Err(ConfigError {
                line,
                key: Some(key.to_string()),
                message: "unknown key".into(),
            });
        };
        check_value(kind_of(kind), value).map_err(|message| ConfigError {
            line,
            key: Some(key.to_string()),
            message,
        })?;
        self.values.insert(key.to_string(), (value.to_string(), line));
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        &self.values[key].0
    }

    fn err(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            line: self.values.get(key).and_then(|v| v.1),
            key: Some(key.to_string()),
            message: message.into(),
        }
    }

    fn int(&self, key: &str) -> u64 {
        self.get(key).parse().expect("validated on set")
    }

    fn float(&self, key: &str) -> f64 {
        self.get(key).parse().expect("validated on set")
    }

    fn flag(&self, key: &str) -> bool {
        self.get(key) == "true"
    }

    /// Canonical text of every hashed key, one `key = value` per line.
    pub fn canonical(&self) -> String {
        self.values
            .iter()
            .filter(|(k, _)| !k.starts_with(UNHASHED_PREFIX))
            .map(|(k, (v, _))| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Typed view of a validated [`RawConfig`].
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub raw: RawConfig,
    pub spec: LongTailSpec,
    pub dists: Vec<ClassDistribution>,
    /// Fixed dataset seed, or `None` to reuse each run's seed.
    pub data_seed: Option<u64>,
    pub train: TrainConfig,
    pub checkpoint_interval: u64,
    pub thresholds: CollapseThresholds,
    pub tail_classes: usize,
    pub dump_covariance: bool,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub jobs: usize,
    pub sweep_lambdas: Vec<f64>,
    pub sweep_groups: Vec<(usize, usize)>,
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        Self::from_raw(RawConfig::parse(text)?)
    }

    pub fn from_raw(raw: RawConfig) -> Result<Self, ConfigError> {
        let k = raw.int("data.num_classes") as usize;
        if k < 2 {
            return Err(raw.err("data.num_classes", "need at least 2 classes"));
        }
        let spec = LongTailSpec::new(k, raw.float("data.rho"), raw.int("data.n_max") as usize)
            .map_err(|e| raw.err("data.rho", e.to_string()))?;
        let std = raw.float("data.std");
        if std <= 0.0 {
            return Err(raw.err("data.std", "must be positive"));
        }
        let dists = make_ring_mixture(k, raw.float("data.radius"), std);
        let data_seed = match raw.get("data.seed") {
            "run" => None,
            s => Some(
                s.parse()
                    .map_err(|_| raw.err("data.seed", "expected an integer or `run`"))?,
            ),
        };

        let adam = |lr: &str| AdamConfig {
            lr: raw.float(lr),
            beta1: raw.float("train.beta1"),
            beta2: raw.float("train.beta2"),
            eps: raw.float("train.adam_eps"),
        };
        let train = TrainConfig {
            arch: Architecture {
                num_classes: k,
                latent_dim: raw.int("model.latent_dim") as usize,
                hidden: raw.int("model.hidden") as usize,
            },
            steps: raw.int("train.steps"),
            n_dis: raw.int("train.n_dis") as usize,
            batch_size: raw.int("train.batch_size") as usize,
            adam_d: adam("train.lr_d"),
            adam_g: adam("train.lr_g"),
            ema_decay: raw.float("train.ema_decay"),
            ema_start: raw.int("train.ema_start"),
            reg: RegConfig {
                lambda_gsr: raw.float("reg.lambda_gsr"),
                alpha: raw.float("reg.alpha"),
                n_g: raw.int("reg.n_g") as usize,
                power_iters: raw.int("reg.power_iters") as usize,
                variant: raw.get("reg.variant").parse().expect("validated on set"),
            },
            lecam: LeCamConfig {
                enabled: raw.flag("lecam.enabled"),
                lambda_lc: raw.float("lecam.lambda_lc"),
                decay: raw.float("lecam.decay"),
            },
            d_spectral_norm: raw.flag("model.d_spectral_norm"),
            seed: 0,
            log_interval: raw.int("train.log_interval"),
            eval_interval: raw.int("metrics.eval_interval"),
            eval_per_class: raw.int("metrics.eval_per_class") as usize,
            standing_batch: raw.int("metrics.standing_batch") as usize,
            coverage_radius: raw.float("metrics.coverage_radius"),
        };
        if let Err(e) = train.validate() {
            let key = match e.to_string() {
                m if m.contains("n_g") => "reg.n_g",
                m if m.contains("n_dis") => "train.n_dis",
                m if m.contains("batch_size") => "train.batch_size",
                m if m.contains("ema_decay") => "train.ema_decay",
                m if m.contains("power_iters") => "reg.power_iters",
                m if m.contains("Adam") => "train.lr_g",
                m if m.contains("eval") || m.contains("standing") => "metrics.eval_per_class",
                _ => "train.log_interval",
            };
            return Err(raw.err(key, e.to_string()));
        }
        if !(raw.float("reg.alpha") > 0.0 && raw.float("reg.alpha") < 1.0) {
            return Err(raw.err("reg.alpha", "must lie in (0, 1)"));
        }
        if raw.float("reg.lambda_gsr") < 0.0 {
            return Err(raw.err("reg.lambda_gsr", "must be non-negative"));
        }
        let tail_classes = raw.int("metrics.tail_classes") as usize;
        if tail_classes == 0 || tail_classes > k {
            return Err(raw.err("metrics.tail_classes", format!("must lie in 1..={k}")));
        }
        let seeds: Vec<u64> = raw
            .get("run.seeds")
            .split(',')
            .map(|s| s.trim().parse().expect("validated on set"))
            .collect();
        let jobs = raw.int("run.jobs") as usize;
        if jobs == 0 {
            return Err(raw.err("run.jobs", "must be at least 1"));
        }
        let sweep_lambdas = raw
            .get("sweep.lambdas")
            .split(',')
            .map(|s| s.trim().parse().expect("validated on set"))
            .collect();
        let sweep_groups: Vec<(usize, usize)> = raw
            .get("sweep.groups")
            .split(',')
            .map(|s| parse_pair(s.trim()).expect("validated on set"))
            .collect();
        let d = train.arch.hidden;
        if let Some((g, c)) = sweep_groups.iter().find(|(g, c)| g * c != d) {
            return Err(raw.err(
                "sweep.groups",
                format!("pair {g}x{c} does not factor the hidden width {d}"),
            ));
        }
        Ok(Self {
            spec,
            dists,
            data_seed,
            train,
            checkpoint_interval: raw.int("train.checkpoint_interval"),
            thresholds: CollapseThresholds {
                std_fraction: raw.float("metrics.collapse_std_fraction"),
                sigma_ratio: raw.float("metrics.collapse_sigma_ratio"),
            },
            tail_classes,
            dump_covariance: raw.flag("metrics.dump_covariance"),
            seeds,
            out: PathBuf::from(raw.get("run.out")),
            jobs,
            sweep_lambdas,
            sweep_groups,
            raw,
        })
    }

    pub fn hash(&self) -> String {
        self.raw.hash()
    }

    /// Re-validates after overriding one key.
    pub fn with(&self, key: &str, value: &str) -> Result<Self, ConfigError> {
        let mut raw = self.raw.clone();
        raw.set(key, value, None)?;
        Self::from_raw(raw)
    }

    /// Training configuration for one seed.
    pub fn train_for(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }

    pub fn dataset_seed(&self, run_seed: u64) -> u64 {
        self.data_seed.unwrap_or(run_seed)
    }
}
