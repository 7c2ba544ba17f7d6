//! Running arms × seeds and writing their outputs.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use gsr_core::data::{balanced_eval_set, sample_dataset};
use gsr_core::metrics::{self, collapse_detector, CollapseVerdict};
use gsr_core::regularizers::Variant;
use gsr_core::train::{run_training_with, write_metrics_csv, write_runlog_csv, RunLog, TrainError};

use crate::checkpoint::Checkpoint;
use crate::config::{ConfigError, ExperimentConfig};

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    /// Bad input file handed to `plot`.
    Input(String),
    Abort(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 1,
            CliError::Abort(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config error: {e}"),
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Abort(m) => write!(f, "training aborted: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

pub fn io_err(path: &Path, e: io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn train_err(e: TrainError) -> CliError {
    match e {
        TrainError::Config(m) => CliError::Config(ConfigError {
            line: None,
            key: None,
            message: m,
        }),
        TrainError::NonFinite { .. } => CliError::Abort(e.to_string()),
        other => CliError::Abort(other.to_string()),
    }
}

/// A named configuration variant within an experiment.
#[derive(Clone, Debug)]
pub struct Arm {
    pub name: String,
    pub cfg: ExperimentConfig,
}

impl Arm {
    pub fn new(name: impl Into<String>, cfg: ExperimentConfig) -> Self {
        Self { name: name.into(), cfg }
    }

    /// Arm with `(key, value)` overrides applied to `base`.
    pub fn with(name: &str, base: &ExperimentConfig, overrides: &[(&str, &str)]) -> Result<Self, ConfigError> {
        let mut cfg = base.clone();
        for (k, v) in overrides {
            cfg = cfg.with(k, v)?;
        }
        Ok(Self::new(name, cfg))
    }
}

/// Headline numbers of one finished (or aborted) run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub arm: String,
    pub seed: u64,
    pub log: RunLog,
    /// Mean final Fréchet over the rarest `tail_classes` classes.
    pub tail_frechet: f64,
    pub mean_frechet: f64,
    /// Detector verdict for the rarest class.
    pub collapse: CollapseVerdict,
}

impl RunOutcome {
    pub fn aborted(&self) -> bool {
        self.log.abort.is_some()
    }
}

/// Metadata block written at the top of every per-run CSV.
pub fn run_metadata(cfg: &ExperimentConfig, arm: &str, seed: u64) -> Vec<(String, String)> {
    let t = &cfg.train;
    [
        ("format", "gsr-run v1".to_string()),
        ("config_hash", cfg.hash()),
        ("arm", arm.to_string()),
        ("seed", seed.to_string()),
        ("data_seed", cfg.dataset_seed(seed).to_string()),
        ("variant", t.reg.variant.to_string()),
        ("lambda_gsr", t.reg.lambda_gsr.to_string()),
        ("n_g", t.reg.n_g.to_string()),
        ("lecam", t.lecam.enabled.to_string()),
        ("lambda_lc", t.lecam.lambda_lc.to_string()),
        ("steps", t.steps.to_string()),
        ("collapse_std_fraction", cfg.thresholds.std_fraction.to_string()),
        ("collapse_sigma_ratio", cfg.thresholds.sigma_ratio.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn write_meta(w: &mut impl Write, meta: &[(String, String)]) -> io::Result<()> {
    for (k, v) in meta {
        writeln!(w, "# {k} = {v}")?;
    }
    Ok(())
}

/// Header of the covariance-grid CSV for grouping `n_g`.
pub fn covariance_header(n_g: usize) -> String {
    let mut h = vec!["step".to_string(), "layer".into(), "class".into(), "row".into()];
    h.extend((0..n_g).map(|j| format!("c{j}")));
    h.join(",")
}

/// Trains one seed of one arm, writing every per-run file into `dir`.
pub fn run_one(arm: &Arm, seed: u64, dir: &Path) -> Result<RunOutcome, CliError> {
    let cfg = &arm.cfg;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let data_seed = cfg.dataset_seed(seed);
    let dataset = sample_dataset(&cfg.spec, &cfg.dists, data_seed).map_err(|e| CliError::Abort(e.to_string()))?;
    let tcfg = cfg.train_for(seed);
    let meta = run_metadata(cfg, &arm.name, seed);
    let n_g = tcfg.reg.n_g;

    let cov_path = dir.join(format!("covariance_{seed}.csv"));
    let mut cov_out = if cfg.dump_covariance {
        let mut w = create(&cov_path)?;
        write_meta(&mut w, &meta)
            .and_then(|_| writeln!(w, "{}", covariance_header(n_g)))
            .map_err(|e| io_err(&cov_path, e))?;
        Some(w)
    } else {
        None
    };
    let mut hook_err: Option<CliError> = None;
    let mut hook = |st: &gsr_core::train::TrainState| {
        if hook_err.is_some() {
            return;
        }
        let s = st.step;
        if cfg.checkpoint_interval > 0 && s % cfg.checkpoint_interval == 0 {
            let p = dir.join(format!("checkpoint_{seed}_step{s}.ckpt"));
            let res = create(&p).and_then(|mut w| {
                Checkpoint::from_state(st, &meta)
                    .write(&mut w)
                    .and_then(|_| w.flush())
                    .map_err(|e| io_err(&p, e))
            });
            if let Err(e) = res {
                hook_err = Some(e);
                return;
            }
        }
        if let Some(w) = cov_out.as_mut() {
            if s % tcfg.eval_interval == 0 || s == tcfg.steps {
                if let Err(e) = write_covariances(w, st, n_g) {
                    hook_err = Some(e);
                }
            }
        }
    };
    let log = run_training_with(&tcfg, &dataset, &cfg.dists, &mut hook).map_err(train_err)?;
    if let Some(e) = hook_err {
        return Err(e);
    }
    if let Some(mut w) = cov_out {
        w.flush().map_err(|e| io_err(&cov_path, e))?;
    }

    let write = |name: String, f: &dyn Fn(&mut BufWriter<File>) -> io::Result<()>| -> Result<(), CliError> {
        let p = dir.join(name);
        let mut w = create(&p)?;
        f(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(&p, e))
    };
    write(format!("runlog_{seed}.csv"), &|w| write_runlog_csv(w, &log, &meta))?;
    write(format!("metrics_{seed}.csv"), &|w| write_metrics_csv(w, &log, &meta))?;
    let reference = balanced_eval_set(&cfg.dists, tcfg.eval_per_class, data_seed).map_err(|e| CliError::Abort(e.to_string()))?;
    let final_step = log.last_snapshot().map_or(0, |s| s.step);
    write(format!("samples_{seed}.csv"), &|w| {
        write_meta(w, &meta)?;
        writeln!(w, "# snapshot_step = {final_step}")?;
        writeln!(w, "source,class,x,y")?;
        for (y, pts) in log.final_samples.iter().enumerate() {
            for p in pts {
                writeln!(w, "generated,{y},{},{}", p[0], p[1])?;
            }
        }
        for (p, y) in reference.iter() {
            writeln!(w, "reference,{y},{},{}", p[0], p[1])?;
        }
        Ok(())
    })?;
    write(format!("checkpoint_{seed}.ckpt"), &|w| Checkpoint::from_state(&log.final_state, &meta).write(w))?;

    Ok(summarize(&arm.name, seed, cfg, log))
}

fn write_covariances(w: &mut impl Write, st: &gsr_core::train::TrainState, n_g: usize) -> Result<(), CliError> {
    for (l, layer) in st.gen_ema.cbn_layers().iter().enumerate() {
        for y in 0..layer.num_classes() {
            let rep = metrics::grouped_covariance(layer.gamma_row(y), n_g, y, l)
                .map_err(|e| CliError::Abort(e.to_string()))?;
            for r in 0..n_g {
                let row: Vec<String> = rep.covariance[r * n_g..(r + 1) * n_g].iter().map(|v| v.to_string()).collect();
                writeln!(w, "{},{},{y},{r},{}", st.step, l + 1, row.join(","))
                    .map_err(|e| CliError::Io(e.to_string()))?;
            }
        }
    }
    Ok(())
}

/// Final-snapshot numbers and the rarest-class collapse verdict.
pub fn summarize(arm: &str, seed: u64, cfg: &ExperimentConfig, log: RunLog) -> RunOutcome {
    let tail = cfg.spec.rarest_classes(cfg.tail_classes);
    let (tail_frechet, mean_frechet) = match log.last_snapshot() {
        Some(s) => (
            tail.iter().map(|&y| s.classes[y].frechet).sum::<f64>() / tail.len() as f64,
            s.classes.iter().map(|c| c.frechet).sum::<f64>() / s.classes.len() as f64,
        ),
        None => (f64::NAN, f64::NAN),
    };
    let rarest = tail[0];
    let collapse = collapse_detector(
        &log.collapse_series(rarest, 0),
        metrics::rms_std(cfg.dists[rarest].axis_std()),
        cfg.thresholds,
    );
    RunOutcome {
        arm: arm.to_string(),
        seed,
        log,
        tail_frechet,
        mean_frechet,
        collapse,
    }
}

/// Runs every `(arm, seed)` pair on up to `jobs` threads. Results come
/// back sorted by arm (in the given order) then seed, independent of
/// scheduling. `dir_of` names each arm's output directory.
pub fn run_grid(
    arms: &[Arm],
    seeds: &[u64],
    jobs: usize,
    dir_of: &(dyn Fn(&Arm) -> PathBuf + Sync),
) -> Vec<Result<RunOutcome, CliError>> {
    let tasks: Vec<(usize, u64)> = (0..arms.len())
        .flat_map(|a| seeds.iter().map(move |&s| (a, s)))
        .collect();
    let results: Vec<Mutex<Option<Result<RunOutcome, CliError>>>> = tasks.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, tasks.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(a, seed)) = tasks.get(i) else { break };
                let arm = &arms[a];
                let res = run_one(arm, seed, &dir_of(arm));
                *results[i].lock().expect("result slot") = Some(res);
            });
        }
    });
    results
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("every task ran"))
        .collect()
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArmSummary {
    pub arm: String,
    pub variant: Variant,
    pub lambda_gsr: f64,
    pub lecam: bool,
    pub n_g: usize,
    pub runs: usize,
    pub completed: usize,
    pub tail_frechet: (f64, f64),
    pub mean_frechet: (f64, f64),
    pub collapsed: usize,
}

/// Aggregates outcomes per arm over completed runs.
pub fn summarize_arms(arms: &[Arm], outcomes: &[RunOutcome]) -> Vec<ArmSummary> {
    arms.iter()
        .map(|arm| {
            let mine: Vec<&RunOutcome> = outcomes.iter().filter(|o| o.arm == arm.name).collect();
            let done: Vec<&&RunOutcome> = mine.iter().filter(|o| !o.aborted()).collect();
            let t = &arm.cfg.train;
            ArmSummary {
                arm: arm.name.clone(),
                variant: t.reg.variant,
                lambda_gsr: if t.reg.variant == Variant::None { 0.0 } else { t.reg.lambda_gsr },
                lecam: t.lecam.enabled,
                n_g: t.reg.n_g,
                runs: mine.len(),
                completed: done.len(),
                tail_frechet: mean_std(&done.iter().map(|o| o.tail_frechet).collect::<Vec<_>>()),
                mean_frechet: mean_std(&done.iter().map(|o| o.mean_frechet).collect::<Vec<_>>()),
                collapsed: mine.iter().filter(|o| o.collapse.fired).count(),
            }
        })
        .collect()
}

pub const SUMMARY_COLUMNS: [&str; 13] = [
    "arm",
    "variant",
    "lambda_gsr",
    "lecam",
    "n_g",
    "runs",
    "completed",
    "tail_frechet_mean",
    "tail_frechet_std",
    "mean_frechet_mean",
    "mean_frechet_std",
    "collapsed",
    "seeds",
];

/// Summary CSV; `extra` adds trailing columns per row (same order as
/// `summaries`).
pub fn write_summary<W: Write>(
    mut w: W,
    meta: &[(String, String)],
    summaries: &[ArmSummary],
    seeds: &[u64],
    extra: Option<(&[&str], &[Vec<String>])>,
) -> io::Result<()> {
    write_meta(&mut w, meta)?;
    let mut header: Vec<&str> = SUMMARY_COLUMNS.to_vec();
    if let Some((cols, _)) = extra {
        header.extend_from_slice(cols);
    }
    writeln!(w, "{}", header.join(","))?;
    let seeds: Vec<String> = seeds.iter().map(ToString::to_string).collect();
    for (i, s) in summaries.iter().enumerate() {
        let mut row = vec![
            s.arm.clone(),
            s.variant.to_string(),
            s.lambda_gsr.to_string(),
            s.lecam.to_string(),
            s.n_g.to_string(),
            s.runs.to_string(),
            s.completed.to_string(),
            s.tail_frechet.0.to_string(),
            s.tail_frechet.1.to_string(),
            s.mean_frechet.0.to_string(),
            s.mean_frechet.1.to_string(),
            s.collapsed.to_string(),
            seeds.join(" "),
        ];
        if let Some((_, rows)) = extra {
            row.extend(rows[i].iter().cloned());
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
