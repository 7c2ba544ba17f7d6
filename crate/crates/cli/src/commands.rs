//! Subcommand implementations. Each returns `Ok` or a [`CliError`] whose
//! exit code the binary forwards.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use gsr_core::regularizers::Variant;
use gsr_core::spectral::iteration_complexity;

use crate::config::ExperimentConfig;
use crate::experiment::{io_err, run_grid, summarize_arms, write_summary, Arm, CliError, RunOutcome};
use crate::svg::{self, Heatmap, ScatterPanel, Series};

/// Command-line overrides of the `[run]` section.
#[derive(Clone, Debug, Default)]
pub struct RunOverrides {
    pub seeds: Option<String>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

/// Expands `0,3,5-7` into `[0, 3, 5, 6, 7]`.
pub fn parse_seed_list(s: &str) -> Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: u64 = a.trim().parse().map_err(|_| format!("bad seed range `{part}`"))?;
                let b: u64 = b.trim().parse().map_err(|_| format!("bad seed range `{part}`"))?;
                if b < a {
                    return Err(format!("empty seed range `{part}`"));
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| format!("bad seed `{part}`"))?),
        }
    }
    if out.is_empty() {
        return Err("empty seed list".into());
    }
    Ok(out)
}

pub fn load_config(path: &Path, ov: &RunOverrides) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut cfg = ExperimentConfig::from_text(&text)?;
    if let Some(s) = &ov.seeds {
        let seeds = parse_seed_list(s).map_err(|m| {
            CliError::Config(crate::config::ConfigError {
                line: None,
                key: Some("--seeds".into()),
                message: m,
            })
        })?;
        let list: Vec<String> = seeds.iter().map(ToString::to_string).collect();
        cfg = cfg.with("run.seeds", &list.join(","))?;
    }
    if let Some(o) = &ov.out {
        cfg = cfg.with("run.out", &o.to_string_lossy())?;
    }
    if let Some(j) = ov.jobs {
        cfg = cfg.with("run.jobs", &j.to_string())?;
    }
    Ok(cfg)
}

fn summary_meta(cfg: &ExperimentConfig, command: &str) -> Vec<(String, String)> {
    let seeds: Vec<String> = cfg.seeds.iter().map(ToString::to_string).collect();
    vec![
        ("format".into(), "gsr-summary v1".into()),
        ("command".into(), command.into()),
        ("config_hash".into(), cfg.hash()),
        ("seeds".into(), seeds.join(" ")),
        ("tail_classes".into(), cfg.tail_classes.to_string()),
        ("collapse_std_fraction".into(), cfg.thresholds.std_fraction.to_string()),
        ("collapse_sigma_ratio".into(), cfg.thresholds.sigma_ratio.to_string()),
    ]
}

/// Splits grid results into outcomes, returning the first hard error.
/// Aborted runs are kept so their partial logs still count.
fn collect(results: Vec<Result<RunOutcome, CliError>>) -> Result<Vec<RunOutcome>, CliError> {
    results.into_iter().collect()
}

fn report(outcomes: &[RunOutcome]) -> Result<(), CliError> {
    for o in outcomes {
        println!(
            "{:<12} seed {:>3}  tail Fréchet {:.4}  mean Fréchet {:.4}  rarest-class collapse {}{}",
            o.arm,
            o.seed,
            o.tail_frechet,
            o.mean_frechet,
            if o.collapse.fired { "yes" } else { "no" },
            o.log
                .abort
                .as_ref()
                .map(|a| format!("  ABORTED at step {}", a.step))
                .unwrap_or_default()
        );
    }
    match outcomes.iter().find(|o| o.aborted()) {
        Some(o) => Err(CliError::Abort(format!(
            "arm {} seed {}: {}",
            o.arm,
            o.seed,
            o.log.abort.as_ref().map_or("", |a| a.message.as_str())
        ))),
        None => Ok(()),
    }
}

fn run_arms(
    cfg: &ExperimentConfig,
    arms: &[Arm],
    command: &str,
    extra: Option<(&[&str], Vec<Vec<String>>)>,
) -> Result<Vec<RunOutcome>, CliError> {
    let out = cfg.out.clone();
    let outcomes = collect(run_grid(arms, &cfg.seeds, cfg.jobs, &|a: &Arm| out.join(&a.name)))?;
    let summaries = summarize_arms(arms, &outcomes);
    let path = out.join("summary.csv");
    let mut w = File::create(&path).map(BufWriter::new).map_err(|e| io_err(&path, e))?;
    let extra_ref = extra.as_ref().map(|(c, r)| (*c, r.as_slice()));
    write_summary(&mut w, &summary_meta(cfg, command), &summaries, &cfg.seeds, extra_ref)
        .and_then(|_| w.flush())
        .map_err(|e| io_err(&path, e))?;
    report(&outcomes)?;
    for s in &summaries {
        println!(
            "{:<12} tail Fréchet {:.4} ± {:.4}  mean Fréchet {:.4} ± {:.4}  collapsed {}/{}",
            s.arm, s.tail_frechet.0, s.tail_frechet.1, s.mean_frechet.0, s.mean_frechet.1, s.collapsed, s.runs
        );
    }
    Ok(outcomes)
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<RunOutcome>, CliError> {
    let arms = [Arm::new("train", cfg.clone())];
    let out = cfg.out.clone();
    let outcomes = collect(run_grid(&arms, &cfg.seeds, cfg.jobs, &|_| out.clone()))?;
    report(&outcomes)?;
    Ok(outcomes)
}

/// The reg arms use the configured variant, or gSR when it is `none`.
pub fn ablation_arms(cfg: &ExperimentConfig) -> Result<Vec<Arm>, CliError> {
    let reg = match cfg.train.reg.variant {
        Variant::None => Variant::Gsr,
        v => v,
    }
    .to_string();
    Ok(vec![
        Arm::with("baseline", cfg, &[("reg.variant", "none"), ("lecam.enabled", "false")])?,
        Arm::with("lecam", cfg, &[("reg.variant", "none"), ("lecam.enabled", "true")])?,
        Arm::with("gsr", cfg, &[("reg.variant", &reg), ("lecam.enabled", "false")])?,
        Arm::with("both", cfg, &[("reg.variant", &reg), ("lecam.enabled", "true")])?,
    ])
}

pub fn cmd_ablate(cfg: &ExperimentConfig) -> Result<Vec<RunOutcome>, CliError> {
    run_arms(cfg, &ablation_arms(cfg)?, "ablate", None)
}

pub const GROUP_COLUMNS: [&str; 3] = ["n_c", "iteration_complexity", "min_complexity"];

/// One arm per `(n_g, n_c)` pair plus the extra summary columns.
pub fn group_arms(cfg: &ExperimentConfig) -> Result<(Vec<Arm>, Vec<Vec<String>>), CliError> {
    let iters = cfg.train.reg.power_iters;
    let cost: Vec<usize> = cfg.sweep_groups.iter().map(|&(g, c)| iteration_complexity(g, c, iters)).collect();
    let best = cost.iter().copied().min().unwrap_or(0);
    let mut arms = Vec::new();
    let mut extra = Vec::new();
    for (&(g, c), &k) in cfg.sweep_groups.iter().zip(&cost) {
        arms.push(Arm::with(&format!("g{g}x{c}"), cfg, &[("reg.n_g", &g.to_string())])?);
        extra.push(vec![c.to_string(), k.to_string(), (k == best).to_string()]);
    }
    Ok((arms, extra))
}

pub fn cmd_sweep_groups(cfg: &ExperimentConfig) -> Result<Vec<RunOutcome>, CliError> {
    let (arms, extra) = group_arms(cfg)?;
    run_arms(cfg, &arms, "sweep-groups", Some((&GROUP_COLUMNS, extra)))
}

pub fn lambda_arms(cfg: &ExperimentConfig) -> Result<Vec<Arm>, CliError> {
    let variant = match cfg.train.reg.variant {
        Variant::Gsrip => "gsrip",
        _ => "gsr",
    };
    cfg.sweep_lambdas
        .iter()
        .map(|l| Arm::with(&format!("lambda_{l}"), cfg, &[("reg.variant", variant), ("reg.lambda_gsr", &l.to_string())]))
        .collect::<Result<_, _>>()
        .map_err(CliError::from)
}

pub fn cmd_sweep_lambda(cfg: &ExperimentConfig) -> Result<Vec<RunOutcome>, CliError> {
    run_arms(cfg, &lambda_arms(cfg)?, "sweep-lambda", None)
}

/// A CSV produced by this tool: metadata, header and rows as strings.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| CliError::Input(format!("{}: no header row", path.display())))?
            .split(',')
            .map(str::to_string)
            .collect();
        let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
        Ok(Self { header, rows })
    }

    fn col(&self, path: &Path, name: &str) -> Result<usize, CliError> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Input(format!("{}: missing column `{name}`", path.display())))
    }

    fn num(&self, path: &Path, row: &[String], i: usize) -> Result<f64, CliError> {
        row.get(i)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CliError::Input(format!("{}: bad value in column `{}`", path.display(), self.header[i])))
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or("plot".into(), |s| s.to_string_lossy().into_owned())
}

fn plot_runlog(path: &Path, t: &Table) -> Result<String, CliError> {
    let step = t.col(path, "step")?;
    let cols: Vec<(usize, String)> = t
        .header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix("sigma_gamma_l1_c").map(|c| (i, format!("class {c}"))))
        .collect();
    if cols.is_empty() {
        return Err(CliError::Input(format!("{}: missing column `sigma_gamma_l1_c0`", path.display())));
    }
    let mut series = Vec::new();
    for (i, label) in cols {
        let points = t
            .rows
            .iter()
            .map(|r| Ok((t.num(path, r, step)?, t.num(path, r, i)?)))
            .collect::<Result<_, CliError>>()?;
        series.push(Series { label, points });
    }
    Ok(svg::line_plot("σ_max(Γ) of layer 1 per class", "generator step", "σ_max", &series, false))
}

fn plot_metrics(path: &Path, t: &Table) -> Result<String, CliError> {
    let (step, class, fr) = (t.col(path, "step")?, t.col(path, "class")?, t.col(path, "frechet")?);
    let mut by_class: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &t.rows {
        let y = t.num(path, r, class)? as usize;
        by_class.entry(y).or_default().push((t.num(path, r, step)?, t.num(path, r, fr)?));
    }
    let series: Vec<Series> = by_class
        .into_iter()
        .map(|(y, points)| Series { label: format!("class {y}"), points })
        .collect();
    Ok(svg::line_plot("Fréchet distance per class", "generator step", "Fréchet (log scale)", &series, true))
}

fn plot_covariance(path: &Path, t: &Table) -> Result<String, CliError> {
    let (step, layer, class, row) = (t.col(path, "step")?, t.col(path, "layer")?, t.col(path, "class")?, t.col(path, "row")?);
    t.col(path, "c0")?;
    let last = t
        .rows
        .iter()
        .map(|r| t.num(path, r, step))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut grids: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for r in &t.rows {
        if t.num(path, r, step)? != last || t.num(path, r, layer)? != 1.0 {
            continue;
        }
        let y = t.num(path, r, class)? as usize;
        let _ = t.num(path, r, row)?;
        let vals = (row + 1..t.header.len()).map(|i| t.num(path, r, i)).collect::<Result<Vec<_>, _>>()?;
        grids.entry(y).or_default().push(vals);
    }
    let maps: Vec<Heatmap> = grids
        .into_iter()
        .map(|(y, rows)| Heatmap { label: format!("class {y}"), rows })
        .collect();
    Ok(svg::heatmaps(&format!("covariance of grouped Γ, layer 1, step {last}"), &maps))
}

fn plot_samples(path: &Path, t: &Table) -> Result<String, CliError> {
    let (src, class, x, y) = (t.col(path, "source")?, t.col(path, "class")?, t.col(path, "x")?, t.col(path, "y")?);
    let mut panels: BTreeMap<usize, ScatterPanel> = BTreeMap::new();
    for r in &t.rows {
        let c = t.num(path, r, class)? as usize;
        let p = [t.num(path, r, x)?, t.num(path, r, y)?];
        let panel = panels.entry(c).or_insert_with(|| ScatterPanel {
            label: format!("class {c}"),
            points: Vec::new(),
            reference: Vec::new(),
        });
        if r[src] == "reference" {
            panel.reference.push(p);
        } else {
            panel.points.push(p);
        }
    }
    let panels: Vec<ScatterPanel> = panels.into_values().collect();
    Ok(svg::scatter_panels("generated samples (colour) against reference (grey)", &panels))
}

/// Renders one SVG per input CSV into `out` (or next to each input) and
/// returns the written paths.
pub fn cmd_plot(inputs: &[PathBuf], out: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    if inputs.is_empty() {
        return Err(CliError::Input("no input files".into()));
    }
    let mut written = Vec::new();
    for path in inputs {
        let t = Table::read(path)?;
        let has = |c: &str| t.header.iter().any(|h| h == c);
        let (kind, svg) = if has("gen_class") {
            ("sigma", plot_runlog(path, &t)?)
        } else if has("frechet") {
            ("frechet", plot_metrics(path, &t)?)
        } else if has("row") {
            ("heatmap", plot_covariance(path, &t)?)
        } else if has("source") {
            ("scatter", plot_samples(path, &t)?)
        } else {
            return Err(CliError::Input(format!(
                "{}: unrecognised columns {:?}",
                path.display(),
                t.header
            )));
        };
        let dir = out
            .map(Path::to_path_buf)
            .unwrap_or_else(|| path.parent().map(Path::to_path_buf).unwrap_or_default());
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let dst = dir.join(format!("{}_{kind}.svg", stem(path)));
        fs::write(&dst, svg).map_err(|e| io_err(&dst, e))?;
        written.push(dst);
    }
    Ok(written)
}
