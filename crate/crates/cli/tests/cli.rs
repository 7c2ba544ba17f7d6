use std::fs;
use std::path::Path;
use std::process::Command;

use gsr_cli::checkpoint::Checkpoint;

const QUICK: &str = "\
[data]
num_classes = 3
rho = 10
n_max = 60

[model]
latent_dim = 4
hidden = 8

[train]
steps = 40
n_dis = 1
batch_size = 8
ema_start = 10
log_interval = 5

[reg]
n_g = 2

[metrics]
eval_interval = 20
eval_per_class = 50
standing_batch = 50
tail_classes = 2

[sweep]
groups = 2x4,4x2
lambdas = 0.25,1.0
";

fn gsr(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_gsr")).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn write_config(dir: &Path, extra: &str) -> String {
    let p = dir.join("exp.conf");
    fs::write(&p, format!("{QUICK}{extra}")).unwrap();
    p.to_string_lossy().into_owned()
}

fn data_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(String::from)
        .collect()
}

#[test]
fn train_writes_every_output_with_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("out");
    let (code, stdout, stderr) = gsr(&["train", "--config", &cfg, "--out", out.to_str().unwrap(), "--seeds", "3"]);
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.contains("seed   3"));
    for f in ["runlog_3.csv", "metrics_3.csv", "samples_3.csv", "covariance_3.csv", "checkpoint_3.ckpt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    for f in ["runlog_3.csv", "metrics_3.csv", "samples_3.csv", "covariance_3.csv"] {
        let text = fs::read_to_string(out.join(f)).unwrap();
        assert!(text.starts_with("# format = gsr-run v1\n# config_hash = "), "{f}");
        assert!(text.contains("# seed = 3\n"), "{f}");
        let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
        assert!(header.split(',').all(|c| c.parse::<f64>().is_err()), "{f}: {header}");
    }
    let ck = Checkpoint::read(fs::read(out.join("checkpoint_3.ckpt")).unwrap().as_slice()).unwrap();
    assert_eq!(ck.meta("step"), Some("40"));
    assert_eq!(ck.tensors["gen.cbn1.gamma"].shape(), &[3, 8]);
}

#[test]
fn repeated_runs_are_byte_identical_and_independent_of_jobs_and_out() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(gsr(&["train", "--config", &cfg, "--out", a.to_str().unwrap(), "--seeds", "0,1"]).0, 0);
    assert_eq!(
        gsr(&["train", "--config", &cfg, "--out", b.to_str().unwrap(), "--seeds", "0-1", "--jobs", "2"]).0,
        0
    );
    for f in ["runlog_0.csv", "runlog_1.csv", "metrics_0.csv", "metrics_1.csv", "samples_1.csv", "checkpoint_0.ckpt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(fs::read(a.join("runlog_0.csv")).unwrap(), fs::read(a.join("runlog_1.csv")).unwrap());
}

#[test]
fn config_errors_exit_1_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[train]\nstepz = 4\n");
    let (code, _, err) = gsr(&["train", "--config", &cfg]);
    assert_eq!(code, 1);
    assert!(err.contains("train.stepz") && err.contains("line"), "{err}");

    let cfg = write_config(dir.path(), "[reg]\nvariant = fancy\n");
    let (code, _, err) = gsr(&["train", "--config", &cfg]);
    assert_eq!(code, 1);
    assert!(err.contains("reg.variant"), "{err}");

    let (code, _, err) = gsr(&["train", "--config", &cfg.replace("exp.conf", "missing.conf")]);
    assert_eq!(code, 3, "{err}");
}

#[test]
fn divergence_exits_2_with_partial_logs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[train]\nlr_d = 1e200\nlr_g = 1e200\n");
    let out = dir.path().join("out");
    let (code, _, err) = gsr(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(code, 2, "{err}");
    let text = fs::read_to_string(out.join("runlog_0.csv")).unwrap();
    assert!(text.lines().last().unwrap().starts_with("# aborted at step"));
}

#[test]
fn ablate_and_sweeps_write_one_summary_row_per_arm() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("ablate");
    assert_eq!(gsr(&["ablate", "--config", &cfg, "--out", out.to_str().unwrap(), "--jobs", "3"]).0, 0);
    let rows = data_lines(&out.join("summary.csv"));
    let arms: Vec<&str> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(arms, ["baseline", "lecam", "gsr", "both"]);
    let both: Vec<&str> = rows[4].split(',').collect();
    assert_eq!((both[1], both[2], both[3]), ("gsr", "0.5", "true"));
    for arm in arms {
        assert!(out.join(arm).join("runlog_0.csv").exists());
    }

    let out = dir.path().join("groups");
    assert_eq!(gsr(&["sweep-groups", "--config", &cfg, "--out", out.to_str().unwrap()]).0, 0);
    let rows = data_lines(&out.join("summary.csv"));
    assert!(rows[0].ends_with("n_c,iteration_complexity,min_complexity"));
    assert_eq!(rows.len(), 3);
    assert!(rows[1].ends_with(",4,80,true") && rows[2].ends_with(",2,80,true"), "{rows:?}");

    let out = dir.path().join("lambda");
    assert_eq!(gsr(&["sweep-lambda", "--config", &cfg, "--out", out.to_str().unwrap()]).0, 0);
    let rows = data_lines(&out.join("summary.csv"));
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("lambda_0.25,gsr,0.25,"));
    assert!(rows[2].starts_with("lambda_1,gsr,1,"));
}

#[test]
fn plot_renders_each_figure_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("out");
    assert_eq!(gsr(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]).0, 0);
    let inputs: Vec<String> = ["runlog_0.csv", "metrics_0.csv", "covariance_0.csv", "samples_0.csv"]
        .iter()
        .map(|f| out.join(f).to_string_lossy().into_owned())
        .collect();
    let plots = dir.path().join("plots");
    let mut args = vec!["plot", "--out", plots.to_str().unwrap()];
    args.extend(inputs.iter().map(String::as_str));
    let (code, _, err) = gsr(&args);
    assert_eq!(code, 0, "{err}");
    for f in ["runlog_0_sigma.svg", "metrics_0_frechet.svg", "covariance_0_heatmap.svg", "samples_0_scatter.svg"] {
        let svg = fs::read_to_string(plots.join(f)).unwrap();
        assert!(svg.starts_with("<svg") && !svg.contains("NaN"), "{f}");
    }
    // step ticks come from the CSV rows
    let sigma = fs::read_to_string(plots.join("runlog_0_sigma.svg")).unwrap();
    assert!(sigma.contains(">40</text>") && sigma.contains(">5</text>"));
    let frechet = fs::read_to_string(plots.join("metrics_0_frechet.svg")).unwrap();
    assert!(frechet.contains(">20</text>"));

    let broken = dir.path().join("broken.csv");
    fs::write(&broken, "# x\nstep,gen_class,l_d\n1,0,0.5\n").unwrap();
    let (code, _, err) = gsr(&["plot", broken.to_str().unwrap()]);
    assert_eq!(code, 1);
    assert!(err.contains("missing column"), "{err}");
}
