use gsr_core::condgen::{Architecture, BnMode};
use gsr_core::data::{make_ring_mixture, sample_dataset, ClassDistribution, Dataset, LongTailSpec};
use gsr_core::ndcore::Tensor;
use gsr_core::regularizers::Variant;
use gsr_core::train::{
    run_training, train_step, write_metrics_csv, write_runlog_csv, TrainConfig, TrainError,
    TrainState,
};

fn setup(k: usize) -> (Dataset, Vec<ClassDistribution>) {
    let spec = LongTailSpec::new(k, 10.0, 60).unwrap();
    let dists = make_ring_mixture(k, 2.0, 0.15);
    (sample_dataset(&spec, &dists, 4).unwrap(), dists)
}

fn tiny(k: usize) -> TrainConfig {
    TrainConfig {
        arch: Architecture { num_classes: k, latent_dim: 4, hidden: 8 },
        steps: 20,
        n_dis: 2,
        batch_size: 8,
        ema_start: 5,
        log_interval: 3,
        eval_interval: 10,
        eval_per_class: 50,
        standing_batch: 50,
        reg: gsr_core::regularizers::RegConfig { n_g: 2, ..Default::default() },
        seed: 9,
        ..TrainConfig::default()
    }
}

fn csv(log: &gsr_core::train::RunLog) -> (Vec<u8>, Vec<u8>) {
    let meta = vec![("seed".to_string(), "9".to_string())];
    let mut a = Vec::new();
    let mut b = Vec::new();
    write_runlog_csv(&mut a, log, &meta).unwrap();
    write_metrics_csv(&mut b, log, &meta).unwrap();
    (a, b)
}

#[test]
fn zero_steps_gives_the_initial_snapshot_only() {
    let (ds, dists) = setup(3);
    let cfg = TrainConfig { steps: 0, ..tiny(3) };
    let log = run_training(&cfg, &ds, &dists).unwrap();
    assert!(log.records.is_empty());
    assert_eq!(log.snapshots.len(), 1);
    assert_eq!(log.snapshots[0].step, 0);
    assert!(log.completed());
}

#[test]
fn runs_are_byte_identical() {
    let (ds, dists) = setup(3);
    for variant in [Variant::None, Variant::Gsr, Variant::Gsn, Variant::Gsrip] {
        let mut cfg = tiny(3);
        cfg.reg.variant = variant;
        let a = csv(&run_training(&cfg, &ds, &dists).unwrap());
        let b = csv(&run_training(&cfg, &ds, &dists).unwrap());
        assert_eq!(a, b, "{variant}");
    }
}

#[test]
fn records_are_increasing_and_losses_add_up() {
    let (ds, dists) = setup(3);
    for variant in [Variant::Gsr, Variant::Gsrip] {
        let mut cfg = tiny(3);
        cfg.reg.variant = variant;
        let log = run_training(&cfg, &ds, &dists).unwrap();
        assert!(log.records.windows(2).all(|w| w[0].step < w[1].step));
        assert_eq!(log.records.last().unwrap().step, 20);
        for r in &log.records {
            assert!(r.l_gsr > 0.0);
            assert!((r.g_total - (r.l_g + cfg.reg.lambda_gsr * r.l_gsr)).abs() < 1e-12);
            assert_eq!(r.sigma_gamma.len(), 6);
        }
        let steps: Vec<u64> = log.snapshots.iter().map(|s| s.step).collect();
        assert_eq!(steps, vec![0, 10, 20]);
    }
}

#[test]
fn zero_weight_regularizer_reproduces_the_baseline() {
    let (ds, _) = setup(3);
    let mut base = tiny(3);
    base.reg.variant = Variant::None;
    let mut zero = tiny(3);
    zero.reg.variant = Variant::Gsr;
    zero.reg.lambda_gsr = 0.0;
    let mut a = TrainState::new(&base, &ds).unwrap();
    let mut b = TrainState::new(&zero, &ds).unwrap();
    for _ in 0..5 {
        let ra = train_step(&mut a, &base, &ds).unwrap();
        let rb = train_step(&mut b, &zero, &ds).unwrap();
        assert_eq!(ra.l_g.to_bits(), rb.l_g.to_bits());
        assert_eq!(ra.g_total.to_bits(), ra.l_g.to_bits());
    }
    assert_eq!(a.gen, b.gen);
    assert_eq!(a.disc, b.disc);
}

#[test]
fn single_step_is_reproducible() {
    let (ds, _) = setup(3);
    let cfg = tiny(3);
    let mut a = TrainState::new(&cfg, &ds).unwrap();
    let mut b = TrainState::new(&cfg, &ds).unwrap();
    assert_eq!(train_step(&mut a, &cfg, &ds).unwrap(), train_step(&mut b, &cfg, &ds).unwrap());
    assert_eq!(a.gen, b.gen);
}

#[test]
fn ema_with_zero_decay_tracks_live_weights() {
    let (ds, _) = setup(3);
    let cfg = TrainConfig { ema_decay: 0.0, ema_start: 2, ..tiny(3) };
    let mut st = TrainState::new(&cfg, &ds).unwrap();
    for _ in 0..6 {
        train_step(&mut st, &cfg, &ds).unwrap();
        assert_eq!(st.gen.params(), st.gen_ema.params());
    }
    let cfg = TrainConfig { ema_decay: 0.5, ema_start: 2, ..tiny(3) };
    let mut st = TrainState::new(&cfg, &ds).unwrap();
    for _ in 0..6 {
        train_step(&mut st, &cfg, &ds).unwrap();
    }
    assert_ne!(st.gen.params(), st.gen_ema.params());
    for (e, l) in st.gen_ema.params().iter().zip(st.gen.params()) {
        assert_eq!(e.shape(), l.shape());
    }
}

#[test]
fn generator_classes_are_sampled_uniformly() {
    let k = 8;
    let (ds, _) = setup(k);
    let cfg = TrainConfig {
        n_dis: 1,
        batch_size: 2,
        arch: Architecture { num_classes: k, latent_dim: 2, hidden: 2 },
        reg: gsr_core::regularizers::RegConfig { n_g: 1, ..Default::default() },
        ..tiny(k)
    };
    let mut st = TrainState::new(&cfg, &ds).unwrap();
    let n = 10_000;
    let mut counts = vec![0usize; k];
    for _ in 0..n {
        counts[train_step(&mut st, &cfg, &ds).unwrap().gen_class] += 1;
    }
    let p = 1.0 / k as f64;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - n as f64 * p).abs() < 3.0 * sd, "{c}");
    }
}

#[test]
fn conditioning_is_live_after_training() {
    let (ds, _) = setup(3);
    let cfg = TrainConfig { steps: 50, ..tiny(3) };
    let mut st = TrainState::new(&cfg, &ds).unwrap();
    let z = Tensor::new(&[4, 4], (0..16).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let before0 = st.gen.sample(&z, 0, BnMode::Batch, None).unwrap();
    let before1 = st.gen.sample(&z, 1, BnMode::Batch, None).unwrap();
    assert_eq!(before0, before1);
    for _ in 0..50 {
        train_step(&mut st, &cfg, &ds).unwrap();
    }
    let after0 = st.gen.sample(&z, 0, BnMode::Batch, None).unwrap();
    let after1 = st.gen.sample(&z, 1, BnMode::Batch, None).unwrap();
    assert_ne!(after0, after1);
}

#[test]
fn divergence_aborts_with_a_partial_log() {
    let (ds, dists) = setup(3);
    let mut cfg = tiny(3);
    cfg.adam_d.lr = 1e200;
    cfg.adam_g.lr = 1e200;
    cfg.log_interval = 1;
    let log = run_training(&cfg, &ds, &dists).unwrap();
    let abort = log.abort.clone().expect("run must abort");
    assert!(abort.step >= 1 && abort.step <= 20);
    assert_eq!(log.records.len() as u64, abort.step - 1);
    let (runlog, _) = csv(&log);
    let text = String::from_utf8(runlog).unwrap();
    assert!(text.lines().last().unwrap().starts_with("# aborted at step"));

    let mut st = TrainState::new(&tiny(3), &ds).unwrap();
    st.disc.w1.data_mut().iter_mut().for_each(|x| *x = 1e300);
    st.disc.w2.data_mut().iter_mut().for_each(|x| *x = 1e300);
    assert!(matches!(
        train_step(&mut st, &tiny(3), &ds),
        Err(TrainError::NonFinite { step: 1, .. })
    ));
}

#[test]
fn csv_layout() {
    let (ds, dists) = setup(3);
    let log = run_training(&tiny(3), &ds, &dists).unwrap();
    let (runlog, metrics) = csv(&log);
    let runlog = String::from_utf8(runlog).unwrap();
    let mut lines = runlog.lines();
    assert_eq!(lines.next().unwrap(), "# seed = 9");
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&header[..7], &["step", "gen_class", "l_d", "r_lc", "l_g", "l_gsr", "g_total"]);
    assert_eq!(header.len(), 7 + 4 * 3);
    assert!(lines.all(|l| l.split(',').count() == header.len()));
    let metrics = String::from_utf8(metrics).unwrap();
    // 3 snapshots × 3 classes + metadata + header
    assert_eq!(metrics.lines().count(), 9 + 2);
}
