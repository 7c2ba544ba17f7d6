//! Adversarial training loop: `n_dis` discriminator updates per generator
//! update, Adam, generator EMA, regularizer wiring and the run log.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::condgen::{
    gaussian_batch, Architecture, BnMode, DiscriminatorNet, GainNormalization, GeneratorNet,
    NetError, RUNNING_STATS_DECAY,
};
use crate::data::{ClassDistribution, Dataset};
use crate::metrics::{self, ClassMetrics, CollapseObservation, MetricError};
use crate::ndcore::{Graph, NdError, Tensor, Var};
use crate::regularizers::{
    self, effective_number_weights, ClassWeights, LeCamState, ParamKind, RegConfig, RegError,
    SpectralReadings, SpectralStates, Variant,
};
use crate::spectral;

const TRAIN_STREAM: u64 = 2;
const SNAPSHOT_STREAM: u64 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite value at step {step}: {detail}")]
    NonFinite { step: u64, detail: String },
    #[error("optimizer shape mismatch for parameter {index}")]
    Shape { index: usize },
    #[error(transparent)]
    Net(NetError),
    #[error(transparent)]
    Reg(RegError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

impl From<NetError> for TrainError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::Nd(nd) => nd.into(),
            other => TrainError::Net(other),
        }
    }
}

impl From<RegError> for TrainError {
    fn from(e: RegError) -> Self {
        match e {
            RegError::Nd(nd) => nd.into(),
            other => TrainError::Reg(other),
        }
    }
}

impl From<NdError> for TrainError {
    fn from(e: NdError) -> Self {
        match e {
            NdError::NonFinite { op } => TrainError::NonFinite {
                step: 0,
                detail: format!("{op} produced a non-finite value"),
            },
            other => TrainError::Net(NetError::Nd(other)),
        }
    }
}

impl TrainError {
    fn at_step(self, step: u64) -> Self {
        match self {
            TrainError::NonFinite { detail, .. } => TrainError::NonFinite { step, detail },
            other => other,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

/// First and second moment accumulators for a list of tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn for_params(params: &[&Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// Adam with bias correction:
/// `p ← p − lr · m̂ / (√v̂ + ε)`.
pub fn optimizer_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    acc: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != acc.m.len() {
        return Err(TrainError::Shape {
            index: params.len().min(grads.len()),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != acc.m[i].shape() {
            return Err(TrainError::Shape { index: i });
        }
    }
    acc.t += 1;
    let t = acc.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = acc.m[i].data_mut();
        let v = acc.v[i].data_mut();
        for (((pj, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mj = cfg.beta1 * *mj + (1.0 - cfg.beta1) * gj;
            *vj = cfg.beta2 * *vj + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = *mj / c1;
            let v_hat = *vj / c2;
            *pj -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeCamConfig {
    pub enabled: bool,
    pub lambda_lc: f64,
    pub decay: f64,
}

impl Default for LeCamConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            lambda_lc: 0.1,
            decay: 0.99,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub arch: Architecture,
    /// Generator updates.
    pub steps: u64,
    pub n_dis: usize,
    pub batch_size: usize,
    pub adam_d: AdamConfig,
    pub adam_g: AdamConfig,
    pub ema_decay: f64,
    pub ema_start: u64,
    pub reg: RegConfig,
    pub lecam: LeCamConfig,
    pub d_spectral_norm: bool,
    pub seed: u64,
    /// Step records are kept every `log_interval` generator steps.
    pub log_interval: u64,
    /// Metric snapshots every `eval_interval` generator steps.
    pub eval_interval: u64,
    pub eval_per_class: usize,
    /// Batch size used to recompute EMA running statistics before a snapshot.
    pub standing_batch: usize,
    pub coverage_radius: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: Architecture::default(),
            steps: 20_000,
            n_dis: 5,
            batch_size: 32,
            adam_d: AdamConfig::default(),
            adam_g: AdamConfig::default(),
            ema_decay: 0.999,
            ema_start: 1000,
            reg: RegConfig::default(),
            lecam: LeCamConfig::default(),
            d_spectral_norm: false,
            seed: 0,
            log_interval: 10,
            eval_interval: 500,
            eval_per_class: 500,
            standing_batch: 500,
            coverage_radius: 3.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.n_dis < 1 {
            return fail("n_dis must be at least 1");
        }
        if self.batch_size < 2 {
            return fail("batch_size must be at least 2");
        }
        if self.log_interval < 1 || self.eval_interval < 1 {
            return fail("log_interval and eval_interval must be at least 1");
        }
        if self.eval_per_class < 2 || self.standing_batch < 2 {
            return fail("eval_per_class and standing_batch must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return fail("ema_decay must lie in [0, 1]");
        }
        if self.reg.n_g == 0 || self.arch.hidden % self.reg.n_g != 0 {
            return Err(TrainError::Config(format!(
                "n_g = {} does not divide the hidden width {}",
                self.reg.n_g, self.arch.hidden
            )));
        }
        if self.reg.power_iters < 1 {
            return fail("power_iters must be at least 1");
        }
        for a in [&self.adam_d, &self.adam_g] {
            if !(a.lr > 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
                return fail("Adam settings need lr > 0, betas in [0, 1) and eps > 0");
            }
        }
        Ok(())
    }
}

/// Everything the training thread owns.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub gen: GeneratorNet,
    pub disc: DiscriminatorNet,
    pub gen_ema: GeneratorNet,
    pub adam_g: AdamState,
    pub adam_d: AdamState,
    pub lecam: LeCamState,
    pub spectral: SpectralStates,
    /// Separate warm starts for logging so monitoring never feeds back into
    /// training.
    pub monitor: SpectralStates,
    pub weights: ClassWeights,
    pub step: u64,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig, dataset: &Dataset) -> Result<Self, TrainError> {
        cfg.validate()?;
        if dataset.num_classes() != cfg.arch.num_classes {
            return Err(TrainError::Config(format!(
                "dataset has {} classes, architecture expects {}",
                dataset.num_classes(),
                cfg.arch.num_classes
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(TRAIN_STREAM);
        let gen = GeneratorNet::new(cfg.arch, &mut rng);
        let mut disc = DiscriminatorNet::new(cfg.arch, &mut rng);
        if cfg.d_spectral_norm {
            disc = disc.with_spectral_norm(cfg.seed ^ 0xd15c);
        }
        let weights = effective_number_weights(&dataset.class_counts(), cfg.reg.alpha)?;
        Ok(Self {
            adam_g: AdamState::for_params(&gen.params()),
            adam_d: AdamState::for_params(&disc.params()),
            gen_ema: gen.clone(),
            gen,
            disc,
            lecam: LeCamState::new(cfg.lecam.lambda_lc, cfg.lecam.decay),
            spectral: SpectralStates::new(cfg.seed ^ 0x5ec7),
            monitor: SpectralStates::new(cfg.seed ^ 0x3017),
            weights,
            step: 0,
            rng,
        })
    }
}

/// Losses of one generator step (the discriminator entries are from the
/// last of its `n_dis` updates). Spectral columns are indexed
/// `layer * K + class` and are filled only on logged steps.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    /// Class conditioning the generator batch.
    pub gen_class: usize,
    pub l_d: f64,
    pub r_lc: f64,
    pub l_g: f64,
    /// Additive spectral penalty (gSR or gSRIP); zero otherwise.
    pub l_gsr: f64,
    pub g_total: f64,
    pub sigma_gamma: Vec<f64>,
    pub sigma_beta: Vec<f64>,
}

/// EMA-generator evaluation at one step. Per-layer vectors are indexed
/// `layer * K + class`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricSnapshot {
    pub step: u64,
    pub classes: Vec<ClassMetrics>,
    pub sigma_gamma: Vec<f64>,
    pub sigma_beta: Vec<f64>,
    pub diagonality: Vec<f64>,
}

impl MetricSnapshot {
    pub fn sigma_gamma_at(&self, layer: usize, class: usize) -> f64 {
        self.sigma_gamma[layer * self.classes.len() + class]
    }

    pub fn diagonality_at(&self, layer: usize, class: usize) -> f64 {
        self.diagonality[layer * self.classes.len() + class]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AbortRecord {
    pub step: u64,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct RunLog {
    pub config: TrainConfig,
    pub records: Vec<StepRecord>,
    pub snapshots: Vec<MetricSnapshot>,
    pub abort: Option<AbortRecord>,
    /// EMA-generator samples from the last snapshot, one list per class.
    pub final_samples: Vec<Vec<[f64; 2]>>,
    pub final_state: TrainState,
}

impl RunLog {
    pub fn completed(&self) -> bool {
        self.abort.is_none()
    }

    pub fn last_snapshot(&self) -> Option<&MetricSnapshot> {
        self.snapshots.last()
    }

    /// Detector input for `class`: RMS sample std and `σ_max(Γ^layer_class)`
    /// of the EMA generator at every snapshot.
    pub fn collapse_series(&self, class: usize, layer: usize) -> Vec<CollapseObservation> {
        self.snapshots
            .iter()
            .map(|s| CollapseObservation {
                step: s.step,
                sample_std: metrics::rms_std(s.classes[class].sample_std),
                sigma_gamma: s.sigma_gamma_at(layer, class),
            })
            .collect()
    }
}

fn real_batch(rng: &mut ChaCha8Rng, dataset: &Dataset, y: usize, b: usize) -> Result<Tensor, TrainError> {
    let idx = dataset.class_indices(y);
    if idx.is_empty() {
        return Err(TrainError::Config(format!("class {y} has no training samples")));
    }
    let mut data = Vec::with_capacity(2 * b);
    for _ in 0..b {
        let p = dataset.point(idx[rng.random_range(0..idx.len())]);
        data.extend_from_slice(&p);
    }
    Ok(Tensor::new(&[b, 2], data)?)
}

fn gradients_for(g: &Graph, loss: Var, vars: &[Var]) -> Result<Vec<Tensor>, TrainError> {
    let grads = g.backward(loss)?;
    Ok(vars
        .iter()
        .map(|&v| grads.get_or_zeros(v, g.shape(v)))
        .collect())
}

fn check_finite(x: f64, what: &str) -> Result<f64, TrainError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(TrainError::NonFinite {
            step: 0,
            detail: format!("{what} = {x}"),
        })
    }
}

struct DiscOutcome {
    l_d: f64,
    r_lc: f64,
}

fn discriminator_update(
    state: &mut TrainState,
    cfg: &TrainConfig,
    dataset: &Dataset,
    gain_norm: Option<&[Vec<GainNormalization>]>,
) -> Result<DiscOutcome, TrainError> {
    let b = cfg.batch_size;
    // class drawn with the empirical (long-tailed) frequency
    let y = dataset.label(state.rng.random_range(0..dataset.len()));
    let real = real_batch(&mut state.rng, dataset, y, b)?;
    let z = gaussian_batch(&mut state.rng, b, cfg.arch.latent_dim);
    let norm = gain_norm.map(|n| [n[0][y].clone(), n[1][y].clone()]);
    let fake = state.gen.sample(&z, y, BnMode::Batch, norm.as_ref())?;

    let sn = state.disc.advance_spectral_norm();
    let mut g = Graph::new();
    let dv = state.disc.bind(&mut g, true);
    let xr = g.constant(real);
    let xf = g.constant(fake);
    let d_real = state.disc.forward(&mut g, &dv, xr, y, sn.as_deref())?;
    let d_fake = state.disc.forward(&mut g, &dv, xf, y, sn.as_deref())?;
    let hinge = regularizers::hinge_d_loss(&mut g, d_real, d_fake)?;
    let (loss, r_lc) = if cfg.lecam.enabled {
        let lc = regularizers::lecam_loss(&mut g, d_real, d_fake, &state.lecam)?;
        let weighted = g.scale(lc, cfg.lecam.lambda_lc)?;
        (g.add(hinge, weighted)?, g.value(lc).item())
    } else {
        (hinge, 0.0)
    };
    let l_d = check_finite(g.value(hinge).item(), "discriminator loss")?;
    check_finite(g.value(loss).item(), "discriminator objective")?;
    let grads = gradients_for(&g, loss, &dv.all())?;
    if cfg.lecam.enabled {
        let mr = g.value(d_real).data().iter().sum::<f64>() / b as f64;
        let mf = g.value(d_fake).data().iter().sum::<f64>() / b as f64;
        regularizers::lecam_update(&mut state.lecam, mr, mf);
    }
    let mut params = state.disc.params_mut();
    optimizer_step(&mut params, &grads, &mut state.adam_d, &cfg.adam_d)?;
    Ok(DiscOutcome { l_d, r_lc })
}

struct GenOutcome {
    class: usize,
    l_g: f64,
    l_gsr: f64,
    g_total: f64,
}

fn generator_update(
    state: &mut TrainState,
    cfg: &TrainConfig,
    gain_norm: Option<&[Vec<GainNormalization>]>,
) -> Result<GenOutcome, TrainError> {
    let b = cfg.batch_size;
    let k = cfg.arch.num_classes;
    let y = state.rng.random_range(0..k);
    let z = gaussian_batch(&mut state.rng, b, cfg.arch.latent_dim);
    let sn = state.disc.advance_spectral_norm();

    let mut g = Graph::new();
    let gv = state.gen.bind(&mut g, true);
    let dv = state.disc.bind(&mut g, false);
    let zv = g.constant(z);
    let norm = gain_norm.map(|n| [n[0][y].clone(), n[1][y].clone()]);
    let out = state
        .gen
        .forward(&mut g, &gv, zv, y, BnMode::Batch, norm.as_ref())?;
    let d_fake = state.disc.forward(&mut g, &dv, out.points, y, sn.as_deref())?;
    let adv = regularizers::hinge_g_loss(&mut g, d_fake)?;

    let penalty = match cfg.reg.variant {
        Variant::Gsr => Some(
            regularizers::gsr_loss(
                &mut g,
                &state.gen,
                &gv,
                &state.weights,
                &cfg.reg,
                &mut state.spectral,
            )?
            .0,
        ),
        Variant::Gsrip => Some(regularizers::gsrip_loss(
            &mut g,
            &state.gen,
            &gv,
            &state.weights,
            &cfg.reg,
            &mut state.spectral,
        )?),
        Variant::None | Variant::Gsn => None,
    };
    let (total, l_gsr) = match penalty {
        Some(p) => {
            let weighted = g.scale(p, cfg.reg.lambda_gsr)?;
            (g.add(adv, weighted)?, g.value(p).item())
        }
        None => (adv, 0.0),
    };
    let l_g = check_finite(g.value(adv).item(), "generator loss")?;
    let g_total = check_finite(g.value(total).item(), "generator objective")?;
    let grads = gradients_for(&g, total, &gv.all())?;
    state
        .gen
        .update_running_stats(y, &out.stats, RUNNING_STATS_DECAY);
    let mut params = state.gen.params_mut();
    optimizer_step(&mut params, &grads, &mut state.adam_g, &cfg.adam_g)?;
    Ok(GenOutcome {
        class: y,
        l_g,
        l_gsr,
        g_total,
    })
}

fn update_ema(state: &mut TrainState, cfg: &TrainConfig) {
    if state.step < cfg.ema_start {
        state.gen_ema = state.gen.clone();
        return;
    }
    let decay = cfg.ema_decay;
    let live: Vec<Tensor> = state.gen.params().into_iter().cloned().collect();
    for (s, l) in state.gen_ema.params_mut().into_iter().zip(&live) {
        for (a, &b) in s.data_mut().iter_mut().zip(l.data()) {
            *a = decay * *a + (1.0 - decay) * b;
        }
    }
}

/// One generator step preceded by `n_dis` discriminator steps.
pub fn train_step(state: &mut TrainState, cfg: &TrainConfig, dataset: &Dataset) -> Result<StepRecord, TrainError> {
    let step = state.step + 1;
    let run = |state: &mut TrainState| -> Result<StepRecord, TrainError> {
        // gSN divides gains by σ_max(Γ); one reading per generator step
        // serves the discriminator batches and the generator batch.
        let gain_norm = if cfg.reg.variant == Variant::Gsn {
            let readings = regularizers::read_spectra(&state.gen, &cfg.reg, &mut state.spectral)?;
            Some(regularizers::gain_normalizations(&readings, cfg.arch.num_classes))
        } else {
            None
        };
        let mut last = DiscOutcome { l_d: 0.0, r_lc: 0.0 };
        for _ in 0..cfg.n_dis {
            last = discriminator_update(state, cfg, dataset, gain_norm.as_deref())?;
        }
        let gen = generator_update(state, cfg, gain_norm.as_deref())?;
        state.step = step;
        update_ema(state, cfg);
        Ok(StepRecord {
            step,
            gen_class: gen.class,
            l_d: last.l_d,
            r_lc: last.r_lc,
            l_g: gen.l_g,
            l_gsr: gen.l_gsr,
            g_total: gen.g_total,
            sigma_gamma: Vec::new(),
            sigma_beta: Vec::new(),
        })
    };
    run(state).map_err(|e| e.at_step(step))
}

fn layer_class_vectors(readings: &SpectralReadings, k: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gam = Vec::with_capacity(2 * k);
    let mut bet = Vec::with_capacity(2 * k);
    for l in 0..2 {
        for y in 0..k {
            gam.push(readings.sigma(l, y, ParamKind::Gain));
            bet.push(readings.sigma(l, y, ParamKind::Bias));
        }
    }
    (gam, bet)
}

/// Warm-started `σ_max` of every live `Γ^l_y` and `B^l_y`, from the
/// monitoring states.
pub fn monitor_spectra(state: &mut TrainState, cfg: &TrainConfig) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    let readings = regularizers::read_spectra(&state.gen, &cfg.reg, &mut state.monitor)?;
    Ok(layer_class_vectors(&readings, cfg.arch.num_classes))
}

/// Gain normalizations from fully converged singular vectors, for
/// evaluating a gSN generator outside the training loop.
pub fn converged_gain_normalizations(
    net: &GeneratorNet,
    n_g: usize,
) -> Result<Vec<Vec<GainNormalization>>, TrainError> {
    let mut out = Vec::new();
    for layer in net.cbn_layers() {
        let mut per_class = Vec::new();
        for y in 0..layer.num_classes() {
            let m = spectral::group(layer.gamma_row(y), n_g).map_err(RegError::from)?;
            let est = spectral::sigma_max_converged(&m);
            per_class.push(GainNormalization { n_g, u: est.u, v: est.v });
        }
        out.push(per_class);
    }
    Ok(out)
}

/// Samples `per_class` points per class from `net` after recomputing its
/// running statistics. Deterministic in `seed`.
pub fn sample_classes(
    net: &GeneratorNet,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<Vec<[f64; 2]>>, TrainError> {
    let mut net = net.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SNAPSHOT_STREAM);
    let norm = if cfg.reg.variant == Variant::Gsn {
        Some(converged_gain_normalizations(&net, cfg.reg.n_g)?)
    } else {
        None
    };
    net.refresh_running_stats(&mut rng, cfg.standing_batch, norm.as_deref())?;
    let mut out = Vec::with_capacity(cfg.arch.num_classes);
    for y in 0..cfg.arch.num_classes {
        let z = gaussian_batch(&mut rng, cfg.eval_per_class, cfg.arch.latent_dim);
        let n = norm.as_ref().map(|n| [n[0][y].clone(), n[1][y].clone()]);
        let pts = net.sample(&z, y, BnMode::Running, n.as_ref())?;
        out.push(pts.data().chunks(2).map(|c| [c[0], c[1]]).collect());
    }
    Ok(out)
}

/// Evaluates the EMA generator: per-class metrics, converged `σ_max` of
/// every table and grouped-covariance diagonality of every `Γ^l_y`.
pub fn snapshot(
    state: &TrainState,
    cfg: &TrainConfig,
    refs: &[ClassDistribution],
) -> Result<(MetricSnapshot, Vec<Vec<[f64; 2]>>), TrainError> {
    let samples = sample_classes(&state.gen_ema, cfg, cfg.seed)?;
    let mut classes = Vec::with_capacity(refs.len());
    for (pts, r) in samples.iter().zip(refs) {
        classes.push(metrics::class_metrics(pts, r, cfg.coverage_radius)?);
    }
    let mut sigma_gamma = Vec::new();
    let mut sigma_beta = Vec::new();
    let mut diagonality = Vec::new();
    for (l, layer) in state.gen_ema.cbn_layers().iter().enumerate() {
        for y in 0..layer.num_classes() {
            let gm = spectral::group(layer.gamma_row(y), cfg.reg.n_g).map_err(RegError::from)?;
            let bm = spectral::group(layer.beta_row(y), cfg.reg.n_g).map_err(RegError::from)?;
            sigma_gamma.push(spectral::sigma_max_converged(&gm).sigma);
            sigma_beta.push(spectral::sigma_max_converged(&bm).sigma);
            diagonality.push(metrics::grouped_covariance(layer.gamma_row(y), cfg.reg.n_g, y, l)?.diagonality);
        }
    }
    Ok((
        MetricSnapshot {
            step: state.step,
            classes,
            sigma_gamma,
            sigma_beta,
            diagonality,
        },
        samples,
    ))
}

/// Runs `cfg.steps` generator steps and returns the complete log. `hook`
/// sees the state after every generator step (used for checkpointing).
pub fn run_training_with(
    cfg: &TrainConfig,
    dataset: &Dataset,
    refs: &[ClassDistribution],
    hook: &mut dyn FnMut(&TrainState),
) -> Result<RunLog, TrainError> {
    if refs.len() != cfg.arch.num_classes {
        return Err(TrainError::Config(format!(
            "{} reference distributions for {} classes",
            refs.len(),
            cfg.arch.num_classes
        )));
    }
    let mut state = TrainState::new(cfg, dataset)?;
    let mut records = Vec::new();
    let mut snapshots = Vec::new();
    let (snap, mut final_samples) = snapshot(&state, cfg, refs)?;
    snapshots.push(snap);
    let mut abort = None;

    while state.step < cfg.steps {
        let mut rec = match train_step(&mut state, cfg, dataset) {
            Ok(r) => r,
            Err(e @ TrainError::NonFinite { .. }) => {
                abort = Some(AbortRecord {
                    step: state.step + 1,
                    message: e.to_string(),
                });
                break;
            }
            Err(e) => return Err(e),
        };
        let s = state.step;
        if s % cfg.log_interval == 0 || s == cfg.steps {
            let (gam, bet) = monitor_spectra(&mut state, cfg)?;
            rec.sigma_gamma = gam;
            rec.sigma_beta = bet;
            records.push(rec);
        }
        if s % cfg.eval_interval == 0 || s == cfg.steps {
            let (snap, samples) = snapshot(&state, cfg, refs)?;
            snapshots.push(snap);
            final_samples = samples;
        }
        hook(&state);
    }
    Ok(RunLog {
        config: cfg.clone(),
        records,
        snapshots,
        abort,
        final_samples,
        final_state: state,
    })
}

pub fn run_training(cfg: &TrainConfig, dataset: &Dataset, refs: &[ClassDistribution]) -> Result<RunLog, TrainError> {
    run_training_with(cfg, dataset, refs, &mut |_| {})
}

fn write_meta<W: Write>(w: &mut W, meta: &[(String, String)]) -> io::Result<()> {
    for (k, v) in meta {
        writeln!(w, "# {k} = {v}")?;
    }
    Ok(())
}

/// Step-record CSV: a `#` metadata block, a header, one row per record.
pub fn write_runlog_csv<W: Write>(mut w: W, log: &RunLog, meta: &[(String, String)]) -> io::Result<()> {
    write_meta(&mut w, meta)?;
    let k = log.config.arch.num_classes;
    let mut header = vec!["step", "gen_class", "l_d", "r_lc", "l_g", "l_gsr", "g_total"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    for kind in ["gamma", "beta"] {
        for l in 1..=2 {
            for y in 0..k {
                header.push(format!("sigma_{kind}_l{l}_c{y}"));
            }
        }
    }
    writeln!(w, "{}", header.join(","))?;
    for r in &log.records {
        let mut row = vec![
            r.step.to_string(),
            r.gen_class.to_string(),
            r.l_d.to_string(),
            r.r_lc.to_string(),
            r.l_g.to_string(),
            r.l_gsr.to_string(),
            r.g_total.to_string(),
        ];
        row.extend(r.sigma_gamma.iter().chain(&r.sigma_beta).map(|x| x.to_string()));
        writeln!(w, "{}", row.join(","))?;
    }
    if let Some(a) = &log.abort {
        writeln!(w, "# aborted at step {}: {}", a.step, a.message)?;
    }
    Ok(())
}

pub const METRICS_COLUMNS: [&str; 12] = [
    "step",
    "class",
    "frechet",
    "coverage",
    "std_x",
    "std_y",
    "sigma_gamma_l1",
    "sigma_gamma_l2",
    "sigma_beta_l1",
    "sigma_beta_l2",
    "diagonality_l1",
    "diagonality_l2",
];

/// Snapshot CSV: one row per (snapshot, class).
pub fn write_metrics_csv<W: Write>(mut w: W, log: &RunLog, meta: &[(String, String)]) -> io::Result<()> {
    write_meta(&mut w, meta)?;
    writeln!(w, "{}", METRICS_COLUMNS.join(","))?;
    let k = log.config.arch.num_classes;
    for s in &log.snapshots {
        for c in &s.classes {
            let y = c.class;
            let row = [
                s.step.to_string(),
                y.to_string(),
                c.frechet.to_string(),
                c.coverage.to_string(),
                c.sample_std[0].to_string(),
                c.sample_std[1].to_string(),
                s.sigma_gamma[y].to_string(),
                s.sigma_gamma[k + y].to_string(),
                s.sigma_beta[y].to_string(),
                s.sigma_beta[k + y].to_string(),
                s.diagonality[y].to_string(),
                s.diagonality[k + y].to_string(),
            ];
            writeln!(w, "{}", row.join(","))?;
        }
    }
    Ok(())
}
