//! Generator-side spectral penalties on grouped cBN tables, the LeCam
//! discriminator regularizer and hinge adversarial losses.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::condgen::{GainNormalization, GeneratorNet, GeneratorVars};
use crate::ndcore::{Graph, NdError, Tensor, Var};
use crate::spectral::{self, PowerIterState, SpectralError, SpectralEstimate};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegError {
    #[error("class {class} has zero samples")]
    ZeroCount { class: usize },
    #[error("effective-number alpha must lie in (0, 1), got {0}")]
    Alpha(f64),
    #[error("{0} class weights for {1} classes")]
    WeightCount(usize, usize),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Nd(#[from] NdError),
}

/// Per-class penalty weights `λ_y = (1 − α) / (1 − α^{n_y})`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassWeights {
    pub lambda: Vec<f64>,
    pub alpha: f64,
}

impl ClassWeights {
    pub fn uniform(num_classes: usize) -> Self {
        Self {
            lambda: vec![1.0; num_classes],
            alpha: f64::NAN,
        }
    }
}

pub fn effective_number_weights(counts: &[usize], alpha: f64) -> Result<ClassWeights, RegError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(RegError::Alpha(alpha));
    }
    let lambda = counts
        .iter()
        .enumerate()
        .map(|(class, &n)| {
            if n == 0 {
                Err(RegError::ZeroCount { class })
            } else {
                Ok((1.0 - alpha) / (1.0 - alpha.powf(n as f64)))
            }
        })
        .collect::<Result<_, _>>()?;
    Ok(ClassWeights { lambda, alpha })
}

/// Which cBN-parameter regularizer a run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    None,
    /// Additive `λ_y (σ²(Γ) + σ²(B))` penalty.
    Gsr,
    /// Gains divided by `σ_max(Γ)` in the forward pass.
    Gsn,
    /// Additive `λ_y (σ²(ΓᵀΓ − I) + σ²(BᵀB − I))` penalty.
    Gsrip,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::None => "none",
            Variant::Gsr => "gsr",
            Variant::Gsn => "gsn",
            Variant::Gsrip => "gsrip",
        })
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Variant::None),
            "gsr" => Ok(Variant::Gsr),
            "gsn" => Ok(Variant::Gsn),
            "gsrip" => Ok(Variant::Gsrip),
            other => Err(format!("unknown variant '{other}' (none, gsr, gsn, gsrip)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegConfig {
    pub lambda_gsr: f64,
    pub alpha: f64,
    pub n_g: usize,
    pub power_iters: usize,
    pub variant: Variant,
}

impl Default for RegConfig {
    fn default() -> Self {
        Self {
            lambda_gsr: 0.5,
            alpha: 0.99,
            n_g: 8,
            power_iters: spectral::DEFAULT_POWER_ITERS,
            variant: Variant::Gsr,
        }
    }
}

impl RegConfig {
    pub fn none() -> Self {
        Self {
            variant: Variant::None,
            lambda_gsr: 0.0,
            ..Self::default()
        }
    }

    /// True when the variant adds a term to the generator loss.
    pub fn is_additive(&self) -> bool {
        matches!(self.variant, Variant::Gsr | Variant::Gsrip) && self.lambda_gsr > 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamKind {
    Gain,
    Bias,
}

impl ParamKind {
    pub fn name(self) -> &'static str {
        match self {
            ParamKind::Gain => "gamma",
            ParamKind::Bias => "beta",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct StateKey {
    layer: usize,
    class: usize,
    kind: ParamKind,
    gram: bool,
}

/// Warm-start vectors for every `(layer, class, table, matrix)` estimate.
/// Each is seeded deterministically from its key and persists across steps.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralStates {
    seed: u64,
    states: BTreeMap<StateKey, PowerIterState>,
}

impl SpectralStates {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            states: BTreeMap::new(),
        }
    }

    fn get(&mut self, key: StateKey, n_c: usize) -> &mut PowerIterState {
        let seed = self
            .seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add((key.layer as u64) << 40)
            .wrapping_add((key.class as u64) << 20)
            .wrapping_add((key.kind as u64) << 2)
            .wrapping_add(key.gram as u64);
        let st = self
            .states
            .entry(key)
            .or_insert_with(|| PowerIterState::seeded(n_c, seed));
        if st.v().len() != n_c {
            *st = PowerIterState::seeded(n_c, seed);
        }
        st
    }
}

/// Spectral estimate of one grouped table row.
#[derive(Clone, Debug, PartialEq)]
pub struct Reading {
    pub layer: usize,
    pub class: usize,
    pub kind: ParamKind,
    pub estimate: SpectralEstimate,
}

/// `σ_max` estimates of `Γ^l_y` and `B^l_y` for every layer and class.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralReadings {
    pub n_g: usize,
    pub entries: Vec<Reading>,
}

impl SpectralReadings {
    pub fn sigma(&self, layer: usize, class: usize, kind: ParamKind) -> f64 {
        self.find(layer, class, kind).estimate.sigma
    }

    pub fn find(&self, layer: usize, class: usize, kind: ParamKind) -> &Reading {
        self.entries
            .iter()
            .find(|r| r.layer == layer && r.class == class && r.kind == kind)
            .expect("reading exists for every layer, class and kind")
    }
}

/// Advances the warm-started power iterations of every `Γ^l_y` and `B^l_y`
/// by `cfg.power_iters` steps.
pub fn read_spectra(
    net: &GeneratorNet,
    cfg: &RegConfig,
    states: &mut SpectralStates,
) -> Result<SpectralReadings, RegError> {
    let mut entries = Vec::new();
    for (l, layer) in net.cbn_layers().iter().enumerate() {
        for y in 0..layer.num_classes() {
            for (kind, row) in [
                (ParamKind::Gain, layer.gamma_row(y)),
                (ParamKind::Bias, layer.beta_row(y)),
            ] {
                let m = spectral::group(row, cfg.n_g)?;
                let key = StateKey {
                    layer: l,
                    class: y,
                    kind,
                    gram: false,
                };
                let st = states.get(key, m.n_c());
                let estimate = spectral::sigma_max_power(&m, cfg.power_iters, st)?;
                entries.push(Reading {
                    layer: l,
                    class: y,
                    kind,
                    estimate,
                });
            }
        }
    }
    Ok(SpectralReadings {
        n_g: cfg.n_g,
        entries,
    })
}

fn table_var(vars: &GeneratorVars, layer: usize, kind: ParamKind) -> Var {
    let cbn = vars.cbn(layer);
    match kind {
        ParamKind::Gain => cbn.gamma,
        ParamKind::Bias => cbn.beta,
    }
}

fn check_weights(weights: &ClassWeights, num_classes: usize) -> Result<(), RegError> {
    if weights.lambda.len() == num_classes {
        Ok(())
    } else {
        Err(RegError::WeightCount(weights.lambda.len(), num_classes))
    }
}

/// `Σ_l Σ_y λ_y (σ²(Γ^l_y) + σ²(B^l_y))` as a graph node. Each `σ` enters as
/// `uᵀ Γ v` with the readings' singular vectors held constant, so the
/// gradient with respect to row `y` is `λ_y · 2σ · ungroup(u vᵀ)`.
pub fn gsr_penalty(
    g: &mut Graph,
    vars: &GeneratorVars,
    readings: &SpectralReadings,
    weights: &ClassWeights,
) -> Result<Var, RegError> {
    let mut total: Option<Var> = None;
    for r in &readings.entries {
        let lambda = weights.lambda[r.class];
        let row = g.select_row(table_var(vars, r.layer, r.kind), r.class)?;
        let d = g.shape(row)[0];
        let m = g.reshape(row, &[readings.n_g, d / readings.n_g])?;
        let s = g.bilinear(m, &r.estimate.u, &r.estimate.v)?;
        let s2 = g.square(s)?;
        let term = g.scale(s2, lambda)?;
        total = Some(match total {
            None => term,
            Some(t) => g.add(t, term)?,
        });
    }
    match total {
        Some(t) => Ok(t),
        None => Ok(g.constant(Tensor::scalar(0.0)?)),
    }
}

/// The gSR loss: refreshes the spectral readings, then builds
/// [`gsr_penalty`].
pub fn gsr_loss(
    g: &mut Graph,
    net: &GeneratorNet,
    vars: &GeneratorVars,
    weights: &ClassWeights,
    cfg: &RegConfig,
    states: &mut SpectralStates,
) -> Result<(Var, SpectralReadings), RegError> {
    check_weights(weights, net.num_classes())?;
    let readings = read_spectra(net, cfg, states)?;
    let loss = gsr_penalty(g, vars, &readings, weights)?;
    Ok((loss, readings))
}

/// `Σ_l Σ_y λ_y (σ²(ΓᵀΓ − I) + σ²(BᵀB − I))`, with its own warm-started
/// power iterations on the `n_c × n_c` matrices.
pub fn gsrip_loss(
    g: &mut Graph,
    net: &GeneratorNet,
    vars: &GeneratorVars,
    weights: &ClassWeights,
    cfg: &RegConfig,
    states: &mut SpectralStates,
) -> Result<Var, RegError> {
    check_weights(weights, net.num_classes())?;
    let mut total: Option<Var> = None;
    for (l, layer) in net.cbn_layers().iter().enumerate() {
        for y in 0..layer.num_classes() {
            for (kind, row) in [
                (ParamKind::Gain, layer.gamma_row(y)),
                (ParamKind::Bias, layer.beta_row(y)),
            ] {
                let m = spectral::group(row, cfg.n_g)?;
                let n_c = m.n_c();
                let key = StateKey {
                    layer: l,
                    class: y,
                    kind,
                    gram: true,
                };
                let est = spectral::gsrip_power(&m, cfg.power_iters, states.get(key, n_c))?;

                let row_v = g.select_row(table_var(vars, l, kind), y)?;
                let mv = g.reshape(row_v, &[cfg.n_g, n_c])?;
                let mt = g.transpose(mv)?;
                let gram = g.matmul(mt, mv)?;
                let eye = g.constant(Tensor::identity(n_c));
                let a = g.sub(gram, eye)?;
                let s = g.bilinear(a, &est.u, &est.v)?;
                let s2 = g.square(s)?;
                let term = g.scale(s2, weights.lambda[y])?;
                total = Some(match total {
                    None => term,
                    Some(t) => g.add(t, term)?,
                });
            }
        }
    }
    match total {
        Some(t) => Ok(t),
        None => Ok(g.constant(Tensor::scalar(0.0)?)),
    }
}

/// Singular vectors of every `Γ^l_y` for dividing gains by `σ_max(Γ^l_y)`
/// in the forward pass, indexed `[layer][class]`.
pub fn gain_normalizations(readings: &SpectralReadings, num_classes: usize) -> Vec<Vec<GainNormalization>> {
    (0..2)
        .map(|l| {
            (0..num_classes)
                .map(|y| {
                    let r = readings.find(l, y, ParamKind::Gain);
                    GainNormalization {
                        n_g: readings.n_g,
                        u: r.estimate.u.clone(),
                        v: r.estimate.v.clone(),
                    }
                })
                .collect()
        })
        .collect()
}

/// LeCam anchors: moving averages of real and fake discriminator scores.
#[derive(Clone, Debug, PartialEq)]
pub struct LeCamState {
    pub alpha_real: f64,
    pub alpha_fake: f64,
    pub decay: f64,
    pub lambda_lc: f64,
}

impl LeCamState {
    pub fn new(lambda_lc: f64, decay: f64) -> Self {
        Self {
            alpha_real: 0.0,
            alpha_fake: 0.0,
            decay,
            lambda_lc,
        }
    }
}

/// `mean((D(x) − α_F)²) + mean((D(G(z)) − α_R)²)`; unweighted.
pub fn lecam_loss(
    g: &mut Graph,
    d_real: Var,
    d_fake: Var,
    state: &LeCamState,
) -> Result<Var, RegError> {
    let af = g.constant(Tensor::scalar(state.alpha_fake)?);
    let ar = g.constant(Tensor::scalar(state.alpha_real)?);
    let dr = g.sub(d_real, af)?;
    let df = g.sub(d_fake, ar)?;
    let sr = g.square(dr)?;
    let sf = g.square(df)?;
    let mr = g.mean(sr)?;
    let mf = g.mean(sf)?;
    Ok(g.add(mr, mf)?)
}

pub fn lecam_update(state: &mut LeCamState, mean_real: f64, mean_fake: f64) {
    state.alpha_real = state.decay * state.alpha_real + (1.0 - state.decay) * mean_real;
    state.alpha_fake = state.decay * state.alpha_fake + (1.0 - state.decay) * mean_fake;
}

/// `mean(max(0, 1 − D(x))) + mean(max(0, 1 + D(G(z))))`.
pub fn hinge_d_loss(g: &mut Graph, d_real: Var, d_fake: Var) -> Result<Var, RegError> {
    let neg = g.scale(d_real, -1.0)?;
    let r = g.add_scalar(neg, 1.0)?;
    let r = g.relu(r)?;
    let f = g.add_scalar(d_fake, 1.0)?;
    let f = g.relu(f)?;
    let mr = g.mean(r)?;
    let mf = g.mean(f)?;
    Ok(g.add(mr, mf)?)
}

/// `−mean(D(G(z)))`.
pub fn hinge_g_loss(g: &mut Graph, d_fake: Var) -> Result<Var, RegError> {
    let m = g.mean(d_fake)?;
    Ok(g.scale(m, -1.0)?)
}
