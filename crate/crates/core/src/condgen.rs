//! Class-conditional generator with conditional BatchNorm, and a projection
//! discriminator, both fully connected over 2-D points.
//!
//! Generator: `z → linear → cBN → leaky-relu → linear → cBN → leaky-relu →
//! linear(2)`. Discriminator: `x → linear → leaky-relu → linear → leaky-relu
//! = φ(x)`, score `ψ(φ(x)) + e_yᵀ φ(x)`.
//!
//! Every generator batch is conditioned on a single class, so batch
//! statistics never mix classes. Running statistics are therefore kept per
//! class as well.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use thiserror::Error;

use crate::ndcore::{Graph, NdError, Tensor, Var};
use crate::spectral::{self, GroupedMatrix, PowerIterState};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_EPSILON: f64 = 1e-5;
pub const RUNNING_STATS_DECAY: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("class label {label} out of range for {num_classes} classes")]
    Label { label: usize, num_classes: usize },
    #[error(transparent)]
    Nd(#[from] NdError),
}

fn check_label(label: usize, num_classes: usize) -> Result<(), NetError> {
    if label < num_classes {
        Ok(())
    } else {
        Err(NetError::Label { label, num_classes })
    }
}

/// Uniform `±1/√fan_in` initialization.
fn fan_in_uniform(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
    Tensor::from_parts(vec![fan_in, fan_out], data)
}

/// Standard-normal `rows × cols` batch.
pub fn gaussian_batch(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::from_parts(vec![rows, cols], data)
}

/// Conditional BatchNorm: per-class gain and bias tables over a shared
/// normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct CbnLayer {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub epsilon: f64,
    pub layer_index: usize,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

impl CbnLayer {
    pub fn new(num_classes: usize, width: usize, layer_index: usize) -> Self {
        Self {
            gamma: Tensor::filled(&[num_classes, width], 1.0),
            beta: Tensor::zeros(&[num_classes, width]),
            epsilon: BN_EPSILON,
            layer_index,
            running_mean: Tensor::zeros(&[num_classes, width]),
            running_var: Tensor::filled(&[num_classes, width], 1.0),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.gamma.rows()
    }

    pub fn width(&self) -> usize {
        self.gamma.cols()
    }

    pub fn gamma_row(&self, y: usize) -> &[f64] {
        self.gamma.row(y)
    }

    pub fn beta_row(&self, y: usize) -> &[f64] {
        self.beta.row(y)
    }

    fn update_running(&mut self, y: usize, mean: &[f64], var: &[f64], decay: f64) {
        let d = self.width();
        let rm = &mut self.running_mean.data_mut()[y * d..(y + 1) * d];
        for (r, m) in rm.iter_mut().zip(mean) {
            *r = decay * *r + (1.0 - decay) * m;
        }
        let rv = &mut self.running_var.data_mut()[y * d..(y + 1) * d];
        for (r, v) in rv.iter_mut().zip(var) {
            *r = decay * *r + (1.0 - decay) * v;
        }
    }

    fn set_running(&mut self, y: usize, mean: &[f64], var: &[f64]) {
        let d = self.width();
        self.running_mean.data_mut()[y * d..(y + 1) * d].copy_from_slice(mean);
        self.running_var.data_mut()[y * d..(y + 1) * d].copy_from_slice(var);
    }
}

/// Which statistics normalize a cBN input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Batch statistics (training).
    Batch,
    /// Per-class running statistics (evaluation).
    Running,
}

/// Graph handles for one cBN layer's tables.
#[derive(Clone, Copy, Debug)]
pub struct CbnVars {
    pub gamma: Var,
    pub beta: Var,
}

/// Detached singular vectors used to divide `γ_y` by `σ_max(Γ_y)` inside
/// the graph (group spectral normalization).
#[derive(Clone, Debug)]
pub struct GainNormalization {
    pub n_g: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Batch statistics observed by one cBN layer during a forward pass.
#[derive(Clone, Debug)]
pub struct ObservedStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// `γ_y ⊙ (x − μ)/√(σ² + ε) + β_y` for a batch that shares label `y`.
pub fn cbn_forward(
    g: &mut Graph,
    x: Var,
    y: usize,
    layer: &CbnLayer,
    vars: CbnVars,
    mode: BnMode,
    gain_norm: Option<&GainNormalization>,
) -> Result<(Var, Option<ObservedStats>), NetError> {
    check_label(y, layer.num_classes())?;
    let b = g.shape(x)[0];
    let (mean, var, observed) = match mode {
        BnMode::Batch => {
            let (m, v) = g.batch_stats(x)?;
            let obs = ObservedStats {
                mean: g.value(m).data().to_vec(),
                var: g.value(v).data().to_vec(),
            };
            (m, v, Some(obs))
        }
        BnMode::Running => {
            let m = g.constant(Tensor::vector(layer.running_mean.row(y).to_vec())?);
            let v = g.constant(Tensor::vector(layer.running_var.row(y).to_vec())?);
            (m, v, None)
        }
    };
    let mb = g.broadcast_rows(mean, b)?;
    let centered = g.sub(x, mb)?;
    let shifted = g.add_scalar(var, layer.epsilon)?;
    let inv_std = g.powf(shifted, -0.5)?;
    let inv_b = g.broadcast_rows(inv_std, b)?;
    let x_hat = g.mul(centered, inv_b)?;

    let mut gamma = g.select_row(vars.gamma, y)?;
    if let Some(norm) = gain_norm {
        let d = layer.width();
        let grouped = g.reshape(gamma, &[norm.n_g, d / norm.n_g])?;
        let sigma = g.bilinear(grouped, &norm.u, &norm.v)?;
        let inv = g.powf(sigma, -1.0)?;
        gamma = g.mul(gamma, inv)?;
    }
    let beta = g.select_row(vars.beta, y)?;
    let gb = g.broadcast_rows(gamma, b)?;
    let bb = g.broadcast_rows(beta, b)?;
    let scaled = g.mul(x_hat, gb)?;
    Ok((g.add(scaled, bb)?, observed))
}

/// Network shape shared by generator and discriminator constructors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Architecture {
    pub num_classes: usize,
    pub latent_dim: usize,
    pub hidden: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            num_classes: 8,
            latent_dim: 16,
            hidden: 64,
        }
    }
}

/// `G(z | y)`. Linear layers feeding a cBN carry no bias (the batch mean
/// removes it).
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorNet {
    pub latent_dim: usize,
    pub w1: Tensor,
    pub cbn1: CbnLayer,
    pub w2: Tensor,
    pub cbn2: CbnLayer,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

/// Graph handles for every generator parameter.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorVars {
    pub w1: Var,
    pub cbn1: CbnVars,
    pub w2: Var,
    pub cbn2: CbnVars,
    pub w_out: Var,
    pub b_out: Var,
}

impl GeneratorVars {
    pub fn all(&self) -> Vec<Var> {
        vec![
            self.w1,
            self.cbn1.gamma,
            self.cbn1.beta,
            self.w2,
            self.cbn2.gamma,
            self.cbn2.beta,
            self.w_out,
            self.b_out,
        ]
    }

    pub fn cbn(&self, layer: usize) -> CbnVars {
        match layer {
            0 => self.cbn1,
            _ => self.cbn2,
        }
    }
}

/// Output of a generator forward pass.
pub struct GeneratorOutput {
    pub points: Var,
    /// One entry per cBN layer in batch mode, empty otherwise.
    pub stats: Vec<ObservedStats>,
}

impl GeneratorNet {
    pub fn new(arch: Architecture, rng: &mut impl Rng) -> Self {
        let h = arch.hidden;
        Self {
            latent_dim: arch.latent_dim,
            w1: fan_in_uniform(rng, arch.latent_dim, h),
            cbn1: CbnLayer::new(arch.num_classes, h, 1),
            w2: fan_in_uniform(rng, h, h),
            cbn2: CbnLayer::new(arch.num_classes, h, 2),
            w_out: fan_in_uniform(rng, h, 2),
            b_out: Tensor::zeros(&[2]),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.cbn1.num_classes()
    }

    pub fn hidden(&self) -> usize {
        self.cbn1.width()
    }

    pub fn cbn_layers(&self) -> [&CbnLayer; 2] {
        [&self.cbn1, &self.cbn2]
    }

    pub fn cbn_layer_mut(&mut self, layer: usize) -> &mut CbnLayer {
        match layer {
            0 => &mut self.cbn1,
            _ => &mut self.cbn2,
        }
    }

    /// Trainable tensors in a fixed order matching [`GeneratorVars::all`]
    /// and [`GeneratorNet::param_names`].
    pub fn params(&self) -> Vec<&Tensor> {
        vec![
            &self.w1,
            &self.cbn1.gamma,
            &self.cbn1.beta,
            &self.w2,
            &self.cbn2.gamma,
            &self.cbn2.beta,
            &self.w_out,
            &self.b_out,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w1,
            &mut self.cbn1.gamma,
            &mut self.cbn1.beta,
            &mut self.w2,
            &mut self.cbn2.gamma,
            &mut self.cbn2.beta,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }

    pub fn param_names() -> [&'static str; 8] {
        [
            "gen.layer1.linear.weight",
            "gen.layer1.cbn.gamma",
            "gen.layer1.cbn.beta",
            "gen.layer2.linear.weight",
            "gen.layer2.cbn.gamma",
            "gen.layer2.cbn.beta",
            "gen.out.linear.weight",
            "gen.out.linear.bias",
        ]
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> GeneratorVars {
        let mut leaf = |t: &Tensor| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        GeneratorVars {
            w1: leaf(&self.w1),
            cbn1: CbnVars {
                gamma: leaf(&self.cbn1.gamma),
                beta: leaf(&self.cbn1.beta),
            },
            w2: leaf(&self.w2),
            cbn2: CbnVars {
                gamma: leaf(&self.cbn2.gamma),
                beta: leaf(&self.cbn2.beta),
            },
            w_out: leaf(&self.w_out),
            b_out: leaf(&self.b_out),
        }
    }

    /// `gain_norm`, when given, holds one entry per cBN layer.
    pub fn forward(
        &self,
        g: &mut Graph,
        vars: &GeneratorVars,
        z: Var,
        y: usize,
        mode: BnMode,
        gain_norm: Option<&[GainNormalization; 2]>,
    ) -> Result<GeneratorOutput, NetError> {
        check_label(y, self.num_classes())?;
        let mut stats = Vec::new();
        let mut h = z;
        for (l, (w, layer)) in [(vars.w1, &self.cbn1), (vars.w2, &self.cbn2)]
            .into_iter()
            .enumerate()
        {
            let pre = g.matmul(h, w)?;
            let norm = gain_norm.map(|n| &n[l]);
            let (bn, obs) = cbn_forward(g, pre, y, layer, vars.cbn(l), mode, norm)?;
            stats.extend(obs);
            h = g.leaky_relu(bn, LEAKY_SLOPE)?;
        }
        let out = g.matmul(h, vars.w_out)?;
        let b = g.shape(out)[0];
        let bias = g.broadcast_rows(vars.b_out, b)?;
        Ok(GeneratorOutput {
            points: g.add(out, bias)?,
            stats,
        })
    }

    /// Inference-only forward on a standalone graph.
    pub fn sample(
        &self,
        z: &Tensor,
        y: usize,
        mode: BnMode,
        gain_norm: Option<&[GainNormalization; 2]>,
    ) -> Result<Tensor, NetError> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let zv = g.constant(z.clone());
        let out = self.forward(&mut g, &vars, zv, y, mode, gain_norm)?;
        Ok(g.value(out.points).clone())
    }

    /// Folds observed batch statistics into the running averages of class `y`.
    pub fn update_running_stats(&mut self, y: usize, stats: &[ObservedStats], decay: f64) {
        for (l, s) in stats.iter().enumerate() {
            self.cbn_layer_mut(l).update_running(y, &s.mean, &s.var, decay);
        }
    }

    /// Recomputes the running statistics of every class from one large
    /// batch per class ("standing" statistics).
    pub fn refresh_running_stats(
        &mut self,
        rng: &mut impl Rng,
        batch: usize,
        gain_norm: Option<&[Vec<GainNormalization>]>,
    ) -> Result<(), NetError> {
        for y in 0..self.num_classes() {
            let z = gaussian_batch(rng, batch, self.latent_dim);
            let mut g = Graph::new();
            let vars = self.bind(&mut g, false);
            let zv = g.constant(z);
            let norm: Option<[GainNormalization; 2]> =
                gain_norm.map(|per_layer| [per_layer[0][y].clone(), per_layer[1][y].clone()]);
            let out = self.forward(&mut g, &vars, zv, y, BnMode::Batch, norm.as_ref())?;
            for (l, s) in out.stats.iter().enumerate() {
                self.cbn_layer_mut(l).set_running(y, &s.mean, &s.var);
            }
        }
        Ok(())
    }
}

/// Optional weight spectral normalization for discriminator layers.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightNormStates {
    pub states: Vec<PowerIterState>,
}

/// `D(x | y) = ψ(φ(x)) + e_yᵀ φ(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorNet {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub w_head: Tensor,
    pub b_head: Tensor,
    pub class_embeddings: Tensor,
    pub spectral_norm: Option<WeightNormStates>,
}

#[derive(Clone, Copy, Debug)]
pub struct DiscriminatorVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
    pub w_head: Var,
    pub b_head: Var,
    pub class_embeddings: Var,
}

impl DiscriminatorVars {
    pub fn all(&self) -> Vec<Var> {
        vec![
            self.w1,
            self.b1,
            self.w2,
            self.b2,
            self.w_head,
            self.b_head,
            self.class_embeddings,
        ]
    }
}

impl DiscriminatorNet {
    pub fn new(arch: Architecture, rng: &mut impl Rng) -> Self {
        let h = arch.hidden;
        let emb_bound = 1.0 / (h as f64).sqrt();
        let emb = Uniform::new_inclusive(-emb_bound, emb_bound).expect("finite bound");
        Self {
            w1: fan_in_uniform(rng, 2, h),
            b1: Tensor::zeros(&[h]),
            w2: fan_in_uniform(rng, h, h),
            b2: Tensor::zeros(&[h]),
            w_head: fan_in_uniform(rng, h, 1),
            b_head: Tensor::zeros(&[1]),
            class_embeddings: Tensor::from_parts(
                vec![arch.num_classes, h],
                (0..arch.num_classes * h).map(|_| emb.sample(rng)).collect(),
            ),
            spectral_norm: None,
        }
    }

    /// Enables weight spectral normalization on the three linear maps.
    pub fn with_spectral_norm(mut self, seed: u64) -> Self {
        let states = [&self.w1, &self.w2, &self.w_head]
            .iter()
            .enumerate()
            .map(|(i, w)| PowerIterState::seeded(w.cols(), seed.wrapping_add(i as u64)))
            .collect();
        self.spectral_norm = Some(WeightNormStates { states });
        self
    }

    pub fn num_classes(&self) -> usize {
        self.class_embeddings.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.w2.cols()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        vec![
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.w_head,
            &self.b_head,
            &self.class_embeddings,
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w_head,
            &mut self.b_head,
            &mut self.class_embeddings,
        ]
    }

    pub fn param_names() -> [&'static str; 7] {
        [
            "disc.layer1.linear.weight",
            "disc.layer1.linear.bias",
            "disc.layer2.linear.weight",
            "disc.layer2.linear.bias",
            "disc.head.linear.weight",
            "disc.head.linear.bias",
            "disc.embedding",
        ]
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> DiscriminatorVars {
        let mut leaf = |t: &Tensor| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        DiscriminatorVars {
            w1: leaf(&self.w1),
            b1: leaf(&self.b1),
            w2: leaf(&self.w2),
            b2: leaf(&self.b2),
            w_head: leaf(&self.w_head),
            b_head: leaf(&self.b_head),
            class_embeddings: leaf(&self.class_embeddings),
        }
    }

    /// Advances the weight power iterations by one step and returns the
    /// detached `(u, v)` pairs, or `None` when normalization is off.
    pub fn advance_spectral_norm(&mut self) -> Option<Vec<(Vec<f64>, Vec<f64>)>> {
        let ws = [self.w1.clone(), self.w2.clone(), self.w_head.clone()];
        let sn = self.spectral_norm.as_mut()?;
        Some(
            ws.iter()
                .zip(sn.states.iter_mut())
                .map(|(w, st)| {
                    let m = GroupedMatrix::from_rows(w.rows(), w.cols(), w.data().to_vec());
                    let est = spectral::sigma_max_power(&m, 1, st).expect("state sized to weight");
                    (est.u, est.v)
                })
                .collect(),
        )
    }

    fn weight(
        &self,
        g: &mut Graph,
        w: Var,
        sn: Option<&(Vec<f64>, Vec<f64>)>,
    ) -> Result<Var, NetError> {
        match sn {
            None => Ok(w),
            Some((u, v)) => {
                let sigma = g.bilinear(w, u, v)?;
                let inv = g.powf(sigma, -1.0)?;
                Ok(g.mul(w, inv)?)
            }
        }
    }

    /// Scores for a `B×2` batch sharing label `y`; returns a length-`B` node.
    pub fn forward(
        &self,
        g: &mut Graph,
        vars: &DiscriminatorVars,
        x: Var,
        y: usize,
        sn: Option<&[(Vec<f64>, Vec<f64>)]>,
    ) -> Result<Var, NetError> {
        check_label(y, self.num_classes())?;
        let b = g.shape(x)[0];
        let w1 = self.weight(g, vars.w1, sn.map(|s| &s[0]))?;
        let w2 = self.weight(g, vars.w2, sn.map(|s| &s[1]))?;
        let wh = self.weight(g, vars.w_head, sn.map(|s| &s[2]))?;

        let mut h = x;
        for (w, bias) in [(w1, vars.b1), (w2, vars.b2)] {
            let lin = g.matmul(h, w)?;
            let bb = g.broadcast_rows(bias, b)?;
            let pre = g.add(lin, bb)?;
            h = g.leaky_relu(pre, LEAKY_SLOPE)?;
        }
        let head = g.matmul(h, wh)?;
        let head = g.reshape(head, &[b])?;
        let hb = g.broadcast_rows(vars.b_head, b)?;
        let hb = g.reshape(hb, &[b])?;
        let psi = g.add(head, hb)?;

        let e = g.select_row(vars.class_embeddings, y)?;
        let eb = g.broadcast_rows(e, b)?;
        let prod = g.mul(h, eb)?;
        let proj = g.sum_cols(prod)?;
        Ok(g.add(psi, proj)?)
    }

    pub fn score(&self, x: &Tensor, y: usize) -> Result<Tensor, NetError> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let sn = self.spectral_norm.as_ref().map(|s| {
            let ws = [&self.w1, &self.w2, &self.w_head];
            ws.iter()
                .zip(&s.states)
                .map(|(w, st)| {
                    let m = GroupedMatrix::from_rows(w.rows(), w.cols(), w.data().to_vec());
                    let mut st = st.clone();
                    let est = spectral::sigma_max_power(&m, 1, &mut st).expect("sized state");
                    (est.u, est.v)
                })
                .collect::<Vec<_>>()
        });
        let out = self.forward(&mut g, &vars, xv, y, sn.as_deref())?;
        Ok(g.value(out).clone())
    }
}
