mod common;

use common::{central_diff, normal_vec, rel_err};
use gsr_core::condgen::{Architecture, BnMode, DiscriminatorNet, GeneratorNet};
use gsr_core::ndcore::{Graph, Tensor};
use gsr_core::regularizers::{
    effective_number_weights, gsr_loss, gsrip_loss, hinge_g_loss, ClassWeights, ParamKind,
    RegConfig, SpectralStates,
};
use gsr_core::spectral::{self, oracle};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn arch() -> Architecture {
    Architecture { num_classes: 3, latent_dim: 4, hidden: 8 }
}

fn random_tables(net: &mut GeneratorNet, rng: &mut ChaCha8Rng) {
    for l in 0..2 {
        let layer = net.cbn_layer_mut(l);
        let n = layer.gamma.len();
        layer.gamma.data_mut().copy_from_slice(&normal_vec(rng, n, 1.0));
        layer.beta.data_mut().copy_from_slice(&normal_vec(rng, n, 1.0));
    }
}

fn tables_have_gap(net: &GeneratorNet, n_g: usize, gap: f64) -> bool {
    net.cbn_layers().iter().all(|layer| {
        (0..layer.num_classes()).all(|y| {
            [layer.gamma_row(y), layer.beta_row(y)]
                .iter()
                .all(|row| oracle::spectral_gap(&spectral::group(row, n_g).unwrap()) >= gap)
        })
    })
}

/// `Σ_l Σ_y λ_y (σ²(Γ) + σ²(B))` from the SVD oracle.
fn oracle_gsr(net: &GeneratorNet, n_g: usize, w: &ClassWeights) -> f64 {
    let mut total = 0.0;
    for layer in net.cbn_layers() {
        for y in 0..layer.num_classes() {
            for row in [layer.gamma_row(y), layer.beta_row(y)] {
                let s = oracle::sigma_max_svd_oracle(&spectral::group(row, n_g).unwrap());
                total += w.lambda[y] * s * s;
            }
        }
    }
    total
}

#[test]
fn gsr_gradient_matches_oracle_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let weights = effective_number_weights(&[500, 50, 5], 0.99).unwrap();
    let cfg = RegConfig { n_g: 2, power_iters: 500, ..RegConfig::default() };
    let mut points = 0;
    while points < 10 {
        let mut net = GeneratorNet::new(arch(), &mut rng);
        random_tables(&mut net, &mut rng);
        if !tables_have_gap(&net, cfg.n_g, 1.1) {
            continue;
        }
        let mut g = Graph::new();
        let vars = net.bind(&mut g, true);
        let mut states = SpectralStates::new(1);
        let (loss, _) = gsr_loss(&mut g, &net, &vars, &weights, &cfg, &mut states).unwrap();
        assert!((g.value(loss).item() - oracle_gsr(&net, cfg.n_g, &weights)).abs() < 1e-9);
        let grads = g.backward(loss).unwrap();
        for l in 0..2 {
            for kind in [ParamKind::Gain, ParamKind::Bias] {
                let var = match kind {
                    ParamKind::Gain => vars.cbn(l).gamma,
                    ParamKind::Bias => vars.cbn(l).beta,
                };
                let analytic = grads.get(var).unwrap().data().to_vec();
                let x0 = match kind {
                    ParamKind::Gain => net.cbn_layers()[l].gamma.data().to_vec(),
                    ParamKind::Bias => net.cbn_layers()[l].beta.data().to_vec(),
                };
                let numeric = central_diff(
                    &mut |x| {
                        let mut n2 = net.clone();
                        let layer = n2.cbn_layer_mut(l);
                        match kind {
                            ParamKind::Gain => layer.gamma.data_mut().copy_from_slice(x),
                            ParamKind::Bias => layer.beta.data_mut().copy_from_slice(x),
                        }
                        oracle_gsr(&n2, cfg.n_g, &weights)
                    },
                    &x0,
                    1e-5,
                );
                let e = rel_err(&analytic, &numeric);
                assert!(e < 1e-4, "layer {l} {}: {e}", kind.name());
            }
        }
        points += 1;
    }
}

#[test]
fn gsrip_gradient_matches_oracle_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let weights = ClassWeights::uniform(3);
    let cfg = RegConfig { n_g: 4, power_iters: 2000, ..RegConfig::default() };
    let mut net = GeneratorNet::new(arch(), &mut rng);
    random_tables(&mut net, &mut rng);
    let f = |net: &GeneratorNet| -> f64 {
        let mut total = 0.0;
        for layer in net.cbn_layers() {
            for y in 0..3 {
                for row in [layer.gamma_row(y), layer.beta_row(y)] {
                    total += oracle::gsrip_penalty_oracle(&spectral::group(row, cfg.n_g).unwrap());
                }
            }
        }
        total
    };
    let mut g = Graph::new();
    let vars = net.bind(&mut g, true);
    let loss = gsrip_loss(&mut g, &net, &vars, &weights, &cfg, &mut SpectralStates::new(3)).unwrap();
    assert!((g.value(loss).item() - f(&net)).abs() < 1e-8 * f(&net));
    let grads = g.backward(loss).unwrap();
    let analytic = grads.get(vars.cbn1.gamma).unwrap().data().to_vec();
    let x0 = net.cbn1.gamma.data().to_vec();
    let numeric = central_diff(
        &mut |x| {
            let mut n2 = net.clone();
            n2.cbn1.gamma.data_mut().copy_from_slice(x);
            f(&n2)
        },
        &x0,
        1e-5,
    );
    assert!(rel_err(&analytic, &numeric) < 1e-4);
}

/// Generator objective `L_G + c · L_gSR` and its parameter gradients.
fn objective(net: &GeneratorNet, disc: &DiscriminatorNet, c: f64, z: &Tensor) -> (f64, f64, Vec<Vec<f64>>) {
    let weights = effective_number_weights(&[500, 50, 5], 0.99).unwrap();
    let cfg = RegConfig { n_g: 2, power_iters: 500, ..RegConfig::default() };
    let mut g = Graph::new();
    let gv = net.bind(&mut g, true);
    let dv = disc.bind(&mut g, false);
    let zv = g.constant(z.clone());
    let out = net.forward(&mut g, &gv, zv, 2, BnMode::Batch, None).unwrap();
    let d = disc.forward(&mut g, &dv, out.points, 2, None).unwrap();
    let adv = hinge_g_loss(&mut g, d).unwrap();
    let (p, _) = gsr_loss(&mut g, net, &gv, &weights, &cfg, &mut SpectralStates::new(9)).unwrap();
    let sp = g.scale(p, c).unwrap();
    let total = g.add(adv, sp).unwrap();
    let grads = g.backward(total).unwrap();
    let gr = gv.all().iter().map(|&v| grads.get_or_zeros(v, g.shape(v)).data().to_vec()).collect();
    (g.value(adv).item(), g.value(total).item(), gr)
}

#[test]
fn objective_is_linear_in_the_regularizer_weight() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut net = GeneratorNet::new(arch(), &mut rng);
    random_tables(&mut net, &mut rng);
    let disc = DiscriminatorNet::new(arch(), &mut rng);
    let z = Tensor::new(&[6, 4], normal_vec(&mut rng, 24, 1.0)).unwrap();
    let c = 0.3;
    let (adv, t1, _) = objective(&net, &disc, c, &z);
    let (_, t2, _) = objective(&net, &disc, 2.0 * c, &z);
    assert!(((t2 - adv) - 2.0 * (t1 - adv)).abs() < 1e-12);

    let (adv0, t0, _) = objective(&net, &disc, 0.0, &z);
    assert_eq!(adv0.to_bits(), t0.to_bits());
}

#[test]
fn regularized_gradient_decomposes() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let mut net = GeneratorNet::new(arch(), &mut rng);
    random_tables(&mut net, &mut rng);
    let disc = DiscriminatorNet::new(arch(), &mut rng);
    let z = Tensor::new(&[6, 4], normal_vec(&mut rng, 24, 1.0)).unwrap();
    let (_, _, g0) = objective(&net, &disc, 0.0, &z);
    let (_, _, g5) = objective(&net, &disc, 0.5, &z);
    let weights = effective_number_weights(&[500, 50, 5], 0.99).unwrap();
    // parameter order: w1, gamma1, beta1, w2, gamma2, beta2, w_out, b_out
    for (idx, l, kind) in [(1, 0, 0), (2, 0, 1), (4, 1, 0), (5, 1, 1)] {
        let layer = net.cbn_layers()[l];
        for y in 0..3 {
            let row = if kind == 0 { layer.gamma_row(y) } else { layer.beta_row(y) };
            let m = spectral::group(row, 2).unwrap();
            let est = spectral::sigma_max_converged(&m);
            let uv = spectral::sigma_max_gradient(&m, &est.u, &est.v);
            let expected: Vec<f64> = uv
                .data()
                .iter()
                .map(|x| 0.5 * weights.lambda[y] * 2.0 * est.sigma * x)
                .collect();
            let d = 8;
            let got: Vec<f64> = (0..d).map(|j| g5[idx][y * d + j] - g0[idx][y * d + j]).collect();
            assert!(rel_err(&got, &expected) < 1e-8, "table {idx} class {y}");
        }
    }
    // weights outside the cBN tables are unaffected
    for idx in [0, 3, 6, 7] {
        assert_eq!(g0[idx], g5[idx]);
    }
}

#[test]
fn gsr_loss_is_repeatable() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let mut net = GeneratorNet::new(arch(), &mut rng);
    random_tables(&mut net, &mut rng);
    let run = || {
        let mut g = Graph::new();
        let vars = net.bind(&mut g, true);
        let (l, _) = gsr_loss(
            &mut g,
            &net,
            &vars,
            &ClassWeights::uniform(3),
            &RegConfig::default(),
            &mut SpectralStates::new(4),
        )
        .unwrap();
        g.value(l).item().to_bits()
    };
    assert_eq!(run(), run());
}

#[test]
fn effective_number_properties() {
    let counts: Vec<usize> = (1..=5000).collect();
    let w = effective_number_weights(&counts, 0.99).unwrap();
    assert_eq!(w.lambda[0], 1.0);
    // consecutive true values differ by about 1e-4·0.99ⁿ, which drops below
    // one f64 ulp of 0.01 near n = 3135
    assert!(w.lambda[..3000].windows(2).all(|p| p[1] < p[0]));
    assert!(w.lambda.windows(2).all(|p| p[1] <= p[0]));
    assert!(w.lambda.iter().all(|&l| l > 0.01));
    assert!((w.lambda[4999] - 0.01).abs() < 1e-12);
    // α → 1⁻ recovers 1/n
    let near = effective_number_weights(&[2, 10, 50], 0.9999).unwrap();
    for (l, n) in near.lambda.iter().zip([2.0, 10.0, 50.0]) {
        assert!((l - 1.0 / n).abs() / (1.0 / n) < 3e-3, "{l} vs {}", 1.0 / n);
    }
    assert!(effective_number_weights(&[0], 0.99).is_err());
    assert!(effective_number_weights(&[3], 1.0).is_err());
}
