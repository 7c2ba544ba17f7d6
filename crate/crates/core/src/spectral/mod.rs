//! Grouping of cBN parameter vectors into `n_g × n_c` matrices and
//! estimation of their largest singular value.
//!
//! The training path only uses [`sigma_max_power`]; the dense routines in
//! [`oracle`] exist to check it.

pub mod oracle;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

pub use oracle::{sigma_max_svd_oracle, singular_values, spectral_gap};

/// Power iterations per estimate when nothing else is configured.
pub const DEFAULT_POWER_ITERS: usize = 4;

/// Iteration cap for the "converged" convenience estimators.
const CONVERGED_ITERS: usize = 1000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("group count {n_g} does not divide vector length {d}")]
    Grouping { d: usize, n_g: usize },
    #[error("spectral norm of an all-zero matrix")]
    ZeroMatrix,
    #[error("power-iteration state has length {got}, matrix has {expected} columns")]
    StateShape { expected: usize, got: usize },
}

/// A length-`d` parameter vector viewed as an `n_g × n_c` row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupedMatrix {
    n_g: usize,
    n_c: usize,
    data: Vec<f64>,
}

impl GroupedMatrix {
    pub fn from_rows(n_g: usize, n_c: usize, data: Vec<f64>) -> Self {
        assert_eq!(n_g * n_c, data.len(), "grouped matrix shape mismatch");
        Self { n_g, n_c, data }
    }

    pub fn zeros(n_g: usize, n_c: usize) -> Self {
        Self::from_rows(n_g, n_c, vec![0.0; n_g * n_c])
    }

    pub fn n_g(&self) -> usize {
        self.n_g
    }

    pub fn n_c(&self) -> usize {
        self.n_c
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_c + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_c..(i + 1) * self.n_c]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::from_rows(self.n_g, self.n_c, self.data.iter().map(|x| c * x).collect())
    }

    /// `M v` for `v` of length `n_c`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        self.data
            .chunks_exact(self.n_c)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `Mᵀ u` for `u` of length `n_g`.
    pub fn mul_t_vec(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_c];
        for (row, ui) in self.data.chunks_exact(self.n_c).zip(u) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += ui * a;
            }
        }
        out
    }

    /// `MᵀM − I`, an `n_c × n_c` matrix.
    pub fn gram_minus_identity(&self) -> GroupedMatrix {
        let n = self.n_c;
        let mut out = vec![0.0; n * n];
        for row in self.data.chunks_exact(n) {
            for i in 0..n {
                for j in 0..n {
                    out[i * n + j] += row[i] * row[j];
                }
            }
        }
        for i in 0..n {
            out[i * n + i] -= 1.0;
        }
        GroupedMatrix::from_rows(n, n, out)
    }
}

/// Reshapes `v` row-major into `n_g` rows of `len / n_g` columns.
pub fn group(v: &[f64], n_g: usize) -> Result<GroupedMatrix, SpectralError> {
    let d = v.len();
    if n_g == 0 || d == 0 || d % n_g != 0 {
        return Err(SpectralError::Grouping { d, n_g });
    }
    Ok(GroupedMatrix::from_rows(n_g, d / n_g, v.to_vec()))
}

pub fn ungroup(m: &GroupedMatrix) -> Vec<f64> {
    m.data.clone()
}

/// Warm-start vector for power iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerIterState {
    v: Vec<f64>,
    iterations_run: usize,
}

impl PowerIterState {
    /// Deterministic pseudo-random unit vector of length `n_c`.
    pub fn seeded(n_c: usize, seed: u64) -> Self {
        assert!(n_c > 0, "power-iteration state needs at least one column");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<f64> = (0..n_c).map(|_| StandardNormal.sample(&mut rng)).collect();
        if normalize(&mut v) == 0.0 {
            v = vec![0.0; n_c];
            v[0] = 1.0;
        }
        Self {
            v,
            iterations_run: 0,
        }
    }

    pub fn from_vector(mut v: Vec<f64>) -> Option<Self> {
        (normalize(&mut v) > 0.0).then_some(Self {
            v,
            iterations_run: 0,
        })
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn iterations_run(&self) -> usize {
        self.iterations_run
    }
}

/// Result of a power-iteration estimate: `sigma = uᵀ M v`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralEstimate {
    pub sigma: f64,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

fn normalize(x: &mut [f64]) -> f64 {
    let n = x.iter().map(|a| a * a).sum::<f64>().sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|a| *a /= n);
    }
    n
}

/// Alternating power iteration `u ← Mv/‖Mv‖`, `v ← Mᵀu/‖Mᵀu‖`, starting
/// from and writing back to `state`.
///
/// An all-zero matrix yields `sigma = 0`, `u = 0` and leaves the state
/// untouched, so its gradient `u vᵀ` is zero as well.
pub fn sigma_max_power(
    m: &GroupedMatrix,
    iters: usize,
    state: &mut PowerIterState,
) -> Result<SpectralEstimate, SpectralError> {
    assert!(iters >= 1, "power iteration needs at least one iteration");
    if state.v.len() != m.n_c {
        return Err(SpectralError::StateShape {
            expected: m.n_c,
            got: state.v.len(),
        });
    }
    if m.is_zero() {
        return Ok(SpectralEstimate {
            sigma: 0.0,
            u: vec![0.0; m.n_g],
            v: state.v.clone(),
        });
    }
    let mut v = state.v.clone();
    let mut u = vec![0.0; m.n_g];
    let mut sigma = 0.0;
    for _ in 0..iters {
        u = m.mul_vec(&v);
        if normalize(&mut u) == 0.0 {
            // v fell into the null space; restart from the heaviest row
            let (best, _) = (0..m.n_g)
                .map(|i| (i, m.row(i).iter().map(|a| a * a).sum::<f64>()))
                .fold((0, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            u = vec![0.0; m.n_g];
            u[best] = 1.0;
        }
        v = m.mul_t_vec(&u);
        sigma = normalize(&mut v);
    }
    state.v.clone_from(&v);
    state.iterations_run += iters;
    Ok(SpectralEstimate { sigma, u, v })
}

/// Power iteration run until the right singular vector stops moving, from a
/// fixed seeded start.
pub fn sigma_max_converged(m: &GroupedMatrix) -> SpectralEstimate {
    let mut state = PowerIterState::seeded(m.n_c, 0x5eed_0f_5167a);
    let mut est = sigma_max_power(m, 1, &mut state).expect("state built for this matrix");
    for _ in 1..CONVERGED_ITERS {
        let prev = state.v.clone();
        est = sigma_max_power(m, 1, &mut state).expect("state built for this matrix");
        let moved: f64 = prev.iter().zip(&state.v).map(|(a, b)| (a - b).abs()).sum();
        if moved <= 1e-15 {
            break;
        }
    }
    est
}

/// `∂σ_max/∂M = u vᵀ` at a simple leading singular value, with `u`, `v`
/// treated as constants.
pub fn sigma_max_gradient(m: &GroupedMatrix, u: &[f64], v: &[f64]) -> GroupedMatrix {
    assert_eq!(u.len(), m.n_g);
    assert_eq!(v.len(), m.n_c);
    let data = u
        .iter()
        .flat_map(|ui| v.iter().map(move |vj| ui * vj))
        .collect();
    GroupedMatrix::from_rows(m.n_g, m.n_c, data)
}

/// Divides `gamma` by the spectral norm of its grouping.
pub fn gsn_normalize(gamma: &[f64], n_g: usize) -> Result<Vec<f64>, SpectralError> {
    let m = group(gamma, n_g)?;
    if m.is_zero() {
        return Err(SpectralError::ZeroMatrix);
    }
    let sigma = sigma_max_converged(&m).sigma;
    Ok(gamma.iter().map(|g| g / sigma).collect())
}

/// `σ_max²(MᵀM − I)` estimated with power iteration on the `n_c × n_c`
/// matrix, warm-started from `state`. The returned estimate carries
/// `sigma = σ_max(MᵀM − I)` and its singular vectors.
pub fn gsrip_power(
    m: &GroupedMatrix,
    iters: usize,
    state: &mut PowerIterState,
) -> Result<SpectralEstimate, SpectralError> {
    sigma_max_power(&m.gram_minus_identity(), iters, state)
}

/// Converged `σ_max²(MᵀM − I)`.
pub fn gsrip_penalty(m: &GroupedMatrix) -> f64 {
    let s = sigma_max_converged(&m.gram_minus_identity()).sigma;
    s * s
}

/// Multiplications per spectral estimate: `(n_g² + n_c²) × power_iters`.
pub fn iteration_complexity(n_g: usize, n_c: usize, power_iters: usize) -> usize {
    (n_g * n_g + n_c * n_c) * power_iters
}

/// All `(n_g, n_c)` with `n_g · n_c = d`, ordered by `n_g`.
pub fn divisor_pairs(d: usize) -> Vec<(usize, usize)> {
    (1..=d).filter(|g| d % g == 0).map(|g| (g, d / g)).collect()
}
