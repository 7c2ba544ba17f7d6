//! Dense reference values via a full symmetric eigendecomposition of `MᵀM`.
//! Test and diagnostic use only.

use nalgebra::DMatrix;

use super::GroupedMatrix;

/// Singular values of `m` in descending order.
pub fn singular_values(m: &GroupedMatrix) -> Vec<f64> {
    let a = DMatrix::from_row_slice(m.n_g(), m.n_c(), m.data());
    let gram = a.transpose() * &a;
    let eig = gram.symmetric_eigen();
    let mut s: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn sigma_max_svd_oracle(m: &GroupedMatrix) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// `σ₁ / σ₂`, infinite for rank-one matrices.
pub fn spectral_gap(m: &GroupedMatrix) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.get(1)) {
        (Some(&a), Some(&b)) if b > 0.0 => a / b,
        _ => f64::INFINITY,
    }
}

/// Largest absolute eigenvalue of the symmetric matrix `MᵀM − I`, squared.
pub fn gsrip_penalty_oracle(m: &GroupedMatrix) -> f64 {
    let a = DMatrix::from_row_slice(m.n_g(), m.n_c(), m.data());
    let n = m.n_c();
    let sym = a.transpose() * &a - DMatrix::<f64>::identity(n, n);
    let s = sym
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, l| acc.max(l.abs()));
    s * s
}
