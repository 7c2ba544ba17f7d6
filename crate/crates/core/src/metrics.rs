//! Per-class distribution distances against known Gaussian references,
//! mode coverage, collapse detection and grouped-parameter covariance.

use thiserror::Error;

use crate::data::ClassDistribution;
use crate::spectral::{self, SpectralError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("covariance is not positive semidefinite")]
    NotPsd,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("grouped covariance needs at least 2 columns, got {0}")]
    TooFewColumns(usize),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

pub type Cov2 = [[f64; 2]; 2];

/// Row covariance `(1/n_c) C Cᵀ` of a grouped table, `C` being the grouped
/// matrix with each row centered on its own mean.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceReport {
    pub class: usize,
    pub layer: usize,
    pub n_g: usize,
    /// Row-major `n_g × n_g`.
    pub covariance: Vec<f64>,
    pub diagonality: f64,
}

/// `1 − ‖offdiag(C)‖_F / ‖C‖_F`; an all-zero matrix counts as diagonal.
pub fn diagonality(cov: &[f64], n: usize) -> f64 {
    let mut total = 0.0;
    let mut off = 0.0;
    for i in 0..n {
        for j in 0..n {
            let c2 = cov[i * n + j] * cov[i * n + j];
            total += c2;
            if i != j {
                off += c2;
            }
        }
    }
    if total == 0.0 {
        1.0
    } else {
        1.0 - (off / total).sqrt()
    }
}

pub fn grouped_covariance(
    gamma: &[f64],
    n_g: usize,
    class: usize,
    layer: usize,
) -> Result<CovarianceReport, MetricError> {
    let m = spectral::group(gamma, n_g)?;
    let n_c = m.n_c();
    if n_c < 2 {
        return Err(MetricError::TooFewColumns(n_c));
    }
    let centered: Vec<Vec<f64>> = (0..n_g)
        .map(|i| {
            let row = m.row(i);
            let mean = row.iter().sum::<f64>() / n_c as f64;
            row.iter().map(|x| x - mean).collect()
        })
        .collect();
    let mut covariance = vec![0.0; n_g * n_g];
    for i in 0..n_g {
        for j in i..n_g {
            let c = centered[i]
                .iter()
                .zip(&centered[j])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / n_c as f64;
            covariance[i * n_g + j] = c;
            covariance[j * n_g + i] = c;
        }
    }
    let diagonality = diagonality(&covariance, n_g);
    Ok(CovarianceReport {
        class,
        layer,
        n_g,
        covariance,
        diagonality,
    })
}

fn check_psd(s: &Cov2) -> Result<(), MetricError> {
    let tol = 1e-12 * (s[0][0].abs() + s[1][1].abs()).max(1.0);
    let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
    if (s[0][1] - s[1][0]).abs() > tol || s[0][0] < -tol || s[1][1] < -tol || det < -tol {
        return Err(MetricError::NotPsd);
    }
    Ok(())
}

/// Squared 2-Wasserstein distance between two 2-D Gaussians,
/// `‖μ₁−μ₂‖² + Tr(Σ₁ + Σ₂ − 2(Σ₁Σ₂)^{1/2})`.
///
/// `Σ₁Σ₂` is similar to a PSD matrix, so its eigenvalues are real and
/// non-negative and `Tr √(Σ₁Σ₂) = √(tr + 2√det)`.
pub fn gaussian_frechet(mu1: [f64; 2], s1: &Cov2, mu2: [f64; 2], s2: &Cov2) -> Result<f64, MetricError> {
    check_psd(s1)?;
    check_psd(s2)?;
    let dm = (mu1[0] - mu2[0]).powi(2) + (mu1[1] - mu2[1]).powi(2);
    let p = [
        [
            s1[0][0] * s2[0][0] + s1[0][1] * s2[1][0],
            s1[0][0] * s2[0][1] + s1[0][1] * s2[1][1],
        ],
        [
            s1[1][0] * s2[0][0] + s1[1][1] * s2[1][0],
            s1[1][0] * s2[0][1] + s1[1][1] * s2[1][1],
        ],
    ];
    let tr = p[0][0] + p[1][1];
    let det = (p[0][0] * p[1][1] - p[0][1] * p[1][0]).max(0.0);
    let tr_sqrt = (tr + 2.0 * det.sqrt()).max(0.0).sqrt();
    let trace_term = s1[0][0] + s1[1][1] + s2[0][0] + s2[1][1] - 2.0 * tr_sqrt;
    Ok((dm + trace_term).max(0.0))
}

/// Sample mean and unbiased covariance.
pub fn sample_moments(samples: &[[f64; 2]]) -> Result<([f64; 2], Cov2), MetricError> {
    let n = samples.len();
    if n < 2 {
        return Err(MetricError::TooFewSamples { needed: 2, got: n });
    }
    let nf = n as f64;
    let mu = [
        samples.iter().map(|p| p[0]).sum::<f64>() / nf,
        samples.iter().map(|p| p[1]).sum::<f64>() / nf,
    ];
    let mut c = [[0.0; 2]; 2];
    for p in samples {
        let d = [p[0] - mu[0], p[1] - mu[1]];
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] += d[i] * d[j];
            }
        }
    }
    for row in &mut c {
        for v in row.iter_mut() {
            *v /= nf - 1.0;
        }
    }
    Ok((mu, c))
}

/// Fréchet distance between the Gaussian fit of `samples` and the exact
/// moments of `reference`.
pub fn per_class_frechet(samples: &[[f64; 2]], reference: &ClassDistribution) -> Result<f64, MetricError> {
    let (mu, cov) = sample_moments(samples)?;
    gaussian_frechet(mu, &cov, reference.mu, &reference.sigma)
}

/// Coverage together with the per-axis sample standard deviation; a
/// collapsed class shows high coverage with near-zero spread.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverageReport {
    pub coverage: f64,
    pub sample_std: [f64; 2],
}

/// Fraction of samples within `radius_multiplier · √λ_max(Σ_ref)` of `μ_ref`.
pub fn mode_coverage(
    samples: &[[f64; 2]],
    reference: &ClassDistribution,
    radius_multiplier: f64,
) -> Result<CoverageReport, MetricError> {
    if samples.is_empty() {
        return Err(MetricError::TooFewSamples { needed: 1, got: 0 });
    }
    let r = radius_multiplier * reference.max_variance().sqrt();
    let inside = samples
        .iter()
        .filter(|p| {
            let d2 = (p[0] - reference.mu[0]).powi(2) + (p[1] - reference.mu[1]).powi(2);
            d2 <= r * r
        })
        .count();
    let sample_std = if samples.len() >= 2 {
        let (_, c) = sample_moments(samples)?;
        [c[0][0].sqrt(), c[1][1].sqrt()]
    } else {
        [0.0, 0.0]
    };
    Ok(CoverageReport {
        coverage: inside as f64 / samples.len() as f64,
        sample_std,
    })
}

/// Root-mean-square of the two axis standard deviations.
pub fn rms_std(std: [f64; 2]) -> f64 {
    ((std[0] * std[0] + std[1] * std[1]) / 2.0).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub class: usize,
    pub frechet: f64,
    pub coverage: f64,
    pub sample_std: [f64; 2],
}

pub fn class_metrics(
    samples: &[[f64; 2]],
    reference: &ClassDistribution,
    radius_multiplier: f64,
) -> Result<ClassMetrics, MetricError> {
    let frechet = per_class_frechet(samples, reference)?;
    let cov = mode_coverage(samples, reference, radius_multiplier)?;
    Ok(ClassMetrics {
        class: reference.class,
        frechet,
        coverage: cov.coverage,
        sample_std: cov.sample_std,
    })
}

/// Thresholds for flagging class-specific collapse.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollapseThresholds {
    /// Collapse requires the sample RMS std to fall below this fraction of
    /// the reference RMS std.
    pub std_fraction: f64,
    /// ... and `σ_max(Γ)` to exceed this multiple of its earliest value.
    pub sigma_ratio: f64,
}

impl Default for CollapseThresholds {
    fn default() -> Self {
        Self {
            std_fraction: 0.1,
            sigma_ratio: 3.0,
        }
    }
}

/// One class's state at one snapshot, as consumed by the detector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollapseObservation {
    pub step: u64,
    pub sample_std: f64,
    pub sigma_gamma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CollapseVerdict {
    pub fired: bool,
    /// First snapshot step at which both conditions held.
    pub first_step: Option<u64>,
}

/// Flags a class when, at some snapshot, its sample spread is below
/// `std_fraction` of the reference while `σ_max(Γ)` exceeds `sigma_ratio`
/// times its value at the earliest snapshot.
pub fn collapse_detector(
    series: &[CollapseObservation],
    reference_std: f64,
    thresholds: CollapseThresholds,
) -> CollapseVerdict {
    let Some(first) = series.first() else {
        return CollapseVerdict {
            fired: false,
            first_step: None,
        };
    };
    let base = first.sigma_gamma;
    let hit = series.iter().skip(1).find(|o| {
        o.sample_std < thresholds.std_fraction * reference_std
            && o.sigma_gamma > thresholds.sigma_ratio * base
    });
    CollapseVerdict {
        fired: hit.is_some(),
        first_step: hit.map(|o| o.step),
    }
}
