//! Group spectral regularization (gSR) of conditional BatchNorm parameters
//! for class-conditional GANs trained on long-tailed data, at 2-D scale.
//!
//! * [`ndcore`]: tensors and reverse-mode differentiation
//! * [`spectral`]: grouping, power iteration, spectral-norm gradients
//! * [`condgen`]: conditional generator and projection discriminator
//! * [`regularizers`]: gSR / gSN / gSRIP, LeCam, hinge losses
//! * [`data`]: long-tailed Gaussian ring mixtures
//! * [`train`]: adversarial training loop and run logs
//! * [`metrics`]: per-class Fréchet distance, coverage, collapse detection

pub mod ndcore;
pub mod spectral;
pub mod data;
pub mod condgen;
pub mod regularizers;
pub mod metrics;
pub mod train;
