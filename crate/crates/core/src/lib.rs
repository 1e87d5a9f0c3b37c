//! Reconstruction of bare-soil reflectance from vegetation-contaminated
//! multispectral samples with a conditional GAN, and evaluation of the
//! downstream soil organic carbon regression.

pub mod baselines;
pub mod config;
pub mod dataset;
pub mod diagnostics;
pub mod evaluation;
pub mod gan;
pub mod neighbors;
pub mod pipeline;
pub mod nn;
pub mod regressors;
pub mod seed;
pub mod spectral;
