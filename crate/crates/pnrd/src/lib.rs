//! Photocount statistics for photon-number-resolving detectors with loss
//! and saturation.
//!
//! A detector here is two numbers: a quantum efficiency (independent
//! binomial loss per photon) and a maximum resolvable photocount (every
//! larger event reads as the maximum). On top of that measurement model
//! the crate provides:
//!
//! - exact outcome probabilities and photocount moments for arbitrary
//!   photon-number inputs (`povm`),
//! - photon-number statistics of two-mode coherent and twin-beam sources
//!   (`states`),
//! - closed-form joint statistics: variance of the photocount difference,
//!   noise reduction factor, and the discrimination measure Q with its
//!   optimizer (`analytics`),
//! - a deterministic, parallel Monte Carlo simulator as an independent
//!   stochastic oracle (`montecarlo`),
//! - absolute calibration of detector efficiencies from synthetic
//!   photocount records by two protocols (`calibration`).

pub mod analytics;
pub mod calibration;
pub mod error;
pub mod montecarlo;
pub mod povm;
pub mod special;
pub mod states;

mod optimize;

pub use analytics::{
    count_statistics, cross_moment_twb, difference_distribution, exp_sum, joint_count_distribution,
    nrf, optimize_q, poisson_count_variance, poisson_mean_count, poisson_second_moment, q_measure,
    vdp_tmc, vdp_twb, CountStatistics, DifferenceDistribution, QOptimum, Regime, VaryParameter,
};
pub use calibration::{
    analytic_run, calibrate_tmc_nonlinear, calibrate_twb_linear, detect_saturation,
    generate_synthetic_run, infer_mean_from_count, linear_regime_bound, CalibrationMethod,
    CalibrationPoint, CalibrationResult, CalibrationRun,
};
pub use error::{Error, Result};
pub use montecarlo::{
    binomial_thin, derive_seed, sample_poisson, simulate_counts, SampleStats, SimConfig,
};
pub use povm::{
    apply_detector, coefficient_c, coefficient_c_hypergeometric, coefficient_d,
    coefficient_d_hypergeometric, expectation_moment, fock_moment, loss_conditional_prob,
    povm_element, terminating_hypergeometric, CountDistribution, DetectorModel,
};
pub use states::{
    make_source, poisson_distribution, NumberDistribution, SourceKind, TwoModeSource,
};
