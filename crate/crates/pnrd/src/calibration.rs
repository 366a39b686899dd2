//! Absolute calibration of detector efficiencies from joint photocount
//! records.
//!
//! Two protocols are implemented. The twin-beam linear protocol estimates
//! the efficiency ratio from per-point count ratios and converts the
//! measured noise reduction factor into absolute efficiencies; it only
//! uses points inside the detector's linear response. The coherent-state
//! nonlinear protocol first reads the saturation values off the plateau of
//! the response curve, then fits the analytic NRF curve over the full
//! drive range.
//!
//! Runs record the per-point drive mean (the experimenter's pump
//! calibration). The twin-beam protocol never reads it; the nonlinear
//! protocol uses it as the abscissa of the fit.

use crate::analytics::{nrf, poisson_mean_count, vdp_tmc, vdp_twb};
use crate::error::{Error, Result};
use crate::montecarlo::{derive_seed, simulate_counts, SimConfig};
use crate::optimize::nelder_mead_2d;
use crate::povm::DetectorModel;
use crate::special::{chi_square_quantile, ln_gamma};
use crate::states::{SourceKind, TwoModeSource};

/// Default relative flatness of the last two grid points required to call
/// the response saturated.
pub const DEFAULT_FLAT_TOLERANCE: f64 = 1e-3;

/// Default bound on the measured-count-to-plateau ratio for a point to
/// count as linear-regime.
pub const DEFAULT_REGIME_THRESHOLD: f64 = 0.1;

/// Looser flatness used when the regime filter probes for a plateau; a
/// plateau only has to be evident, not converged, to anchor the filter.
const FILTER_PLATEAU_FLATNESS: f64 = 0.05;

/// Simplex convergence diameter for the nonlinear fit.
const SIMPLEX_DIAMETER_TOL: f64 = 1e-8;
const SIMPLEX_MAX_ITER: usize = 4000;

/// Distance in efficiency space beyond which two fit endpoints count as
/// distinct minima.
const DEGENERACY_DISTANCE: f64 = 1e-2;

/// Relative residual window within which distinct minima count as equally
/// good.
const DEGENERACY_RESIDUAL_WINDOW: f64 = 0.01;

/// One measured grid point of a calibration run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationPoint {
    /// Index of the pump setting in the drive sequence.
    pub pump_setting: usize,
    /// Mean photon number of the drive at this setting, known from the
    /// pump calibration. Zero Monte Carlo trials marks an analytic point.
    pub mean_photons: f64,
    pub mean_count1: f64,
    pub mean_count1_se: f64,
    pub mean_count2: f64,
    pub mean_count2_se: f64,
    pub vdp: f64,
    pub vdp_se: f64,
    pub nrf: f64,
    pub nrf_se: f64,
    pub trials: u64,
}

/// A recorded calibration experiment: photocount statistics over an
/// increasing drive sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRun {
    source_kind: SourceKind,
    points: Vec<CalibrationPoint>,
}

impl CalibrationRun {
    /// Wrap a point sequence, requiring at least three strictly increasing
    /// drive settings.
    pub fn new(source_kind: SourceKind, points: Vec<CalibrationPoint>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::Validation(format!(
                "a calibration run needs at least 3 points, got {}",
                points.len()
            )));
        }
        let increasing = points
            .windows(2)
            .all(|w| w[1].mean_photons > w[0].mean_photons);
        if !increasing {
            return Err(Error::Validation(
                "drive means must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            source_kind,
            points,
        })
    }

    pub fn source_kind(&self) -> SourceKind {
        self.source_kind
    }

    pub fn points(&self) -> &[CalibrationPoint] {
        &self.points
    }
}

/// Which estimator produced a calibration result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationMethod {
    TwbLinear,
    TmcNonlinear,
}

impl std::fmt::Display for CalibrationMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CalibrationMethod::TwbLinear => write!(f, "twb-linear"),
            CalibrationMethod::TmcNonlinear => write!(f, "tmc-nonlinear"),
        }
    }
}

/// Fitted detector parameters with first-order uncertainties.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationResult {
    pub method: CalibrationMethod,
    /// Efficiency ratio eta1 / eta2.
    pub k_ratio: f64,
    pub k_ratio_se: f64,
    pub eta1: f64,
    pub eta1_se: f64,
    pub eta2: f64,
    pub eta2_se: f64,
    /// Saturation estimates; set by the nonlinear protocol only.
    pub n1_hat: Option<usize>,
    pub n2_hat: Option<usize>,
    pub fit_residual: f64,
    /// Set when several fit starts ended on distinct, equally good minima.
    pub degenerate: bool,
}

/// Largest drive mean for which the detector response is still linear at
/// the given smallness threshold.
///
/// Solves (eta * mean)^cap / (cap + 1)! = threshold for the mean, with the
/// factorial taken through the log-gamma function.
pub fn linear_regime_bound(det: &DetectorModel, threshold: f64) -> Result<f64> {
    if !(0.0 < threshold && threshold < 1.0) {
        return Err(Error::Domain(format!(
            "threshold must lie in (0, 1), got {threshold}"
        )));
    }
    if det.efficiency() == 0.0 {
        return Err(Error::Domain(
            "a dark detector has an unbounded linear regime".into(),
        ));
    }
    let cap = det.max_count() as f64;
    let ln_bound = (threshold.ln() + ln_gamma(cap + 2.0)) / cap;
    Ok(ln_bound.exp() / det.efficiency())
}

/// Drive a synthetic calibration experiment: one simulation per grid
/// point, each on an independently derived seed.
pub fn generate_synthetic_run(
    source_kind: SourceKind,
    det1: &DetectorModel,
    det2: &DetectorModel,
    mean_grid: &[f64],
    trials: u64,
    seed: u64,
) -> Result<CalibrationRun> {
    if mean_grid.len() < 3 {
        return Err(Error::Validation(format!(
            "a calibration grid needs at least 3 points, got {}",
            mean_grid.len()
        )));
    }
    let ordered = mean_grid.windows(2).all(|w| w[1] > w[0]);
    if !ordered || mean_grid[0] <= 0.0 {
        return Err(Error::Validation(
            "drive means must be positive and strictly increasing".into(),
        ));
    }
    if trials < 1000 {
        return Err(Error::Validation(format!(
            "at least 1000 trials per point are required, got {trials}"
        )));
    }
    let mut points = Vec::with_capacity(mean_grid.len());
    for (i, &mean) in mean_grid.iter().enumerate() {
        let source = TwoModeSource::make(source_kind, mean)?;
        let cfg = SimConfig::new(derive_seed(seed, i as u64), trials);
        let stats = simulate_counts(&source, det1, det2, &cfg)?;
        points.push(CalibrationPoint {
            pump_setting: i,
            mean_photons: mean,
            mean_count1: stats.mean1,
            mean_count1_se: stats.mean1_se,
            mean_count2: stats.mean2,
            mean_count2_se: stats.mean2_se,
            vdp: stats.vdp,
            vdp_se: stats.vdp_se,
            nrf: stats.nrf,
            nrf_se: stats.nrf_se,
            trials,
        });
    }
    CalibrationRun::new(source_kind, points)
}

/// Noise-free calibration run built from the closed-form statistics.
///
/// Standard errors are zero and the trial count is zero, marking the
/// points as analytic.
pub fn analytic_run(
    source_kind: SourceKind,
    det1: &DetectorModel,
    det2: &DetectorModel,
    mean_grid: &[f64],
) -> Result<CalibrationRun> {
    let mut points = Vec::with_capacity(mean_grid.len());
    for (i, &mean) in mean_grid.iter().enumerate() {
        let v = match source_kind {
            SourceKind::Tmc => vdp_tmc(det1, det2, mean)?,
            SourceKind::Twb => vdp_twb(det1, det2, mean)?,
            SourceKind::CustomCorrelated => {
                return Err(Error::Domain(
                    "analytic runs are parametrized for TMC and TWB sources only".into(),
                ))
            }
        };
        points.push(CalibrationPoint {
            pump_setting: i,
            mean_photons: mean,
            mean_count1: poisson_mean_count(det1, mean)?,
            mean_count1_se: 0.0,
            mean_count2: poisson_mean_count(det2, mean)?,
            mean_count2_se: 0.0,
            vdp: v,
            vdp_se: 0.0,
            nrf: nrf(source_kind, det1, det2, mean)?,
            nrf_se: 0.0,
            trials: 0,
        });
    }
    CalibrationRun::new(source_kind, points)
}

fn relative_change(newer: f64, older: f64) -> f64 {
    (newer - older).abs() / newer.abs().max(1e-300)
}

/// Plateau estimate per arm for the regime filter: the last mean count,
/// but only when the tail of the run is visibly flat. Without evidence of
/// a plateau no point can be excluded.
fn filter_plateaus(run: &CalibrationRun) -> (Option<f64>, Option<f64>) {
    let pts = run.points();
    let last = &pts[pts.len() - 1];
    let prev = &pts[pts.len() - 2];
    let plateau = |m_last: f64, m_prev: f64| -> Option<f64> {
        if m_last > 0.0 && relative_change(m_last, m_prev) < FILTER_PLATEAU_FLATNESS {
            Some(m_last)
        } else {
            None
        }
    };
    (
        plateau(last.mean_count1, prev.mean_count1),
        plateau(last.mean_count2, prev.mean_count2),
    )
}

/// Inverse-variance weighted mean. Falls back to the plain mean when every
/// variance is zero (noise-free inputs); zero variances in a mixed set are
/// floored to the smallest positive one.
fn weighted_mean(values: &[f64], ses: &[f64]) -> (f64, f64) {
    debug_assert_eq!(values.len(), ses.len());
    if ses.iter().all(|&s| s == 0.0) {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        return (mean, 0.0);
    }
    let floor = ses
        .iter()
        .copied()
        .filter(|&s| s > 0.0)
        .fold(f64::INFINITY, f64::min);
    let mut num = 0.0;
    let mut den = 0.0;
    for (&v, &s) in values.iter().zip(ses) {
        let w = 1.0 / s.max(floor).powi(2);
        num += w * v;
        den += w;
    }
    (num / den, (1.0 / den).sqrt())
}

/// Twin-beam linear-regime calibration.
///
/// Keeps the points whose mean counts sit below `regime_threshold` of the
/// detected plateau (all points when the run shows no plateau), estimates
/// the efficiency ratio from the weighted count ratios, and converts the
/// weighted-mean NRF into absolute efficiencies.
pub fn calibrate_twb_linear(
    run: &CalibrationRun,
    regime_threshold: f64,
) -> Result<CalibrationResult> {
    if run.source_kind() != SourceKind::Twb {
        return Err(Error::Domain(format!(
            "the linear protocol requires a twin-beam run, got {}",
            run.source_kind()
        )));
    }
    if !(0.0 < regime_threshold && regime_threshold < 1.0) {
        return Err(Error::Domain(format!(
            "regime threshold must lie in (0, 1), got {regime_threshold}"
        )));
    }

    // Pass 1: plateau evidence. Pass 2: keep linear-regime points.
    let (plateau1, plateau2) = filter_plateaus(run);
    let linear: Vec<&CalibrationPoint> = run
        .points()
        .iter()
        .filter(|p| {
            let ok1 = plateau1.is_none_or(|pl| p.mean_count1 < regime_threshold * pl);
            let ok2 = plateau2.is_none_or(|pl| p.mean_count2 < regime_threshold * pl);
            ok1 && ok2
        })
        .collect();
    if linear.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "only {} points fall inside the linear regime; at least 2 are required",
            linear.len()
        )));
    }
    if linear.iter().any(|p| p.mean_count2 <= 0.0) {
        return Err(Error::InsufficientData(
            "a linear-regime point registered no counts on arm 2".into(),
        ));
    }

    // Efficiency ratio from the per-point count ratios.
    let ratios: Vec<f64> = linear
        .iter()
        .map(|p| p.mean_count1 / p.mean_count2)
        .collect();
    let ratio_ses: Vec<f64> = linear
        .iter()
        .zip(&ratios)
        .map(|(p, r)| {
            let rel1 = p.mean_count1_se / p.mean_count1.max(1e-300);
            let rel2 = p.mean_count2_se / p.mean_count2.max(1e-300);
            r * (rel1 * rel1 + rel2 * rel2).sqrt()
        })
        .collect();
    let (k_hat, k_se) = weighted_mean(&ratios, &ratio_ses);

    // Absolute scale from the noise reduction factor.
    let nrfs: Vec<f64> = linear.iter().map(|p| p.nrf).collect();
    let nrf_ses: Vec<f64> = linear.iter().map(|p| p.nrf_se).collect();
    let (nrf_mean, nrf_mean_se) = weighted_mean(&nrfs, &nrf_ses);
    if nrf_mean >= 1.0 {
        return Err(Error::NonQuantumData(format!(
            "measured noise reduction factor {nrf_mean} shows no photon-number correlation"
        )));
    }

    let eta1 = (1.0 - nrf_mean) * (1.0 + k_hat) / 2.0;
    if eta1 <= 0.0 || eta1 > 1.0 + 1e-6 {
        return Err(Error::NonQuantumData(format!(
            "estimated efficiency {eta1} falls outside (0, 1]"
        )));
    }
    let eta1 = eta1.min(1.0);
    let eta2 = eta1 / k_hat;
    let eta1_se = (((1.0 + k_hat) / 2.0 * nrf_mean_se).powi(2)
        + ((1.0 - nrf_mean) / 2.0 * k_se).powi(2))
    .sqrt();
    let eta2_se = ((eta1_se / k_hat).powi(2) + (eta1 / (k_hat * k_hat) * k_se).powi(2)).sqrt();

    // Heterogeneity of the NRF points around the pooled value.
    let fit_residual: f64 = nrfs
        .iter()
        .zip(&nrf_ses)
        .map(|(&v, &s)| {
            if s > 0.0 {
                ((v - nrf_mean) / s).powi(2)
            } else {
                0.0
            }
        })
        .sum();

    Ok(CalibrationResult {
        method: CalibrationMethod::TwbLinear,
        k_ratio: k_hat,
        k_ratio_se: k_se,
        eta1,
        eta1_se,
        eta2,
        eta2_se,
        n1_hat: None,
        n2_hat: None,
        fit_residual,
        degenerate: false,
    })
}

/// Read the saturation values off the plateau of a run.
///
/// Requires the last two grid points to agree within `flat_tolerance`
/// relatively on both arms; returns the nearest integers to the plateau
/// means.
pub fn detect_saturation(run: &CalibrationRun, flat_tolerance: f64) -> Result<(usize, usize)> {
    let pts = run.points();
    let last = &pts[pts.len() - 1];
    let prev = &pts[pts.len() - 2];
    for (arm, m_last, m_prev) in [
        (1, last.mean_count1, prev.mean_count1),
        (2, last.mean_count2, prev.mean_count2),
    ] {
        if m_last <= 0.0 || relative_change(m_last, m_prev) >= flat_tolerance {
            return Err(Error::SaturationNotReached(format!(
                "arm {arm} mean count still changes by {:.3e} relative between the last \
                 two drive settings (tolerance {flat_tolerance:.1e}); extend the grid",
                relative_change(m_last, m_prev)
            )));
        }
    }
    let n1 = last.mean_count1.round() as usize;
    let n2 = last.mean_count2.round() as usize;
    if n1 == 0 || n2 == 0 {
        return Err(Error::SaturationNotReached(
            "plateau means round to zero counts".into(),
        ));
    }
    Ok((n1, n2))
}

/// Smallest NRF scale the estimator can resolve at a point; floors the fit
/// weights where the sample variance collapsed to zero.
fn nrf_resolution(p: &CalibrationPoint) -> f64 {
    let s = (p.mean_count1 + p.mean_count2).max(1e-300);
    1.0 / (p.trials.max(1) as f64 * s)
}

/// Coherent-state nonlinear calibration.
///
/// Detects the saturation values from the plateau, then fits the measured
/// NRF against its analytic form over the known drive means by multistart
/// simplex descent on (eta1, eta2).
pub fn calibrate_tmc_nonlinear(run: &CalibrationRun) -> Result<CalibrationResult> {
    if run.source_kind() != SourceKind::Tmc {
        return Err(Error::Domain(format!(
            "the nonlinear protocol requires a coherent-state run, got {}",
            run.source_kind()
        )));
    }
    let (n1_hat, n2_hat) = detect_saturation(run, DEFAULT_FLAT_TOLERANCE)?;
    let pts = run.points();
    let all_exact = pts.iter().all(|p| p.nrf_se == 0.0);

    let objective = |x: &[f64; 2]| -> f64 {
        let (e1, e2) = (x[0], x[1]);
        if !(1e-6..=1.0).contains(&e1) || !(1e-6..=1.0).contains(&e2) {
            // Push the simplex back into the box.
            let overshoot = (e1 - e1.clamp(1e-6, 1.0)).abs() + (e2 - e2.clamp(1e-6, 1.0)).abs();
            return 1e12 * (1.0 + overshoot);
        }
        let d1 = DetectorModel::new(e1, n1_hat).expect("bounded efficiency");
        let d2 = DetectorModel::new(e2, n2_hat).expect("bounded efficiency");
        let mut chi2 = 0.0;
        for p in pts {
            let model = match nrf(SourceKind::Tmc, &d1, &d2, p.mean_photons) {
                Ok(v) => v,
                Err(_) => return 1e12,
            };
            let weight = if all_exact {
                1.0
            } else {
                1.0 / p.nrf_se.max(nrf_resolution(p))
            };
            chi2 += ((p.nrf - model) * weight).powi(2);
        }
        chi2
    };

    // Deterministic multistart over a coarse efficiency lattice.
    let starts: [[f64; 2]; 8] = [
        [0.2, 0.3],
        [0.2, 0.7],
        [0.4, 0.3],
        [0.4, 0.7],
        [0.6, 0.3],
        [0.6, 0.7],
        [0.8, 0.3],
        [0.8, 0.7],
    ];
    let outcomes: Vec<_> = starts
        .iter()
        .map(|&s| nelder_mead_2d(objective, s, 0.15, SIMPLEX_DIAMETER_TOL, SIMPLEX_MAX_ITER))
        .collect();

    let best = outcomes
        .iter()
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .expect("at least one start");

    // Distinct minima with comparable residuals flag a degenerate fit.
    let mut degenerate = false;
    for (i, a) in outcomes.iter().enumerate() {
        for b in &outcomes[i + 1..] {
            let dist = ((a.x[0] - b.x[0]).powi(2) + (a.x[1] - b.x[1]).powi(2)).sqrt();
            let scale = a.value.abs().max(b.value.abs()).max(1e-12);
            if dist > DEGENERACY_DISTANCE
                && (a.value - b.value).abs() <= DEGENERACY_RESIDUAL_WINDOW * scale
            {
                degenerate = true;
            }
        }
    }

    // Equal saturation values make the NRF curve symmetric under arm
    // exchange; order the pair by the measured count ratio.
    let (mut eta1, mut eta2) = (best.x[0], best.x[1]);
    if n1_hat == n2_hat {
        let first = &pts[0];
        let data_says_arm1_stronger = first.mean_count1 >= first.mean_count2;
        if data_says_arm1_stronger != (eta1 >= eta2) {
            std::mem::swap(&mut eta1, &mut eta2);
        }
    }

    let residual = best.value;
    if !all_exact {
        let dof = pts.len().saturating_sub(2).max(1);
        let gate = chi_square_quantile(0.99, dof)?;
        if residual > gate {
            return Err(Error::ModelMismatch(format!(
                "fit residual {residual:.2} exceeds the chi-square 99th percentile {gate:.2} \
                 at {dof} degrees of freedom"
            )));
        }
    }

    // Curvature-based uncertainties at the minimum.
    let (eta1_se, eta2_se) = if all_exact {
        (0.0, 0.0)
    } else {
        curvature_uncertainty(&objective, [eta1, eta2])
    };

    let k_ratio = eta1 / eta2;
    let k_ratio_se = if eta2 > 0.0 {
        k_ratio
            * ((eta1_se / eta1.max(1e-300)).powi(2) + (eta2_se / eta2.max(1e-300)).powi(2)).sqrt()
    } else {
        f64::NAN
    };

    Ok(CalibrationResult {
        method: CalibrationMethod::TmcNonlinear,
        k_ratio,
        k_ratio_se,
        eta1,
        eta1_se,
        eta2,
        eta2_se,
        n1_hat: Some(n1_hat),
        n2_hat: Some(n2_hat),
        fit_residual: residual,
        degenerate,
    })
}

/// 1-sigma parameter uncertainties from the finite-difference curvature of
/// a chi-square surface at its minimum.
fn curvature_uncertainty<F: Fn(&[f64; 2]) -> f64>(f: &F, x: [f64; 2]) -> (f64, f64) {
    let h = 1e-4;
    let at = |dx: f64, dy: f64| f(&[(x[0] + dx).clamp(1e-6, 1.0), (x[1] + dy).clamp(1e-6, 1.0)]);
    let f0 = at(0.0, 0.0);
    let hxx = (at(h, 0.0) - 2.0 * f0 + at(-h, 0.0)) / (h * h);
    let hyy = (at(0.0, h) - 2.0 * f0 + at(0.0, -h)) / (h * h);
    let hxy = (at(h, h) - at(h, -h) - at(-h, h) + at(-h, -h)) / (4.0 * h * h);
    let det = hxx * hyy - hxy * hxy;
    if det <= 0.0 || hxx <= 0.0 {
        return (f64::NAN, f64::NAN);
    }
    // Chi-square curvature: covariance = 2 H^{-1}.
    let se1 = (2.0 * hyy / det).sqrt();
    let se2 = (2.0 * hxx / det).sqrt();
    (se1, se2)
}

/// Invert the Poissonian response curve: find the drive mean at which the
/// detector registers the given mean count.
///
/// The response is strictly increasing below its plateau, so bisection
/// converges to the unique solution.
pub fn infer_mean_from_count(det: &DetectorModel, measured_mean: f64) -> Result<f64> {
    let cap = det.max_count() as f64;
    if !(0.0..cap).contains(&measured_mean) {
        return Err(Error::Domain(format!(
            "measured mean count must lie in [0, {cap}), got {measured_mean}"
        )));
    }
    if det.efficiency() == 0.0 {
        return Err(Error::Domain(
            "a dark detector's response cannot be inverted".into(),
        ));
    }
    if measured_mean == 0.0 {
        return Ok(0.0);
    }
    let mut hi = (measured_mean / det.efficiency()).max(1.0);
    let mut tries = 0;
    while poisson_mean_count(det, hi)? < measured_mean {
        hi *= 2.0;
        tries += 1;
        if tries > 200 {
            return Err(Error::Numerical(format!(
                "count {measured_mean} is unreachably close to the plateau"
            )));
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let value = poisson_mean_count(det, mid)?;
        if (value - measured_mean).abs() <= 1e-12 * measured_mean.max(1.0) {
            return Ok(mid);
        }
        if value < measured_mean {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < f64::EPSILON * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(eta: f64, cap: usize) -> DetectorModel {
        DetectorModel::new(eta, cap).unwrap()
    }

    #[test]
    fn regime_bound_reference_values() {
        let b = linear_regime_bound(&det(0.33, 1), 0.1).unwrap();
        assert!((b - 0.60606).abs() < 0.001, "got {b}");
        let b = linear_regime_bound(&det(0.85, 10), 0.1).unwrap();
        assert!((b - 5.3789).abs() < 0.01, "got {b}");
        // Bound collapses with the threshold.
        let tiny = linear_regime_bound(&det(0.33, 1), 1e-9).unwrap();
        assert!(tiny < 1e-7);
        assert!(linear_regime_bound(&det(0.0, 1), 0.1).is_err());
        assert!(linear_regime_bound(&det(0.5, 1), 0.0).is_err());
    }

    #[test]
    fn regime_bound_monotonicity() {
        let t = 0.1;
        // Decreasing in efficiency.
        let mut prev = f64::INFINITY;
        for &eta in &[0.2, 0.4, 0.6, 0.8, 1.0] {
            let b = linear_regime_bound(&det(eta, 5), t).unwrap();
            assert!(b < prev);
            prev = b;
        }
        // Increasing in the saturation value.
        let mut prev = 0.0;
        for cap in 1..=12 {
            let b = linear_regime_bound(&det(0.5, cap), t).unwrap();
            assert!(b > prev);
            prev = b;
        }
    }

    #[test]
    fn twb_linear_recovers_noiseless_inputs() {
        let d1 = det(0.6, 10);
        let d2 = det(0.4, 10);
        let run = analytic_run(SourceKind::Twb, &d1, &d2, &[0.005, 0.01, 0.02]).unwrap();
        let fit = calibrate_twb_linear(&run, DEFAULT_REGIME_THRESHOLD).unwrap();
        assert!((fit.eta1 - 0.6).abs() < 1e-10, "eta1 {}", fit.eta1);
        assert!((fit.eta2 - 0.4).abs() < 1e-10, "eta2 {}", fit.eta2);
        assert!((fit.k_ratio - 1.5).abs() < 1e-10);
    }

    #[test]
    fn twb_linear_symmetric_truth() {
        let d = det(0.7, 10);
        let run = analytic_run(SourceKind::Twb, &d, &d, &[0.005, 0.01, 0.02]).unwrap();
        let fit = calibrate_twb_linear(&run, DEFAULT_REGIME_THRESHOLD).unwrap();
        assert!((fit.k_ratio - 1.0).abs() < 1e-12);
        assert!((fit.eta1 - 0.7).abs() < 1e-10);
        assert!((fit.eta2 - 0.7).abs() < 1e-10);
    }

    #[test]
    fn twb_linear_filters_saturated_points() {
        let d1 = det(0.6, 3);
        let d2 = det(0.5, 3);
        // Grid running deep into saturation; plateau evidence appears in
        // the flat tail, and only the early points stay linear.
        let grid = [0.05, 0.1, 0.2, 5.0, 40.0, 80.0];
        let run = analytic_run(SourceKind::Twb, &d1, &d2, &grid).unwrap();
        let fit = calibrate_twb_linear(&run, DEFAULT_REGIME_THRESHOLD).unwrap();
        assert!((fit.eta1 - 0.6).abs() < 2e-3, "eta1 {}", fit.eta1);
        assert!((fit.eta2 - 0.5).abs() < 2e-3, "eta2 {}", fit.eta2);
    }

    #[test]
    fn twb_linear_insufficient_data() {
        let d = det(0.6, 3);
        // Everything saturated: plateau detected, nothing below 10% of it.
        let run = analytic_run(SourceKind::Twb, &d, &d, &[20.0, 40.0, 80.0]).unwrap();
        let err = calibrate_twb_linear(&run, DEFAULT_REGIME_THRESHOLD).unwrap_err();
        assert!(matches!(err, Error::InsufficientData(_)), "{err}");
    }

    #[test]
    fn twb_linear_rejects_uncorrelated_data() {
        let d = det(0.6, 10);
        // Coherent-state statistics mislabeled as twin-beam data.
        let tmc = analytic_run(SourceKind::Tmc, &d, &d, &[0.005, 0.01, 0.02]).unwrap();
        let mislabeled = CalibrationRun::new(SourceKind::Twb, tmc.points().to_vec()).unwrap();
        let err = calibrate_twb_linear(&mislabeled, DEFAULT_REGIME_THRESHOLD).unwrap_err();
        assert!(matches!(err, Error::NonQuantumData(_)), "{err}");
        // And the honest label is rejected up front.
        let err = calibrate_twb_linear(&tmc, DEFAULT_REGIME_THRESHOLD).unwrap_err();
        assert!(matches!(err, Error::Domain(_)), "{err}");
    }

    #[test]
    fn saturation_detection_on_analytic_plateau() {
        let d = det(0.5, 3);
        let run = analytic_run(SourceKind::Tmc, &d, &d, &[0.5, 2.0, 10.0, 40.0, 50.0]).unwrap();
        let (n1, n2) = detect_saturation(&run, DEFAULT_FLAT_TOLERANCE).unwrap();
        assert_eq!((n1, n2), (3, 3));
    }

    #[test]
    fn saturation_detection_rounds_plateau_means() {
        let mk = |mean: f64, m1: f64, m2: f64| CalibrationPoint {
            pump_setting: 0,
            mean_photons: mean,
            mean_count1: m1,
            mean_count1_se: 0.0,
            mean_count2: m2,
            mean_count2_se: 0.0,
            vdp: 0.0,
            vdp_se: 0.0,
            nrf: 0.0,
            nrf_se: 0.0,
            trials: 0,
        };
        let run = CalibrationRun::new(
            SourceKind::Tmc,
            vec![
                mk(1.0, 2.0, 2.0),
                mk(10.0, 2.9996, 2.9996),
                mk(20.0, 3.0001, 3.0001),
            ],
        )
        .unwrap();
        assert_eq!(detect_saturation(&run, 1e-3).unwrap(), (3, 3));
    }

    #[test]
    fn saturation_not_reached_is_an_error() {
        let d = det(0.5, 10);
        let run = analytic_run(SourceKind::Tmc, &d, &d, &[0.1, 0.2, 0.4]).unwrap();
        let err = detect_saturation(&run, DEFAULT_FLAT_TOLERANCE).unwrap_err();
        assert!(matches!(err, Error::SaturationNotReached(_)), "{err}");
    }

    #[test]
    fn tmc_nonlinear_recovers_noiseless_inputs() {
        let d1 = det(0.7, 3);
        let d2 = det(0.5, 3);
        let grid = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];
        let run = analytic_run(SourceKind::Tmc, &d1, &d2, &grid).unwrap();
        let fit = calibrate_tmc_nonlinear(&run).unwrap();
        assert_eq!(fit.n1_hat, Some(3));
        assert_eq!(fit.n2_hat, Some(3));
        assert!((fit.eta1 - 0.7).abs() < 1e-4, "eta1 {}", fit.eta1);
        assert!((fit.eta2 - 0.5).abs() < 1e-4, "eta2 {}", fit.eta2);
        // Equal saturation values leave the unordered pair ambiguous, so
        // the multistart must have surfaced the exchanged twin.
        assert!(fit.degenerate);
    }

    #[test]
    fn tmc_nonlinear_symmetric_truth() {
        let d = det(0.85, 4);
        let grid = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];
        let run = analytic_run(SourceKind::Tmc, &d, &d, &grid).unwrap();
        let fit = calibrate_tmc_nonlinear(&run).unwrap();
        assert!((fit.eta1 - fit.eta2).abs() < 1e-3);
        assert!((fit.eta1 - 0.85).abs() < 1e-4);
    }

    #[test]
    fn tmc_nonlinear_requires_tmc_run() {
        let d = det(0.5, 3);
        let run = analytic_run(SourceKind::Twb, &d, &d, &[1.0, 20.0, 40.0]).unwrap();
        assert!(matches!(
            calibrate_tmc_nonlinear(&run).unwrap_err(),
            Error::Domain(_)
        ));
    }

    #[test]
    fn mean_inversion_round_trip() {
        let d = det(0.65, 4);
        for &mean in &[0.01, 0.3, 2.0, 7.0] {
            let count = poisson_mean_count(&d, mean).unwrap();
            let inferred = infer_mean_from_count(&d, count).unwrap();
            let back = poisson_mean_count(&d, inferred).unwrap();
            assert!(
                (back - count).abs() <= 1e-10 * count.max(1.0),
                "mean={mean}: {back} vs {count}"
            );
        }
        assert!(infer_mean_from_count(&d, 4.0).is_err());
        assert!(infer_mean_from_count(&d, -0.1).is_err());
    }

    #[test]
    fn run_validation() {
        let d = det(0.5, 3);
        assert!(analytic_run(SourceKind::Tmc, &d, &d, &[1.0, 2.0]).is_err());
        let err =
            generate_synthetic_run(SourceKind::Twb, &d, &d, &[1.0, 2.0, 3.0], 10, 1).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
        let err =
            generate_synthetic_run(SourceKind::Twb, &d, &d, &[2.0, 1.0, 3.0], 5000, 1).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn synthetic_run_in_linear_regime() {
        let d = det(0.5, 50);
        let run =
            generate_synthetic_run(SourceKind::Tmc, &d, &d, &[0.05, 0.1, 0.2], 200_000, 9).unwrap();
        for p in run.points() {
            let expect = 0.5 * p.mean_photons;
            assert!(
                (p.mean_count1 - expect).abs() < 5.0 * p.mean_count1_se,
                "arm1 at {}",
                p.mean_photons
            );
            // Identical detectors: the two arms agree within noise.
            let combined = (p.mean_count1_se.powi(2) + p.mean_count2_se.powi(2)).sqrt();
            assert!((p.mean_count1 - p.mean_count2).abs() < 5.0 * combined);
        }
    }

    #[test]
    fn twb_nrf_departs_from_plateau_in_saturation() {
        // Unequal saturation values break the photon-number correlation
        // asymmetrically, pushing the NRF above its linear-regime plateau
        // before both arms clip.
        let d1 = det(0.6, 3);
        let d2 = det(0.6, 10);
        let run = analytic_run(SourceKind::Twb, &d1, &d2, &[0.05, 8.0, 32.0]).unwrap();
        let pts = run.points();
        let plateau = 1.0 - 0.6;
        assert!((pts[0].nrf - plateau).abs() < 0.01);
        assert!(pts[1].nrf > plateau + 0.05, "nrf {}", pts[1].nrf);
    }
}
