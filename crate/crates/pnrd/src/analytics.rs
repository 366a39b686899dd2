//! Closed-form photocount statistics for the two benchmark sources.
//!
//! Under Poissonian illumination the mean and second moment of a lossy,
//! saturating detector have closed forms in terms of the exponential sum
//! function. Evaluating those forms literally cancels catastrophically
//! once the detector is deep in saturation, so this module routes them
//! through the regularized incomplete gamma function instead (the partial
//! exponential sum times exp(-x) is exactly the Poisson CDF).
//!
//! On top of the single-detector moments sit the joint quantities:
//! variance of the difference of photocounts (VDP) for the two-mode
//! coherent and twin-beam states, the noise reduction factor (NRF), the
//! discrimination measure Q with a one-dimensional optimizer, and the full
//! difference-count distribution as an internal consistency oracle.

use crate::error::{Error, Result};
use crate::optimize::golden_section_max;
use crate::povm::{apply_detector, coefficient_c, povm_element, DetectorModel};
use crate::special::{ln_gamma, poisson_cdf, reg_gamma_pair};
use crate::states::{NumberDistribution, SourceKind, TwoModeSource};

/// Partial sum of the exponential series through order n.
///
/// n = -1 denotes the empty sum. This is the literal evaluation; for the
/// numerically stable product with exp(-x) use `special::poisson_cdf`.
pub fn exp_sum(n: i64, x: f64) -> f64 {
    if n < 0 {
        return 0.0;
    }
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..=n {
        term *= x / k as f64;
        sum += term;
    }
    sum
}

/// Mean photocount of a saturating detector illuminated by Poissonian
/// light of the given mean photon number.
///
/// Monotone nondecreasing in the mean and bounded by the maximum
/// resolvable count.
pub fn poisson_mean_count(det: &DetectorModel, mean: f64) -> Result<f64> {
    if !mean.is_finite() || mean < 0.0 {
        return Err(Error::Domain(format!(
            "mean photon number must be finite and nonnegative, got {mean}"
        )));
    }
    let cap = det.max_count() as f64;
    let x = det.efficiency() * mean;
    let (p, _q) = reg_gamma_pair(cap, x)?;
    let low_tail = poisson_cdf(det.max_count() as i64 - 2, x);
    Ok(cap * p + x * low_tail)
}

/// Second moment of the photocount under Poissonian illumination.
pub fn poisson_second_moment(det: &DetectorModel, mean: f64) -> Result<f64> {
    if !mean.is_finite() || mean < 0.0 {
        return Err(Error::Domain(format!(
            "mean photon number must be finite and nonnegative, got {mean}"
        )));
    }
    let cap = det.max_count() as f64;
    let x = det.efficiency() * mean;
    let (p, q) = reg_gamma_pair(cap, x)?;
    let middle = if x == 0.0 {
        0.0
    } else {
        (cap + x) * (cap * x.ln() - x - ln_gamma(cap)).exp()
    };
    Ok((cap * cap * p + (x * x + x) * q - middle).clamp(0.0, cap * cap))
}

/// Photocount variance of one detector under Poissonian illumination.
pub fn poisson_count_variance(det: &DetectorModel, mean: f64) -> Result<f64> {
    let m = poisson_mean_count(det, mean)?;
    Ok((poisson_second_moment(det, mean)? - m * m).max(0.0))
}

/// Asymptotic regime selector for `asymptotic_mean`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Detected light overwhelms the detector: approach to the plateau.
    LargeMean,
    /// Saturation negligible: approach to the linear response.
    SmallMean,
}

/// Leading-order expansion of the mean photocount in the chosen regime.
///
/// Intended as a validation reference against `poisson_mean_count`, not as
/// a substitute for it.
pub fn asymptotic_mean(det: &DetectorModel, mean: f64, regime: Regime) -> Result<f64> {
    if !mean.is_finite() || mean < 0.0 {
        return Err(Error::Domain(format!(
            "mean photon number must be finite and nonnegative, got {mean}"
        )));
    }
    let cap = det.max_count();
    let x = det.efficiency() * mean;
    match regime {
        Regime::LargeMean => {
            // cap - exp(-x) x^(cap-1) / (cap-1)!
            let correction = if x == 0.0 {
                if cap == 1 {
                    1.0
                } else {
                    0.0
                }
            } else {
                ((cap as f64 - 1.0) * x.ln() - x - ln_gamma(cap as f64)).exp()
            };
            Ok(cap as f64 - correction)
        }
        Regime::SmallMean => {
            // x - x^(cap+1) / (cap+1)!
            let correction = if x == 0.0 {
                0.0
            } else {
                ((cap as f64 + 1.0) * x.ln() - ln_gamma(cap as f64 + 2.0)).exp()
            };
            Ok(x - correction)
        }
    }
}

/// VDP of the two-mode coherent state: the arms are independent, so the
/// variances simply add.
pub fn vdp_tmc(det1: &DetectorModel, det2: &DetectorModel, mean: f64) -> Result<f64> {
    Ok(poisson_count_variance(det1, mean)? + poisson_count_variance(det2, mean)?)
}

/// Cross moment of the two photocounts for a diagonal correlated source.
///
/// Expansion in the saturation coefficients:
/// the product of the per-arm means on the n-photon state is
/// (eta1 n - C_n)(eta2 n - C_n'), giving four sums over the weight vector.
/// The leading term is evaluated as the weighted sum of n^2 so the
/// expression stays exact for non-Poissonian weights.
pub fn cross_moment_twb(
    det1: &DetectorModel,
    det2: &DetectorModel,
    weights: &NumberDistribution,
) -> f64 {
    let e1 = det1.efficiency();
    let e2 = det2.efficiency();
    let mut direct = 0.0;
    let mut loss1 = 0.0;
    let mut loss2 = 0.0;
    let mut joint = 0.0;
    for (n, &w) in weights.probs().iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let nf = n as f64;
        let c1 = coefficient_c(n, det1);
        let c2 = coefficient_c(n, det2);
        direct += w * nf * nf;
        loss1 += w * nf * c2;
        loss2 += w * nf * c1;
        joint += w * c1 * c2;
    }
    e1 * e2 * direct - e1 * loss1 - e2 * loss2 + joint
}

/// VDP of the twin-beam state with Poissonian weights at the given mean.
///
/// The marginals of the multimode twin beam are Poissonian, so the
/// single-arm variances are the coherent-state ones; the photon-number
/// correlation enters through the covariance of the per-number mean
/// counts. The covariance is summed in centered form: the raw cross
/// moment minus the product of means cancels terms of size mean^2 and
/// would leave a round-off floor that swamps the deep-saturation limit.
pub fn vdp_twb(det1: &DetectorModel, det2: &DetectorModel, mean: f64) -> Result<f64> {
    if !mean.is_finite() || mean < 0.0 {
        return Err(Error::Domain(format!(
            "mean photon number must be finite and nonnegative, got {mean}"
        )));
    }
    let headroom = det1.max_count().max(det2.max_count());
    let weights = NumberDistribution::poisson_with_headroom(mean, headroom)?;
    let covariance = count_covariance_twb(det1, det2, &weights);
    let v = poisson_count_variance(det1, mean)? + poisson_count_variance(det2, mean)?
        - 2.0 * covariance;
    Ok(v.max(0.0))
}

/// Covariance of the two photocounts for a diagonal correlated source,
/// accumulated around the per-arm means.
fn count_covariance_twb(
    det1: &DetectorModel,
    det2: &DetectorModel,
    weights: &NumberDistribution,
) -> f64 {
    let mean_count = |det: &DetectorModel| -> f64 {
        weights
            .probs()
            .iter()
            .enumerate()
            .map(|(n, &w)| w * (det.efficiency() * n as f64 - coefficient_c(n, det)))
            .sum()
    };
    let mu1 = mean_count(det1);
    let mu2 = mean_count(det2);
    weights
        .probs()
        .iter()
        .enumerate()
        .map(|(n, &w)| {
            if w == 0.0 {
                return 0.0;
            }
            let nf = n as f64;
            let f1 = det1.efficiency() * nf - coefficient_c(n, det1);
            let f2 = det2.efficiency() * nf - coefficient_c(n, det2);
            w * (f1 - mu1) * (f2 - mu2)
        })
        .sum()
}

/// Noise reduction factor: VDP normalized by the summed mean photocounts.
pub fn nrf(kind: SourceKind, det1: &DetectorModel, det2: &DetectorModel, mean: f64) -> Result<f64> {
    if !mean.is_finite() || mean <= 0.0 {
        return Err(Error::Domain(format!(
            "noise reduction factor requires a positive mean photon number, got {mean}"
        )));
    }
    let denom = poisson_mean_count(det1, mean)? + poisson_mean_count(det2, mean)?;
    if denom <= 0.0 {
        return Err(Error::Domain(
            "mean photocounts vanish; noise reduction factor is undefined".into(),
        ));
    }
    let v = match kind {
        SourceKind::Tmc => vdp_tmc(det1, det2, mean)?,
        SourceKind::Twb => vdp_twb(det1, det2, mean)?,
        SourceKind::CustomCorrelated => {
            return Err(Error::Domain(
                "noise reduction factor is parametrized for TMC and TWB sources only".into(),
            ))
        }
    };
    Ok(v / denom)
}

/// Discrimination measure: VDP of the coherent benchmark minus VDP of the
/// twin beam, at identical detectors and mean.
pub fn q_measure(det1: &DetectorModel, det2: &DetectorModel, mean: f64) -> Result<f64> {
    Ok(vdp_tmc(det1, det2, mean)? - vdp_twb(det1, det2, mean)?)
}

/// Which parameter `optimize_q` scans.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VaryParameter {
    /// Scan the mean photon number; `fixed_value` supplies the efficiency.
    Mean,
    /// Scan the efficiency of both detectors; `fixed_value` supplies the
    /// mean photon number.
    Efficiency,
}

/// Located maximum of the discrimination measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QOptimum {
    /// Argument (mean or efficiency) at which Q peaks.
    pub argument: f64,
    /// Peak Q value.
    pub value: f64,
    /// Set when the coarse scan bracketed more than one interior maximum.
    pub multimodal: bool,
}

const SCAN_POINTS: usize = 128;
const REFINE_TOL: f64 = 1e-6;

/// Maximize Q over one parameter with both detectors balanced on the
/// template's maximum count.
///
/// A 128-point scan brackets the best maximum, golden-section search
/// refines it to 1e-6 in the argument. If the scan reveals several strict
/// interior maxima the best bracket is refined and the result is flagged
/// multimodal.
pub fn optimize_q(
    template: &DetectorModel,
    vary: VaryParameter,
    fixed_value: f64,
    interval: (f64, f64),
) -> Result<QOptimum> {
    let (lo, hi) = interval;
    if !(lo.is_finite() && hi.is_finite()) || lo <= 0.0 || hi <= lo {
        return Err(Error::Domain(format!(
            "search interval must be positive, finite, and nondegenerate, got [{lo}, {hi}]"
        )));
    }
    let cap = template.max_count();
    let eval: Box<dyn Fn(f64) -> Result<f64>> = match vary {
        VaryParameter::Mean => {
            let det = DetectorModel::new(fixed_value, cap)?;
            Box::new(move |mean| q_measure(&det, &det, mean))
        }
        VaryParameter::Efficiency => {
            if hi > 1.0 {
                return Err(Error::Domain(format!(
                    "efficiency scan interval must stay within (0, 1], got upper end {hi}"
                )));
            }
            if !fixed_value.is_finite() || fixed_value < 0.0 {
                return Err(Error::Domain(format!(
                    "fixed mean photon number must be finite and nonnegative, got {fixed_value}"
                )));
            }
            Box::new(move |eta| {
                let det = DetectorModel::new(eta, cap)?;
                q_measure(&det, &det, fixed_value)
            })
        }
    };

    let step = (hi - lo) / (SCAN_POINTS - 1) as f64;
    let args: Vec<f64> = (0..SCAN_POINTS).map(|i| lo + i as f64 * step).collect();
    let mut values = Vec::with_capacity(SCAN_POINTS);
    for &a in &args {
        values.push(eval(a)?);
    }

    let mut best = 0;
    for i in 1..SCAN_POINTS {
        if values[i] > values[best] {
            best = i;
        }
    }
    let strict_maxima = (1..SCAN_POINTS - 1)
        .filter(|&i| values[i] > values[i - 1] && values[i] > values[i + 1])
        .count();

    let bracket_lo = args[best.saturating_sub(1)];
    let bracket_hi = args[(best + 1).min(SCAN_POINTS - 1)];
    let (argument, value) = golden_section_max(
        |a| eval(a).unwrap_or(f64::NEG_INFINITY),
        bracket_lo,
        bracket_hi,
        REFINE_TOL,
    );
    // Keep the grid point when refinement cannot improve on it.
    let (argument, value) = if values[best] > value {
        (args[best], values[best])
    } else {
        (argument, value)
    };
    Ok(QOptimum {
        argument,
        value,
        multimodal: strict_maxima > 1,
    })
}

/// Distribution of the difference d = m1 - m2 of the two photocounts.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceDistribution {
    min_d: i64,
    probs: Vec<f64>,
}

impl DifferenceDistribution {
    /// Probability of a particular difference value.
    pub fn prob(&self, d: i64) -> f64 {
        if d < self.min_d {
            return 0.0;
        }
        self.probs
            .get((d - self.min_d) as usize)
            .copied()
            .unwrap_or(0.0)
    }

    /// Iterate over (difference, probability) pairs across the support.
    pub fn support(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.probs
            .iter()
            .enumerate()
            .map(move |(i, &p)| (self.min_d + i as i64, p))
    }

    pub fn mean(&self) -> f64 {
        self.support().map(|(d, p)| d as f64 * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        let second: f64 = self.support().map(|(d, p)| (d * d) as f64 * p).sum();
        (second - mean * mean).max(0.0)
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum()
    }
}

/// Joint photocount distribution of the two detectors,
/// indexed [m1][m2].
///
/// For the coherent source the arms factorize; for diagonal sources the
/// arms are conditionally independent given the photon number, so the
/// joint is the weight-averaged outer product of the per-number outcome
/// vectors.
pub fn joint_count_distribution(
    source: &TwoModeSource,
    det1: &DetectorModel,
    det2: &DetectorModel,
) -> Result<Vec<Vec<f64>>> {
    let cap1 = det1.max_count();
    let cap2 = det2.max_count();
    match source.kind() {
        SourceKind::Tmc => {
            let arm1 = apply_detector(det1, source.marginal())?;
            let arm2 = apply_detector(det2, source.marginal())?;
            Ok(arm1
                .probs()
                .iter()
                .map(|&p1| arm2.probs().iter().map(|&p2| p1 * p2).collect())
                .collect())
        }
        SourceKind::Twb | SourceKind::CustomCorrelated => {
            let mut joint = vec![vec![0.0; cap2 + 1]; cap1 + 1];
            for (n, &w) in source.weights().probs().iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let v1: Vec<f64> = (0..=cap1).map(|m| povm_element(det1, m, n)).collect();
                let v2: Vec<f64> = (0..=cap2).map(|m| povm_element(det2, m, n)).collect();
                for (m1, &p1) in v1.iter().enumerate() {
                    if p1 == 0.0 {
                        continue;
                    }
                    for (m2, &p2) in v2.iter().enumerate() {
                        joint[m1][m2] += w * p1 * p2;
                    }
                }
            }
            Ok(joint)
        }
    }
}

/// Full distribution of the photocount difference for a source and a pair
/// of detectors.
pub fn difference_distribution(
    source: &TwoModeSource,
    det1: &DetectorModel,
    det2: &DetectorModel,
) -> Result<DifferenceDistribution> {
    let joint = joint_count_distribution(source, det1, det2)?;
    let cap1 = det1.max_count() as i64;
    let cap2 = det2.max_count() as i64;
    let min_d = -cap2;
    let mut probs = vec![0.0; (cap1 + cap2 + 1) as usize];
    for (m1, row) in joint.iter().enumerate() {
        for (m2, &p) in row.iter().enumerate() {
            let d = m1 as i64 - m2 as i64;
            probs[(d - min_d) as usize] += p;
        }
    }
    Ok(DifferenceDistribution { min_d, probs })
}

/// Joint count statistics of a detection experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountStatistics {
    pub mean1: f64,
    pub mean2: f64,
    pub second1: f64,
    pub second2: f64,
    pub cross: f64,
    pub vdp: f64,
    /// NaN when both mean counts vanish.
    pub nrf: f64,
    pub source_kind: SourceKind,
}

/// Assemble the joint statistics of a source and detector pair through the
/// outcome-probability route (no closed forms), which makes this an
/// independent cross-check of the analytic expressions.
pub fn count_statistics(
    source: &TwoModeSource,
    det1: &DetectorModel,
    det2: &DetectorModel,
) -> Result<CountStatistics> {
    let joint = joint_count_distribution(source, det1, det2)?;
    let mut mean1 = 0.0;
    let mut mean2 = 0.0;
    let mut second1 = 0.0;
    let mut second2 = 0.0;
    let mut cross = 0.0;
    for (m1, row) in joint.iter().enumerate() {
        let m1f = m1 as f64;
        for (m2, &p) in row.iter().enumerate() {
            let m2f = m2 as f64;
            mean1 += m1f * p;
            mean2 += m2f * p;
            second1 += m1f * m1f * p;
            second2 += m2f * m2f * p;
            cross += m1f * m2f * p;
        }
    }
    let vdp = (second1 + second2 - 2.0 * cross - (mean1 - mean2) * (mean1 - mean2)).max(0.0);
    let denom = mean1 + mean2;
    let nrf = if denom > 0.0 { vdp / denom } else { f64::NAN };
    Ok(CountStatistics {
        mean1,
        mean2,
        second1,
        second2,
        cross,
        vdp,
        nrf,
        source_kind: source.kind(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::povm::{expectation_moment, fock_moment};
    use proptest::prelude::*;

    fn det(eta: f64, cap: usize) -> DetectorModel {
        DetectorModel::new(eta, cap).unwrap()
    }

    #[test]
    fn exp_sum_examples() {
        assert_eq!(exp_sum(0, 3.7), 1.0);
        assert!((exp_sum(2, 1.0) - 2.5).abs() < 1e-15);
        assert_eq!(exp_sum(-1, 9.0), 0.0);
    }

    #[test]
    fn mean_count_on_off_closed_form() {
        // A single-count detector clicks unless every photon is lost.
        let d = det(0.5, 1);
        let m = poisson_mean_count(&d, 2.0).unwrap();
        assert!((m - (1.0 - (-1.0_f64).exp())).abs() < 1e-14);
    }

    #[test]
    fn mean_count_zero_efficiency() {
        assert_eq!(poisson_mean_count(&det(0.0, 5), 7.0).unwrap(), 0.0);
    }

    #[test]
    fn mean_count_linear_regime() {
        let d = det(0.5, 50);
        assert!((poisson_mean_count(&d, 1.0).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mean_count_monotone_and_bounded() {
        let d = det(0.7, 4);
        let mut prev = 0.0;
        for i in 0..200 {
            let mean = 0.25 * i as f64;
            let m = poisson_mean_count(&d, mean).unwrap();
            assert!(m >= prev - 1e-12);
            assert!(m <= 4.0 + 1e-12);
            prev = m;
        }
    }

    #[test]
    fn mean_count_matches_direct_expectation() {
        // Independent route: expand the Poisson input explicitly.
        for &(eta, cap, mean) in &[(0.5, 3, 4.0), (0.9, 1, 0.7), (0.3, 10, 25.0)] {
            let d = det(eta, cap);
            let input = NumberDistribution::poisson_with_headroom(mean, cap).unwrap();
            let direct = expectation_moment(1, &d, &input).unwrap();
            let closed = poisson_mean_count(&d, mean).unwrap();
            assert!(
                (direct - closed).abs() < 1e-11,
                "eta={eta} cap={cap} mean={mean}: {direct} vs {closed}"
            );
        }
    }

    #[test]
    fn second_moment_equals_mean_for_binary_detector() {
        for &eta in &[0.2, 0.6, 1.0] {
            for &mean in &[0.1, 1.0, 10.0, 80.0] {
                let d = det(eta, 1);
                let m = poisson_mean_count(&d, mean).unwrap();
                let s = poisson_second_moment(&d, mean).unwrap();
                assert!((m - s).abs() < 1e-12, "eta={eta} mean={mean}");
            }
        }
    }

    #[test]
    fn second_moment_no_saturation_limit() {
        let d = det(0.6, 50);
        let mean = 2.0;
        let x: f64 = 0.6 * mean;
        let expect = x * x + x;
        assert!((poisson_second_moment(&d, mean).unwrap() - expect).abs() < 1e-10);
    }

    #[test]
    fn second_moment_saturation_asymptote() {
        for &cap in &[1_usize, 3, 10] {
            let d = det(0.5, cap);
            let mean = 10.0 * (cap as f64 + 1.0) / 0.5;
            let s = poisson_second_moment(&d, mean).unwrap();
            assert!((s - (cap * cap) as f64).abs() < 1e-6, "cap={cap}: {s}");
        }
    }

    #[test]
    fn asymptotics_bracket_exact_mean() {
        let d = det(0.4, 3);
        // Deep saturation.
        let large = asymptotic_mean(&d, 200.0, Regime::LargeMean).unwrap();
        let exact = poisson_mean_count(&d, 200.0).unwrap();
        assert!((large - exact).abs() < 1e-6);
        // Deep linear regime.
        let small = asymptotic_mean(&d, 0.01, Regime::SmallMean).unwrap();
        let exact = poisson_mean_count(&d, 0.01).unwrap();
        assert!((small - exact).abs() < 1e-10);
        assert_eq!(asymptotic_mean(&d, 0.0, Regime::SmallMean).unwrap(), 0.0);
    }

    #[test]
    fn vdp_tmc_limits() {
        assert_eq!(vdp_tmc(&det(0.5, 3), &det(0.5, 3), 0.0).unwrap(), 0.0);
        // Shot-noise limit in the linear regime.
        let v = vdp_tmc(&det(0.5, 50), &det(0.5, 50), 1.0).unwrap();
        assert!((v - 1.0).abs() < 1e-6);
        // Saturation kills the variance.
        let v = vdp_tmc(&det(0.5, 3), &det(0.5, 3), 500.0).unwrap();
        assert!(v < 1e-8);
    }

    #[test]
    fn cross_moment_perfect_detection() {
        let mean = 1.3;
        let weights = NumberDistribution::poisson_with_headroom(mean, 0).unwrap();
        let d = det(1.0, 200);
        let cross = cross_moment_twb(&d, &d, &weights);
        assert!((cross - mean * (1.0 + mean)).abs() < 1e-10 * mean.max(1.0));
    }

    #[test]
    fn cross_moment_vacuum_weights() {
        let cross = cross_moment_twb(&det(0.7, 3), &det(0.4, 5), &NumberDistribution::vacuum());
        assert_eq!(cross, 0.0);
    }

    #[test]
    fn cross_moment_matches_factorized_oracle() {
        // Losses act independently given the photon number, so the cross
        // moment is the weighted product of per-number mean counts.
        for &(e1, e2, c1, c2, mean) in &[
            (0.7, 0.4, 3_usize, 5_usize, 2.0),
            (0.5, 0.5, 1, 1, 0.6),
            (0.9, 0.2, 4, 2, 8.0),
        ] {
            let d1 = det(e1, c1);
            let d2 = det(e2, c2);
            let weights = NumberDistribution::poisson_with_headroom(mean, c1.max(c2)).unwrap();
            let implementation = cross_moment_twb(&d1, &d2, &weights);
            let oracle: f64 = weights
                .probs()
                .iter()
                .enumerate()
                .map(|(n, &w)| w * fock_moment(1, n, &d1) * fock_moment(1, n, &d2))
                .sum();
            assert!(
                (implementation - oracle).abs() < 1e-10 * oracle.abs().max(1.0),
                "config ({e1},{e2},{c1},{c2},{mean}): {implementation} vs {oracle}"
            );
        }
    }

    #[test]
    fn vdp_twb_limits() {
        // Perfect, equal detectors keep the arms identical trial by trial.
        let v = vdp_twb(&det(1.0, 40), &det(1.0, 40), 2.0).unwrap();
        assert!(v.abs() < 1e-10, "got {v}");
        // Linear regime formula.
        let (e1, e2, mean) = (0.6, 0.4, 0.05);
        let v = vdp_twb(&det(e1, 50), &det(e2, 50), mean).unwrap();
        let expect = (e1 + e2) * mean - 2.0 * e1 * e2 * mean;
        assert!((v - expect).abs() < 1e-6);
        assert_eq!(vdp_twb(&det(0.6, 3), &det(0.4, 3), 0.0).unwrap(), 0.0);
    }

    #[test]
    fn nrf_reference_values() {
        // Coherent benchmark pins the shot-noise level.
        let v = nrf(SourceKind::Tmc, &det(0.5, 50), &det(0.7, 50), 0.05).unwrap();
        assert!((v - 1.0).abs() < 1e-6);
        // Twin beam dips below it by the two-efficiency factor.
        let v = nrf(SourceKind::Twb, &det(0.6, 50), &det(0.4, 50), 0.05).unwrap();
        assert!((v - (1.0 - 2.0 * 0.6 * 0.4 / (0.6 + 0.4))).abs() < 1e-6);
        let v = nrf(SourceKind::Twb, &det(1.0, 50), &det(1.0, 50), 0.05).unwrap();
        assert!(v.abs() < 1e-10);
        assert!(nrf(SourceKind::Tmc, &det(0.5, 3), &det(0.5, 3), 0.0).is_err());
    }

    #[test]
    fn tmc_nrf_is_unity_deep_in_linear_regime() {
        // The shot-noise deviation scales like N(N+1) times the regime
        // measure (eta nbar)^N / (N+1)!, so unity to 1e-6 requires the
        // measure to sit well below 1e-9 on both arms.
        let mut checked = 0;
        for &(e1, c1) in &[(0.3, 2_usize), (0.6, 5), (0.9, 10), (0.5, 1)] {
            for &(e2, c2) in &[(0.4, 3_usize), (0.8, 8), (0.33, 1)] {
                for &mean in &[0.0005, 0.002, 0.01, 0.05, 0.2, 1.0] {
                    let measure = |eta: f64, cap: usize| {
                        let x: f64 = eta * mean;
                        x.powi(cap as i32) / crate::special::ln_gamma(cap as f64 + 2.0).exp()
                    };
                    if measure(e1, c1).max(measure(e2, c2)) >= 1e-9 {
                        continue;
                    }
                    let v = nrf(SourceKind::Tmc, &det(e1, c1), &det(e2, c2), mean).unwrap();
                    assert!(
                        (v - 1.0).abs() < 1e-6,
                        "nrf {v} at ({e1},{c1}) ({e2},{c2}) mean {mean}"
                    );
                    checked += 1;
                }
            }
        }
        assert!(checked >= 10, "regime filter left only {checked} cases");
    }

    #[test]
    fn q_measure_limits() {
        assert_eq!(q_measure(&det(0.5, 3), &det(0.5, 3), 0.0).unwrap(), 0.0);
        let (e1, e2, mean) = (0.6, 0.4, 0.02);
        let q = q_measure(&det(e1, 50), &det(e2, 50), mean).unwrap();
        assert!((q - 2.0 * e1 * e2 * mean).abs() < 1e-6);
    }

    #[test]
    fn q_nonnegative_over_grid() {
        for &eta in &[0.1, 0.5, 0.9, 1.0] {
            for &cap in &[1_usize, 3, 10] {
                for &mean in &[0.1, 1.0, 5.0, 20.0, 50.0] {
                    let d = det(eta, cap);
                    let q = q_measure(&d, &d, mean).unwrap();
                    assert!(q >= -1e-10, "eta={eta} cap={cap} mean={mean}: {q}");
                }
            }
        }
    }

    #[test]
    fn optimize_q_flat_at_zero_efficiency() {
        let out = optimize_q(&det(0.0, 3), VaryParameter::Mean, 0.0, (0.1, 10.0)).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(!out.multimodal);
    }

    #[test]
    fn optimize_q_local_maximality() {
        let out = optimize_q(&det(0.5, 3), VaryParameter::Mean, 0.5, (0.1, 30.0)).unwrap();
        let d = det(0.5, 3);
        let at = |m: f64| q_measure(&d, &d, m).unwrap();
        assert!(out.value >= at(out.argument - 1e-3) - 1e-12);
        assert!(out.value >= at(out.argument + 1e-3) - 1e-12);
    }

    #[test]
    fn optimize_q_favors_loss_at_high_mean() {
        let out = optimize_q(&det(0.5, 3), VaryParameter::Efficiency, 8.0, (0.3, 1.0)).unwrap();
        assert!(out.argument < 1.0 - 1e-3, "argmax {}", out.argument);
    }

    #[test]
    fn optimize_q_rejects_bad_intervals() {
        let d = det(0.5, 3);
        assert!(optimize_q(&d, VaryParameter::Mean, 0.5, (1.0, 1.0)).is_err());
        assert!(optimize_q(&d, VaryParameter::Mean, 0.5, (-1.0, 2.0)).is_err());
        assert!(optimize_q(&d, VaryParameter::Efficiency, 1.0, (0.1, 1.5)).is_err());
    }

    #[test]
    fn difference_distribution_vacuum() {
        let source = TwoModeSource::custom_correlated(NumberDistribution::vacuum());
        let dd = difference_distribution(&source, &det(0.5, 2), &det(0.5, 2)).unwrap();
        assert_eq!(dd.prob(0), 1.0);
    }

    #[test]
    fn difference_distribution_symmetry_for_identical_arms() {
        let source = TwoModeSource::tmc(1.5).unwrap();
        let d = det(0.6, 4);
        let dd = difference_distribution(&source, &d, &d).unwrap();
        for k in 0..=4_i64 {
            assert!((dd.prob(k) - dd.prob(-k)).abs() < 1e-12, "d={k}");
        }
    }

    #[test]
    fn difference_moments_match_closed_forms() {
        for &mean in &[0.3, 2.0, 9.0] {
            let d1 = det(0.7, 4);
            let d2 = det(0.5, 3);
            let tmc = TwoModeSource::tmc(mean).unwrap();
            let dd = difference_distribution(&tmc, &d1, &d2).unwrap();
            let v = vdp_tmc(&d1, &d2, mean).unwrap();
            assert!((dd.variance() - v).abs() < 1e-10, "tmc mean={mean}");

            let twb = TwoModeSource::twb(mean).unwrap();
            let dd = difference_distribution(&twb, &d1, &d2).unwrap();
            let v = vdp_twb(&d1, &d2, mean).unwrap();
            assert!((dd.variance() - v).abs() < 1e-10, "twb mean={mean}");
        }
    }

    #[test]
    fn count_statistics_invariants() {
        for kind in [SourceKind::Tmc, SourceKind::Twb] {
            let source = TwoModeSource::make(kind, 2.5).unwrap();
            let stats = count_statistics(&source, &det(0.7, 4), &det(0.5, 3)).unwrap();
            assert!(stats.second1 + 1e-10 >= stats.mean1 * stats.mean1);
            assert!(stats.second2 + 1e-10 >= stats.mean2 * stats.mean2);
            let reconstructed = stats.second1 + stats.second2
                - 2.0 * stats.cross
                - (stats.mean1 - stats.mean2) * (stats.mean1 - stats.mean2);
            assert!((stats.vdp - reconstructed).abs() < 1e-10);
        }
    }

    #[test]
    fn tmc_joint_count_distribution_factorizes() {
        let source = TwoModeSource::tmc(1.1).unwrap();
        let d1 = det(0.8, 3);
        let d2 = det(0.4, 2);
        let joint = joint_count_distribution(&source, &d1, &d2).unwrap();
        let arm1 = apply_detector(&d1, source.marginal()).unwrap();
        let arm2 = apply_detector(&d2, source.marginal()).unwrap();
        for (m1, row) in joint.iter().enumerate() {
            for (m2, &p) in row.iter().enumerate() {
                assert!((p - arm1.prob(m1) * arm2.prob(m2)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cutoff_adequacy() {
        // Enlarging the support must not move any downstream moment.
        let d = det(0.6, 5);
        let mean = 3.0;
        let base = NumberDistribution::poisson_with_headroom(mean, 5).unwrap();
        let extended =
            NumberDistribution::poisson_with_headroom(mean, 5 + base.cutoff() / 4).unwrap();
        for p in [1, 2] {
            let a = expectation_moment(p, &d, &base).unwrap();
            let b = expectation_moment(p, &d, &extended).unwrap();
            assert!((a - b).abs() < 1e-10, "p={p}");
        }
    }

    proptest! {
        #[test]
        fn exp_sum_product_matches_stable_route(
            n in -1_i64..60,
            x in 0.0_f64..80.0,
        ) {
            let literal = exp_sum(n, x) * (-x).exp();
            let stable = poisson_cdf(n, x);
            prop_assert!((literal - stable).abs() < 1e-12);
        }

        #[test]
        fn vdp_nonnegative_and_twb_below_tmc(
            eta in 0.05_f64..=1.0,
            cap in 1_usize..8,
            mean in 0.0_f64..40.0,
        ) {
            let d = det(eta, cap);
            let tmc = vdp_tmc(&d, &d, mean).unwrap();
            let twb = vdp_twb(&d, &d, mean).unwrap();
            prop_assert!(tmc >= 0.0);
            prop_assert!(twb >= 0.0);
            prop_assert!(twb <= tmc + 1e-9);
        }

        #[test]
        fn difference_distribution_normalized(
            eta in 0.1_f64..=1.0,
            cap in 1_usize..5,
            mean in 0.0_f64..10.0,
        ) {
            let d = det(eta, cap);
            for kind in [SourceKind::Tmc, SourceKind::Twb] {
                let source = TwoModeSource::make(kind, mean).unwrap();
                let dd = difference_distribution(&source, &d, &d).unwrap();
                prop_assert!((dd.total_mass() - 1.0).abs() < 1e-12);
            }
        }
    }
}
