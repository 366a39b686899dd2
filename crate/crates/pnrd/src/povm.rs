//! Measurement model of a single lossy, saturating photon-number-resolving
//! detector.
//!
//! A detector with quantum efficiency eta thins the incident photon number
//! binomially; a detector that resolves at most `max_count` photons reports
//! every larger thinned count as exactly `max_count`. All outcome operators
//! are diagonal in the number basis, so the model reduces to conditional
//! probabilities between integer photon numbers and integer photocounts.

use crate::error::{Error, Result};
use crate::special::ln_binomial;
use crate::states::NumberDistribution;

/// Slack accepted on the total mass of an input distribution.
const INPUT_NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Most negative rounding residue tolerated in the saturated outcome before
/// the computation is treated as broken.
const NEGATIVE_ROUNDOFF_LIMIT: f64 = -1e-12;

/// A lossy detector with a maximum resolvable photocount.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorModel {
    efficiency: f64,
    max_count: usize,
}

impl DetectorModel {
    /// Build a detector with quantum efficiency in [0, 1] and a maximum
    /// resolvable photocount of at least one.
    pub fn new(efficiency: f64, max_count: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&efficiency) || !efficiency.is_finite() {
            return Err(Error::Domain(format!(
                "quantum efficiency must lie in [0, 1], got {efficiency}"
            )));
        }
        if max_count == 0 {
            return Err(Error::Domain(
                "maximum resolvable photocount must be at least 1".into(),
            ));
        }
        Ok(Self {
            efficiency,
            max_count,
        })
    }

    pub fn efficiency(&self) -> f64 {
        self.efficiency
    }

    pub fn max_count(&self) -> usize {
        self.max_count
    }

    /// Odds ratio eta / (1 - eta). Undefined at unit efficiency; callers on
    /// that path must use the finite-sum routes instead.
    pub(crate) fn odds(&self) -> Result<f64> {
        if self.efficiency == 1.0 {
            return Err(Error::Domain(
                "odds ratio is undefined at unit efficiency".into(),
            ));
        }
        Ok(self.efficiency / (1.0 - self.efficiency))
    }
}

/// Photocount distribution produced by one detector: entries for
/// m = 0..=max_count.
#[derive(Debug, Clone, PartialEq)]
pub struct CountDistribution {
    probs: Vec<f64>,
}

impl CountDistribution {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, m: usize) -> f64 {
        self.probs.get(m).copied().unwrap_or(0.0)
    }

    pub fn max_count(&self) -> usize {
        self.probs.len() - 1
    }

    /// p-th moment of the photocount.
    pub fn moment(&self, p: u32) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(m, prob)| (m as f64).powi(p as i32) * prob)
            .sum()
    }
}

/// Probability that m of n incident photons survive binomial loss at the
/// given efficiency.
///
/// Evaluated in log space so photon numbers up to 1e5 and beyond stay
/// finite; exact at the efficiency endpoints where the logarithms would
/// degenerate.
pub fn loss_conditional_prob(m: usize, n: usize, efficiency: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&efficiency) || !efficiency.is_finite() {
        return Err(Error::Domain(format!(
            "quantum efficiency must lie in [0, 1], got {efficiency}"
        )));
    }
    Ok(binomial_prob(m, n, efficiency))
}

/// Unchecked binomial point probability; efficiency assumed valid.
fn binomial_prob(m: usize, n: usize, efficiency: f64) -> f64 {
    if m > n {
        return 0.0;
    }
    if efficiency == 0.0 {
        return if m == 0 { 1.0 } else { 0.0 };
    }
    if efficiency == 1.0 {
        return if m == n { 1.0 } else { 0.0 };
    }
    let ln_p =
        ln_binomial(n, m) + m as f64 * efficiency.ln() + (n - m) as f64 * (1.0 - efficiency).ln();
    ln_p.exp()
}

/// Diagonal matrix element of the detector's m-th outcome on the n-photon
/// state.
///
/// Outcomes below the saturation bin are plain binomial-loss weights; the
/// saturated outcome collects everything from `max_count` upward, computed
/// as an all-positive sum so positivity is preserved exactly.
pub fn povm_element(det: &DetectorModel, m: usize, n: usize) -> f64 {
    let cap = det.max_count;
    if m > cap {
        return 0.0;
    }
    if m < cap {
        return binomial_prob(m, n, det.efficiency);
    }
    if n < cap {
        return 0.0;
    }
    // Round-off in the positive sum can overshoot 1 by a few ulps.
    (cap..=n)
        .map(|k| binomial_prob(k, n, det.efficiency))
        .sum::<f64>()
        .min(1.0)
}

/// Push a photon-number distribution through the detector, producing the
/// photocount distribution with saturation clipping.
///
/// The saturated bin absorbs all probability not assigned to smaller
/// outcomes, so the output is normalized whenever the input is. Negative
/// round-off in that final subtraction is truncated to zero and treated as
/// an error when it exceeds the rounding budget.
pub fn apply_detector(
    det: &DetectorModel,
    input: &NumberDistribution,
) -> Result<CountDistribution> {
    let total = input.total_mass();
    if (total - 1.0).abs() > INPUT_NORMALIZATION_TOLERANCE {
        return Err(Error::Validation(format!(
            "input distribution has total mass {total}, expected 1 within {INPUT_NORMALIZATION_TOLERANCE:e}"
        )));
    }
    let cap = det.max_count;
    let mut probs = vec![0.0; cap + 1];
    for (n, &p) in input.probs().iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for (m, slot) in probs.iter_mut().enumerate().take(cap.min(n + 1)) {
            *slot += p * binomial_prob(m, n, det.efficiency);
        }
    }
    let assigned: f64 = probs[..cap].iter().sum();
    let saturated = total - assigned;
    if saturated < NEGATIVE_ROUNDOFF_LIMIT {
        return Err(Error::Numerical(format!(
            "saturated outcome fell to {saturated}, beyond the round-off budget"
        )));
    }
    probs[cap] = saturated.max(0.0);
    Ok(CountDistribution { probs })
}

/// First-order saturation coefficient of the photocount moment operators.
///
/// On the n-photon state the mean photocount is eta*n minus this value; it
/// vanishes whenever n does not exceed the maximum resolvable count. The
/// all-positive finite sum is the canonical route and remains defined at
/// unit efficiency.
pub fn coefficient_c(n: usize, det: &DetectorModel) -> f64 {
    let cap = det.max_count;
    if n <= cap {
        return 0.0;
    }
    (cap + 1..=n)
        .map(|m| (m - cap) as f64 * binomial_prob(m, n, det.efficiency))
        .sum()
}

/// Second-order saturation coefficient of the photocount moment operators.
///
/// Vanishes whenever n <= max_count + 1.
pub fn coefficient_d(n: usize, det: &DetectorModel) -> f64 {
    let cap = det.max_count;
    if n <= cap + 1 {
        return 0.0;
    }
    0.5 * (cap + 2..=n)
        .map(|m| ((m - cap) * (m - cap - 1)) as f64 * binomial_prob(m, n, det.efficiency))
        .sum::<f64>()
}

/// Terminating Gauss hypergeometric series with a nonpositive-integer
/// second parameter.
///
/// Sum over k = 0..=-b of (a)_k (b)_k z^k / ((c)_k k!) with Pochhammer
/// products accumulated iteratively, which is exact up to rounding because
/// the series terminates.
pub fn terminating_hypergeometric(a: f64, b: i64, c: f64, z: f64) -> Result<f64> {
    if b > 0 {
        return Err(Error::Domain(format!(
            "second parameter must be a nonpositive integer for the series to terminate, got {b}"
        )));
    }
    if c <= 0.0 && c == c.round() {
        return Err(Error::Domain(format!(
            "third parameter must not be a nonpositive integer, got {c}"
        )));
    }
    let k_max = (-b) as usize;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 0..k_max {
        let kf = k as f64;
        term *= (a + kf) * (b as f64 + kf) * z / ((c + kf) * (kf + 1.0));
        sum += term;
    }
    Ok(sum)
}

/// First-order saturation coefficient through the closed hypergeometric
/// form. Cross-check route only: refuses unit efficiency, where the odds
/// ratio in the prefactor diverges.
pub fn coefficient_c_hypergeometric(n: usize, det: &DetectorModel) -> Result<f64> {
    let cap = det.max_count;
    if n <= cap {
        return Ok(0.0);
    }
    let x = det.odds()?;
    let f = terminating_hypergeometric(2.0, cap as i64 - n as i64 + 1, cap as f64 + 2.0, -x)?;
    let ln_prefactor = ln_binomial(n, cap + 1)
        + (cap + 1) as f64 * x.ln()
        + n as f64 * (1.0 - det.efficiency).ln();
    Ok(ln_prefactor.exp() * f)
}

/// Second-order saturation coefficient through the closed hypergeometric
/// form. Cross-check route only: refuses unit efficiency.
pub fn coefficient_d_hypergeometric(n: usize, det: &DetectorModel) -> Result<f64> {
    let cap = det.max_count;
    if n <= cap + 1 {
        return Ok(0.0);
    }
    let x = det.odds()?;
    let f = terminating_hypergeometric(3.0, cap as i64 - n as i64 + 2, cap as f64 + 3.0, -x)?;
    let ln_prefactor = ln_binomial(n, cap + 2)
        + (cap + 2) as f64 * x.ln()
        + n as f64 * (1.0 - det.efficiency).ln();
    Ok(ln_prefactor.exp() * f)
}

/// p-th moment of the photocount on the n-photon input state.
///
/// Direct summation over the detector outcomes; requires p >= 1.
pub fn fock_moment(p: u32, n: usize, det: &DetectorModel) -> f64 {
    assert!(p >= 1, "moment order must be at least 1");
    let cap = det.max_count;
    let mut total = 0.0;
    for m in 1..cap.min(n + 1) {
        total += (m as f64).powi(p as i32) * binomial_prob(m, n, det.efficiency);
    }
    if n >= cap {
        total += (cap as f64).powi(p as i32) * povm_element(det, cap, n);
    }
    total
}

/// p-th photocount moment of an arbitrary photon-number distribution, by
/// linearity over the number basis.
pub fn expectation_moment(p: u32, det: &DetectorModel, input: &NumberDistribution) -> Result<f64> {
    let total = input.total_mass();
    if (total - 1.0).abs() > INPUT_NORMALIZATION_TOLERANCE {
        return Err(Error::Validation(format!(
            "input distribution has total mass {total}, expected 1 within {INPUT_NORMALIZATION_TOLERANCE:e}"
        )));
    }
    Ok(input
        .probs()
        .iter()
        .enumerate()
        .map(|(n, &w)| {
            if w == 0.0 {
                0.0
            } else {
                w * fock_moment(p, n, det)
            }
        })
        .sum())
}
