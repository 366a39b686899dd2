//! Photon-number statistics of the light sources under study.
//!
//! Two benchmark sources are modeled: the two-mode coherent (TMC) state,
//! whose arms carry independent Poissonian photon numbers, and the
//! twin-beam (TWB) state, whose arms are perfectly correlated in photon
//! number. A custom correlated source accepts an arbitrary diagonal
//! weight vector for non-Poissonian variants.

use crate::error::{Error, Result};
use crate::special::ln_factorial;

/// Normalization slack accepted when validating externally supplied
/// probability vectors.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;

/// Relative size of the first neglected term at which tail extension of a
/// Poisson vector stops.
const TAIL_TERM_RATIO: f64 = 1e-16;

/// Extra entries kept beyond the core of a Poisson distribution.
const CUTOFF_PADDING: usize = 30;

/// A probability distribution over photon number n = 0..cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct NumberDistribution {
    probs: Vec<f64>,
    mean_hint: Option<f64>,
}

impl NumberDistribution {
    /// Wrap an explicit probability vector, validating positivity and
    /// normalization.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Validation("empty probability vector".into()));
        }
        if probs.iter().any(|&p| !(0.0..=1.0 + 1e-15).contains(&p)) {
            return Err(Error::Validation(
                "probability entries must lie in [0, 1]".into(),
            ));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::Validation(format!(
                "probabilities sum to {total}, expected 1 within {NORMALIZATION_TOLERANCE:e}"
            )));
        }
        Ok(Self {
            probs,
            mean_hint: None,
        })
    }

    /// Wrap a probability vector without validation. Test hook for
    /// exercising downstream normalization checks.
    #[cfg(test)]
    pub(crate) fn from_probs_unchecked(probs: Vec<f64>) -> Self {
        Self {
            probs,
            mean_hint: None,
        }
    }

    /// Reduce complex amplitudes (re, im) to their squared magnitudes.
    ///
    /// Photocounting is phase insensitive, so the phases carry no
    /// observable information and are discarded here, at the boundary.
    pub fn from_amplitudes(amplitudes: &[(f64, f64)]) -> Result<Self> {
        let probs: Vec<f64> = amplitudes
            .iter()
            .map(|&(re, im)| re * re + im * im)
            .collect();
        Self::from_probs(probs)
    }

    /// The vacuum state: all probability on n = 0.
    pub fn vacuum() -> Self {
        Self {
            probs: vec![1.0],
            mean_hint: Some(0.0),
        }
    }

    /// A number (Fock) state with exactly `n` photons.
    pub fn fock(n: usize) -> Self {
        let mut probs = vec![0.0; n + 1];
        probs[n] = 1.0;
        Self {
            probs,
            mean_hint: Some(n as f64),
        }
    }

    /// Poissonian photon-number distribution with the given mean.
    pub fn poisson(mean: f64) -> Result<Self> {
        Self::poisson_with_headroom(mean, 0)
    }

    /// Poissonian distribution with extra support reserved past the core,
    /// sized so that downstream detector sums with `headroom` as the largest
    /// resolvable photocount stay converged.
    ///
    /// The cutoff is mean + 12 standard deviations plus padding, then the
    /// tail is extended while the next term is still significant relative to
    /// the running sum. The truncated tail mass is far below the
    /// normalization tolerance for any mean of practical size.
    pub fn poisson_with_headroom(mean: f64, headroom: usize) -> Result<Self> {
        if !mean.is_finite() || mean < 0.0 {
            return Err(Error::Domain(format!(
                "Poisson mean must be finite and nonnegative, got {mean}"
            )));
        }
        if mean == 0.0 {
            let mut dist = Self::vacuum();
            dist.mean_hint = Some(0.0);
            return Ok(dist);
        }
        let core = (mean + 12.0 * (mean + 1.0).sqrt()).ceil() as usize;
        let cutoff = core + headroom + CUTOFF_PADDING;
        let ln_mean = mean.ln();
        let pmf = |n: usize| (-mean + n as f64 * ln_mean - ln_factorial(n)).exp();
        let mut probs: Vec<f64> = (0..=cutoff).map(pmf).collect();
        let mut total: f64 = probs.iter().sum();
        let mut next = cutoff + 1;
        loop {
            let term = pmf(next);
            if term < TAIL_TERM_RATIO * total {
                break;
            }
            probs.push(term);
            total += term;
            next += 1;
        }
        Ok(Self {
            probs,
            mean_hint: Some(mean),
        })
    }

    /// Probability entries indexed by photon number.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Largest photon number carried by the vector.
    pub fn cutoff(&self) -> usize {
        self.probs.len() - 1
    }

    /// The known mean, when the distribution was built from one.
    pub fn mean_hint(&self) -> Option<f64> {
        self.mean_hint
    }

    /// First moment of the stored vector.
    pub fn mean(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(n, p)| n as f64 * p)
            .sum()
    }

    /// Second moment of the stored vector.
    pub fn second_moment(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(n, p)| (n as f64) * (n as f64) * p)
            .sum()
    }

    /// Total probability retained after truncation.
    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum()
    }
}

/// Construct a Poissonian photon-number distribution.
pub fn poisson_distribution(mean: f64) -> Result<NumberDistribution> {
    NumberDistribution::poisson(mean)
}

/// The kind of two-mode source.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceKind {
    /// Two-mode coherent state: independent Poissonian arms.
    Tmc,
    /// Twin-beam state: photon numbers identical in the two arms.
    Twb,
    /// Diagonal correlated source with user-supplied weights.
    CustomCorrelated,
}

impl std::fmt::Display for SourceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SourceKind::Tmc => write!(f, "tmc"),
            SourceKind::Twb => write!(f, "twb"),
            SourceKind::CustomCorrelated => write!(f, "custom"),
        }
    }
}

/// A two-mode light source feeding the joint detection.
///
/// For the TMC kind the stored weights are the Poisson marginal of either
/// arm and the joint distribution factorizes. For TWB and custom sources
/// the weights are the joint diagonal weight on |n>|n>, which is also the
/// marginal of either arm. Photocounting is phase insensitive, so only the
/// squared amplitudes are kept; any phase information is discarded at
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoModeSource {
    kind: SourceKind,
    mean_photons: f64,
    weights: NumberDistribution,
}

impl TwoModeSource {
    /// Two-mode coherent source with the given mean photon number per arm.
    pub fn tmc(mean: f64) -> Result<Self> {
        Ok(Self {
            kind: SourceKind::Tmc,
            mean_photons: mean,
            weights: NumberDistribution::poisson(mean)?,
        })
    }

    /// Twin-beam source with Poissonian diagonal weights at the given mean.
    pub fn twb(mean: f64) -> Result<Self> {
        Ok(Self {
            kind: SourceKind::Twb,
            mean_photons: mean,
            weights: NumberDistribution::poisson(mean)?,
        })
    }

    /// Diagonal correlated source with arbitrary normalized weights.
    pub fn custom_correlated(weights: NumberDistribution) -> Self {
        let mean = weights.mean();
        Self {
            kind: SourceKind::CustomCorrelated,
            mean_photons: mean,
            weights,
        }
    }

    /// Construct a parametric source by kind.
    pub fn make(kind: SourceKind, mean: f64) -> Result<Self> {
        match kind {
            SourceKind::Tmc => Self::tmc(mean),
            SourceKind::Twb => Self::twb(mean),
            SourceKind::CustomCorrelated => Err(Error::Domain(
                "custom correlated sources require an explicit weight vector".into(),
            )),
        }
    }

    pub fn kind(&self) -> SourceKind {
        self.kind
    }

    pub fn mean_photons(&self) -> f64 {
        self.mean_photons
    }

    /// Diagonal weights (TWB/custom) or Poisson marginal weights (TMC).
    pub fn weights(&self) -> &NumberDistribution {
        &self.weights
    }

    /// Photon-number marginal of either arm.
    ///
    /// Identical arms by construction: for the TMC state both arms share
    /// the Poisson marginal, and for diagonal sources the marginal equals
    /// the joint weight vector.
    pub fn marginal(&self) -> &NumberDistribution {
        &self.weights
    }

    /// Joint probability of finding n1 and n2 photons in the two arms.
    pub fn joint_prob(&self, n1: usize, n2: usize) -> f64 {
        let w = self.weights.probs();
        match self.kind {
            SourceKind::Tmc => {
                w.get(n1).copied().unwrap_or(0.0) * w.get(n2).copied().unwrap_or(0.0)
            }
            SourceKind::Twb | SourceKind::CustomCorrelated => {
                if n1 == n2 {
                    w.get(n1).copied().unwrap_or(0.0)
                } else {
                    0.0
                }
            }
        }
    }
}

/// Construct a parametric TMC or TWB source.
pub fn make_source(kind: SourceKind, mean: f64) -> Result<TwoModeSource> {
    TwoModeSource::make(kind, mean)
}
