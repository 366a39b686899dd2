//! Scalar special functions backing the detector model: log-gamma,
//! regularized incomplete gamma, and a chi-square tail quantile.
//!
//! Everything here is plain `f64` arithmetic with no allocation, so the
//! hot loops in the statistics modules can call these freely.

use crate::error::{Error, Result};

/// Lanczos approximation, g = 7, n = 9.
#[allow(clippy::excessive_precision)]
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// Natural log of the gamma function for positive arguments.
pub fn ln_gamma(z: f64) -> f64 {
    debug_assert!(z > 0.0, "ln_gamma requires z > 0, got {z}");
    if z < 0.5 {
        // Recurrence keeps the Lanczos sum in its accurate range.
        return ln_gamma(z + 1.0) - z.ln();
    }
    let z = z - 1.0;
    let mut sum = LANCZOS_COEFFS[0];
    for (i, c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        sum += c / (z + i as f64);
    }
    let t = z + 7.5;
    HALF_LN_TWO_PI + (z + 0.5) * t.ln() - t + sum.ln()
}

/// ln(n!)
pub fn ln_factorial(n: usize) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

/// ln C(n, k) for k <= n.
pub fn ln_binomial(n: usize, k: usize) -> f64 {
    debug_assert!(k <= n);
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

const MAX_ITER: usize = 500;

/// Regularized incomplete gamma pair (P(a, x), Q(a, x)) with P + Q = 1.
///
/// Series expansion for x < a + 1, Lentz continued fraction otherwise,
/// so the smaller of the two is always computed directly.
pub fn reg_gamma_pair(a: f64, x: f64) -> Result<(f64, f64)> {
    if a <= 0.0 || x < 0.0 || !a.is_finite() || !x.is_finite() {
        return Err(Error::Domain(format!(
            "reg_gamma_pair requires a > 0 and x >= 0, got a={a}, x={x}"
        )));
    }
    if x == 0.0 {
        return Ok((0.0, 1.0));
    }
    let log_prefactor = a * x.ln() - x - ln_gamma(a);
    let prefactor = log_prefactor.exp();
    if x < a + 1.0 {
        let p = lower_series(a, x, prefactor)?;
        Ok((p, 1.0 - p))
    } else {
        let q = upper_continued_fraction(a, x, prefactor)?;
        Ok((1.0 - q, q))
    }
}

/// P(a, x) by the ascending series.
fn lower_series(a: f64, x: f64, prefactor: f64) -> Result<f64> {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut ap = a;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * f64::EPSILON {
            return Ok((prefactor * sum).clamp(0.0, 1.0));
        }
    }
    Err(Error::Numerical(format!(
        "incomplete gamma series failed to converge at a={a}, x={x}"
    )))
}

/// Q(a, x) by the modified Lentz continued fraction.
fn upper_continued_fraction(a: f64, x: f64, prefactor: f64) -> Result<f64> {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / if b.abs() < TINY { TINY } else { b };
    let mut h = d;
    for i in 1..=MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < f64::EPSILON {
            return Ok((prefactor * h).clamp(0.0, 1.0));
        }
    }
    Err(Error::Numerical(format!(
        "incomplete gamma continued fraction failed to converge at a={a}, x={x}"
    )))
}

/// Cumulative probability P(X <= n) for X ~ Poisson(x).
///
/// This equals exp(-x) * sum_{k<=n} x^k / k!, evaluated through the
/// regularized upper incomplete gamma function so that large x does not
/// trigger the catastrophic cancellation of the literal partial sum.
pub fn poisson_cdf(n: i64, x: f64) -> f64 {
    if n < 0 {
        return 0.0;
    }
    if x == 0.0 {
        return 1.0;
    }
    let (_p, q) = reg_gamma_pair(n as f64 + 1.0, x)
        .expect("poisson_cdf arguments are validated by construction");
    q
}

/// Approximate chi-square quantile via the Wilson-Hilferty transform.
///
/// Accurate to a few parts in 1e3 for dof >= 2, which is sufficient for a
/// goodness-of-fit alarm threshold.
pub fn chi_square_quantile(p: f64, dof: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&p) || dof == 0 {
        return Err(Error::Domain(format!(
            "chi_square_quantile requires 0 <= p < 1 and dof >= 1, got p={p}, dof={dof}"
        )));
    }
    let z = standard_normal_quantile(p);
    let k = dof as f64;
    let t = 1.0 - 2.0 / (9.0 * k) + z * (2.0 / (9.0 * k)).sqrt();
    Ok(k * t * t * t)
}

/// Acklam's rational approximation to the standard normal quantile.
#[allow(clippy::excessive_precision)]
fn standard_normal_quantile(p: f64) -> f64 {
    debug_assert!((0.0..1.0).contains(&p) && p > 0.0);
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_690e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}
