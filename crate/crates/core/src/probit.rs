//! Standard normal CDF machinery for Probit links.
//!
//! The central region uses `erfc`; beyond |z| = 8 the lower tail is evaluated
//! through the continued fraction for Mills' ratio, so `log Φ(z)` stays finite
//! and accurate down to z = -40 and beyond, where `Φ(z)` itself underflows.
//!
//! The checked functions (`phi_cdf`, `log_phi_cdf`, ...) reject non-finite
//! input. Inner loops use the unchecked variants in [`raw`].

use crate::error::{Error, Result};

/// Lower clamp applied by [`phi_cdf`].
pub const CDF_FLOOR: f64 = 1e-300;
/// Upper clamp applied by [`phi_cdf`].
pub const CDF_CEIL: f64 = 1.0 - 1e-16;

const TAIL_SWITCH: f64 = 8.0;
const MILLS_TERMS: usize = 80;

/// A linear predictor `z'β`; always finite.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LinearIndex(f64);

impl LinearIndex {
    pub fn new(value: f64) -> Result<Self> {
        check(value)?;
        Ok(LinearIndex(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn cdf(self) -> f64 {
        raw::cdf(self.0)
    }

    pub fn log_cdf(self) -> f64 {
        raw::log_cdf(self.0)
    }

    pub fn log_ccdf(self) -> f64 {
        raw::log_cdf(-self.0)
    }
}

fn check(z: f64) -> Result<f64> {
    if z.is_finite() {
        Ok(z)
    } else {
        Err(Error::Domain(format!("non-finite normal argument {z}")))
    }
}

/// Standard normal CDF, clamped to `[CDF_FLOOR, CDF_CEIL]`.
pub fn phi_cdf(z: f64) -> Result<f64> {
    check(z).map(raw::cdf)
}

/// `log Φ(z)` without underflow.
pub fn log_phi_cdf(z: f64) -> Result<f64> {
    check(z).map(raw::log_cdf)
}

/// `log(1 − Φ(z))`, computed as `log Φ(−z)`.
pub fn log_phi_ccdf(z: f64) -> Result<f64> {
    check(z).map(|z| raw::log_cdf(-z))
}

/// Standard normal density.
pub fn phi_pdf(z: f64) -> Result<f64> {
    check(z).map(raw::pdf)
}

/// Inverse standard normal CDF for `p` in (0, 1).
pub fn phi_inv(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("normal quantile needs p in (0,1), got {p}")));
    }
    Ok(raw::quantile(p))
}

pub mod raw {
    use super::*;

    pub const LOG_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

    #[inline]
    pub fn pdf(z: f64) -> f64 {
        INV_SQRT_2PI * (-0.5 * z * z).exp()
    }

    #[inline]
    pub fn log_pdf(z: f64) -> f64 {
        -0.5 * z * z - LOG_SQRT_2PI
    }

    /// Continued fraction `x + 1/(x + 2/(x + 3/(x + …)))` for `x ≥ 8`.
    ///
    /// Returns `(f, g)` where `f = 1/R(x)` is the reciprocal Mills ratio and
    /// `g = f − x` (computed directly so it does not suffer cancellation).
    #[inline]
    pub fn mills_recip(x: f64) -> (f64, f64) {
        let mut f = x;
        for k in (2..=MILLS_TERMS).rev() {
            f = x + k as f64 / f;
        }
        let g = 1.0 / f;
        (x + g, g)
    }

    /// Unclamped Φ(z); may underflow to zero below z ≈ -38.
    #[inline]
    pub fn cdf_unclamped(z: f64) -> f64 {
        if z < -TAIL_SWITCH {
            log_cdf(z).exp()
        } else {
            0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
        }
    }

    #[inline]
    pub fn cdf(z: f64) -> f64 {
        cdf_unclamped(z).clamp(CDF_FLOOR, CDF_CEIL)
    }

    #[inline]
    pub fn log_cdf(z: f64) -> f64 {
        if z < -TAIL_SWITCH {
            let (f, _) = mills_recip(-z);
            log_pdf(z) - f.ln()
        } else if z <= 0.0 {
            (0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2)).ln()
        } else if z <= TAIL_SWITCH {
            (-0.5 * libm::erfc(z * std::f64::consts::FRAC_1_SQRT_2)).ln_1p()
        } else {
            let (f, _) = mills_recip(z);
            (-(log_pdf(z) - f.ln()).exp()).ln_1p()
        }
    }

    /// Inverse Mills ratio `φ(u)/Φ(u)` and `u + φ(u)/Φ(u)`.
    ///
    /// The second value is the curvature factor of `log Φ`; both are returned
    /// together because the lower tail computes them from the same fraction.
    #[inline]
    pub fn inv_mills(u: f64) -> (f64, f64) {
        if u < -TAIL_SWITCH {
            let (f, g) = mills_recip(-u);
            (f, g)
        } else {
            let lambda = (log_pdf(u) - log_cdf(u)).exp();
            (lambda, u + lambda)
        }
    }

    /// Acklam's rational approximation refined by one Halley step.
    pub fn quantile(p: f64) -> f64 {
        const A: [f64; 6] = [
            -3.969_683_028_665_376e1,
            2.209_460_984_245_205e2,
            -2.759_285_104_469_687e2,
            1.383_577_518_672_69e2,
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

        let x = if p < P_LOW {
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
        };

        // Halley refinement against the erfc-based CDF.
        let e = cdf_unclamped(x) - p;
        let u = e / pdf(x);
        x - u / (1.0 + 0.5 * x * u)
    }
}
