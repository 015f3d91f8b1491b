//! Standard normal distribution helpers.
//!
//! Everything goes through the complementary error function so that both
//! tails keep full relative precision; the log variants stay finite far past
//! the point where `erfc` underflows. Quantiles start from the statrs inverse
//! and are polished by a Newton step against the libm CDF.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this argument the lower tail is evaluated with the asymptotic
/// Mills-ratio series instead of `erfc`.
const ASYMPTOTIC_CUTOFF: f64 = -35.0;

#[inline]
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

#[inline]
pub fn ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Φ(x).
#[inline]
pub fn cdf(x: f64) -> f64 {
    if x.is_infinite() {
        return if x > 0.0 { 1.0 } else { 0.0 };
    }
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// 1 − Φ(x), accurate in the upper tail.
#[inline]
pub fn sf(x: f64) -> f64 {
    cdf(-x)
}

/// ln Φ(x).
pub fn ln_cdf(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if x >= ASYMPTOTIC_CUTOFF {
        let p = cdf(x);
        if p > 0.5 {
            (-sf(x)).ln_1p()
        } else {
            p.ln()
        }
    } else {
        let z2 = 1.0 / (x * x);
        let series = 1.0 - z2 + 3.0 * z2 * z2 - 15.0 * z2 * z2 * z2 + 105.0 * z2 * z2 * z2 * z2;
        ln_pdf(x) - (-x).ln() + series.ln()
    }
}

/// ln(1 − Φ(x)).
#[inline]
pub fn ln_sf(x: f64) -> f64 {
    ln_cdf(-x)
}

/// ln(Φ(b) − Φ(a)) for a < b, without cancellation in either tail.
/// Returns −∞ when a ≥ b.
pub fn ln_cdf_diff(a: f64, b: f64) -> f64 {
    if !(a < b) {
        return f64::NEG_INFINITY;
    }
    if a >= 0.0 {
        // both in the upper tail: sf(a) − sf(b)
        let la = ln_sf(a);
        let lb = ln_sf(b);
        la + (-(lb - la).exp()).ln_1p()
    } else if b <= 0.0 {
        let la = ln_cdf(a);
        let lb = ln_cdf(b);
        lb + (-(la - lb).exp()).ln_1p()
    } else {
        (1.0 - sf(b) - cdf(a)).ln()
    }
}

/// Φ(b) − Φ(a) evaluated on the tail where it does not cancel.
#[inline]
pub fn cdf_diff(a: f64, b: f64) -> f64 {
    if !(a < b) {
        return 0.0;
    }
    if a >= 0.0 {
        sf(a) - sf(b)
    } else {
        cdf(b) - cdf(a)
    }
}

/// Φ⁻¹(p).
pub fn ppf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    newton(x, |x| (cdf(x) - p) / pdf(x))
}

/// One Newton step; `step(x)` returns the correction to subtract.
#[inline]
fn newton(x: f64, step: impl Fn(f64) -> f64) -> f64 {
    let dx = step(x);
    if x.is_finite() && dx.is_finite() {
        x - dx
    } else {
        x
    }
}

/// Inverse of the upper tail: the x with 1 − Φ(x) = q.
pub fn isf(q: f64) -> f64 {
    if q <= 0.0 {
        return f64::INFINITY;
    }
    if q >= 1.0 {
        return f64::NEG_INFINITY;
    }
    let x = SQRT_2 * erfc_inv(2.0 * q);
    newton(x, |x| (q - sf(x)) / pdf(x))
}
