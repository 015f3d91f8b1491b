//! First passage of `d + m t + s W_t` through the origin.
//!
//! Every firm reduces to this problem (see [`crate::model::reduce_to_abm`]).
//! The checked free functions validate their arguments; the `PassageParams`
//! methods assume them and are used in the quadrature loops.

use crate::error::{DominoError, Result};
use crate::normal;
use gauss_quad::GaussLegendre;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use std::num::NonZeroUsize;
use std::sync::OnceLock;

/// Reduced coordinate: distance `d` to the barrier, drift `m`, volatility `s`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PassageParams {
    pub d: f64,
    pub m: f64,
    pub s: f64,
}

/// Outcome of a hitting-time draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HittingTime {
    At(f64),
    Never,
}

impl HittingTime {
    pub fn time(self) -> Option<f64> {
        match self {
            HittingTime::At(t) => Some(t),
            HittingTime::Never => None,
        }
    }

    /// `+∞` for [`HittingTime::Never`].
    pub fn or_infinity(self) -> f64 {
        self.time().unwrap_or(f64::INFINITY)
    }
}

/// Retry cap of the conditional-survivor rejection sampler.
pub const MAX_REJECTIONS: usize = 10_000;

impl PassageParams {
    pub fn new(d: f64, m: f64, s: f64) -> Result<Self> {
        if !(d > 0.0) || !d.is_finite() {
            return Err(DominoError::arg(format!("distance must be positive, got {d}")));
        }
        if !(s > 0.0) || !s.is_finite() {
            return Err(DominoError::arg(format!("volatility must be positive, got {s}")));
        }
        if !m.is_finite() {
            return Err(DominoError::arg("drift must be finite"));
        }
        Ok(PassageParams { d, m, s })
    }

    /// ln of the image-charge weight `exp(−2md/s²)`.
    #[inline]
    fn ln_image(&self) -> f64 {
        -2.0 * self.m * self.d / (self.s * self.s)
    }

    #[inline]
    pub fn fp_density(&self, t: f64) -> f64 {
        let PassageParams { d, m, s } = *self;
        let a = d + m * t;
        let ln = d.ln() - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - 1.5 * t.ln()
            - a * a / (2.0 * s * s * t);
        ln.exp()
    }

    #[inline]
    pub fn hit_prob_total(&self) -> f64 {
        if self.m <= 0.0 {
            1.0
        } else {
            self.ln_image().exp()
        }
    }

    #[inline]
    pub fn survival(&self, t: f64) -> f64 {
        let PassageParams { d, m, s } = *self;
        let st = s * t.sqrt();
        let ln_free = normal::ln_cdf((d + m * t) / st);
        let ln_image = self.ln_image() + normal::ln_cdf((-d + m * t) / st);
        difference_of_logs(ln_free, ln_image).clamp(0.0, 1.0)
    }

    /// Sub-density at distance `y` of the paths that have not hit by `t`.
    #[inline]
    pub fn killed_density(&self, y: f64, t: f64) -> f64 {
        let PassageParams { d, m, s } = *self;
        let st = s * t.sqrt();
        let kill = -(-2.0 * d * y / (s * s * t)).exp_m1();
        normal::pdf((y - d - m * t) / st) / st * kill
    }

    /// Survival mass landing in `(a, b)`; `b` may be `+∞`, `a` is clipped at 0.
    #[inline]
    pub fn killed_interval_mass(&self, a: f64, b: f64, t: f64) -> f64 {
        let PassageParams { d, m, s } = *self;
        let a = a.max(0.0);
        if !(a < b) {
            return 0.0;
        }
        let st = s * t.sqrt();
        let c = m * t;
        let ln_free = normal::ln_cdf_diff((a - d - c) / st, (b - d - c) / st);
        let ln_image = self.ln_image() + normal::ln_cdf_diff((a + d - c) / st, (b + d - c) / st);
        difference_of_logs(ln_free, ln_image).max(0.0)
    }

    /// Survival mass above the distance `a`.
    #[inline]
    pub fn mass_above(&self, a: f64, t: f64) -> f64 {
        if a <= 0.0 {
            self.survival(t)
        } else {
            self.killed_interval_mass(a, f64::INFINITY, t)
        }
    }
}

/// `e^a − e^b` with the common factor pulled out.
#[inline]
fn difference_of_logs(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return 0.0;
    }
    a.exp() * -(b - a).exp_m1()
}

pub fn fp_density(pp: &PassageParams, t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(pp.fp_density(t))
}

pub fn hit_prob_total(pp: &PassageParams) -> f64 {
    pp.hit_prob_total()
}

pub fn survival(pp: &PassageParams, t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(pp.survival(t))
}

pub fn killed_density(pp: &PassageParams, y: f64, t: f64) -> Result<f64> {
    check_time(t)?;
    if !(y > 0.0) {
        return Err(DominoError::arg(format!("terminal distance must be positive, got {y}")));
    }
    Ok(pp.killed_density(y, t))
}

pub fn killed_interval_mass(pp: &PassageParams, a: f64, b: f64, t: f64) -> Result<f64> {
    check_time(t)?;
    if !(a < b) {
        return Err(DominoError::arg(format!("empty interval ({a}, {b})")));
    }
    Ok(pp.killed_interval_mass(a, b, t))
}

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(DominoError::arg(format!("time must be positive and finite, got {t}")))
    }
}

/// Exact draw of the hitting time of the origin.
pub fn sample_hitting_time<R: Rng + ?Sized>(pp: &PassageParams, rng: &mut R) -> HittingTime {
    let PassageParams { d, m, s } = *pp;
    if m == 0.0 {
        let z: f64 = StandardNormal.sample(rng);
        return HittingTime::At(d * d / (s * s * z * z));
    }
    if m > 0.0 {
        // conditioned on hitting, the path has drift −m
        let u: f64 = rng.random();
        if u >= pp.hit_prob_total() {
            return HittingTime::Never;
        }
    }
    HittingTime::At(inverse_gaussian(d / m.abs(), d * d / (s * s), rng))
}

/// Michael–Schucany–Haas transformation with both roots formed without
/// cancellation.
fn inverse_gaussian<R: Rng + ?Sized>(mean: f64, shape: f64, rng: &mut R) -> f64 {
    let nu: f64 = StandardNormal.sample(rng);
    let y = nu * nu;
    let r = mean / (2.0 * shape);
    let big = mean + r * (mean * y + (4.0 * mean * shape * y + mean * mean * y * y).sqrt());
    let small = mean * mean / big;
    let u: f64 = rng.random();
    if u <= mean / (mean + small) {
        small
    } else {
        big
    }
}

/// Draws the distance at time `t` of a path conditioned not to have hit by
/// `t`, i.e. from `killed_density(·, t) / survival(t)`.
///
/// Rejection sampler against the envelope `φ · min(1, κy)`, `κ = 2d/(s²t)`,
/// which dominates the killing factor `1 − e^{−κy}` with ratio ≥ 1 − 1/e.
pub fn sample_conditional_survivor<R: Rng + ?Sized>(
    pp: &PassageParams,
    t: f64,
    rng: &mut R,
) -> Result<f64> {
    check_time(t)?;
    let PassageParams { d, m, s } = *pp;
    if !(pp.survival(t) > 0.0) {
        return Err(DominoError::DegenerateConditioning(format!(
            "survival underflows (d={d}, m={m}, s={s}, t={t})"
        )));
    }
    let mu = d + m * t;
    let sig = s * t.sqrt();
    let kappa = 2.0 * d / (sig * sig);
    let alpha = -mu / sig;
    let beta = (1.0 / kappa - mu) / sig;
    let piece_a = PieceA::new(alpha, beta);

    // masses relative to the normal density, piece A scaled by κσ = 1/L
    let ln_b = normal::ln_sf(beta);
    let ln_a = piece_a.ln_mass() - (beta - alpha).ln();
    let top = ln_a.max(ln_b);
    let wa = (ln_a - top).exp();
    let wb = (ln_b - top).exp();
    let prob_a = wa / (wa + wb);
    if !prob_a.is_finite() {
        return Err(DominoError::DegenerateConditioning(format!(
            "envelope masses not finite (d={d}, m={m}, s={s}, t={t})"
        )));
    }

    for _ in 0..MAX_REJECTIONS {
        let pick: f64 = rng.random();
        let u: f64 = rng.random();
        let accept: f64 = rng.random();
        let y;
        let ratio;
        if pick < prob_a {
            let z = piece_a.sample(u, rng);
            y = sig * (z - alpha);
            let x = kappa * y;
            ratio = -(-x).exp_m1() / x;
        } else {
            let z = normal::isf(u * normal::sf(beta));
            y = mu + sig * z;
            ratio = -(-kappa * y).exp_m1();
        }
        if y > 0.0 && y.is_finite() && accept < ratio {
            return Ok(y);
        }
    }
    Err(DominoError::DegenerateConditioning(format!(
        "rejection cap {MAX_REJECTIONS} reached (d={d}, m={m}, s={s}, t={t})"
    )))
}

/// Law on `z ∈ (α, β)` with density ∝ `(z − α) φ(z)`.
struct PieceA {
    alpha: f64,
    beta: f64,
}

/// Beyond this α the closed-form CDF cancels; the shifted variable
/// `w = z − α` with density ∝ `w e^{−αw − w²/2}` is used instead.
const PIECE_A_FAR: f64 = 20.0;

impl PieceA {
    fn new(alpha: f64, beta: f64) -> Self {
        PieceA { alpha, beta }
    }

    fn len(&self) -> f64 {
        self.beta - self.alpha
    }

    /// `∫_α^z (w − α) φ(w) dw` for α ≤ [`PIECE_A_FAR`].
    fn cdf(&self, z: f64) -> f64 {
        let a = self.alpha;
        (normal::pdf(a) - normal::pdf(z)) - a * normal::cdf_diff(a, z)
    }

    /// ln of `∫_α^β (z − α) φ(z) dz`.
    fn ln_mass(&self) -> f64 {
        if self.alpha <= PIECE_A_FAR {
            self.cdf(self.beta).max(0.0).ln()
        } else {
            normal::ln_pdf(self.alpha) + far_tail_integral(self.alpha, self.len()).ln()
        }
    }

    fn sample<R: Rng + ?Sized>(&self, u: f64, rng: &mut R) -> f64 {
        if self.alpha <= PIECE_A_FAR {
            self.sample_by_bisection(u)
        } else {
            self.alpha + self.sample_far(rng)
        }
    }

    fn sample_by_bisection(&self, u: f64) -> f64 {
        let target = u * self.cdf(self.beta);
        let (mut lo, mut hi) = (self.alpha, self.beta);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Draws `w` ∝ `w e^{−αw − w²/2}` on `(0, L)` for large α by rejection
    /// from `w e^{−αw}` (or from `w` when `αL < 1`).
    fn sample_far<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let (a, l) = (self.alpha, self.len());
        loop {
            if a * l >= 1.0 {
                let e1: f64 = Exp1.sample(rng);
                let e2: f64 = Exp1.sample(rng);
                let w = (e1 + e2) / a;
                let v: f64 = rng.random();
                if w < l && v < (-0.5 * w * w).exp() {
                    return w;
                }
            } else {
                let u: f64 = rng.random();
                let w = l * u.sqrt();
                let v: f64 = rng.random();
                if v < (-a * w - 0.5 * w * w).exp() {
                    return w;
                }
            }
        }
    }
}

/// `∫_0^L w e^{−αw − w²/2} dw` by Gauss–Legendre on the effective support.
fn far_tail_integral(alpha: f64, len: f64) -> f64 {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    let rule = RULE.get_or_init(|| {
        GaussLegendre::new(NonZeroUsize::new(48).unwrap())
            .as_node_weight_pairs()
            .to_vec()
    });
    let hi = len.min(60.0 / alpha);
    let half = 0.5 * hi;
    rule.iter()
        .map(|&(x, w)| {
            let v = half * (x + 1.0);
            w * half * v * (-alpha * v - 0.5 * v * v).exp()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn std_bm() -> PassageParams {
        PassageParams::new(1.0, 0.0, 1.0).unwrap()
    }

    #[test]
    fn closed_form_values() {
        let pp = std_bm();
        let expected = (-0.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert!((pp.fp_density(1.0) - expected).abs() < 1e-15);
        assert!((pp.survival(1.0) - (2.0 * normal::cdf(1.0) - 1.0)).abs() < 1e-15);
        let k = pp.killed_density(1.0, 1.0);
        assert!((k - (normal::pdf(0.0) - normal::pdf(2.0))).abs() < 1e-15);
        assert!((k - 0.344_951_313_9).abs() < 1e-9);
        assert!(pp.fp_density(1e-4) < 1e-300);
    }

    #[test]
    fn hit_probability() {
        assert_eq!(hit_prob_total(&std_bm()), 1.0);
        let p = PassageParams::new(1.0, 1.0, 1.0).unwrap();
        assert!((p.hit_prob_total() - (-2.0f64).exp()).abs() < 1e-16);
        let p = PassageParams::new(2.0, 1.0, 1.0).unwrap();
        assert!((p.hit_prob_total() - (-4.0f64).exp()).abs() < 1e-16);
        assert_eq!(PassageParams::new(2.0, -1.0, 1.0).unwrap().hit_prob_total(), 1.0);
    }

    #[test]
    fn argument_checks() {
        let pp = std_bm();
        assert!(fp_density(&pp, 0.0).is_err());
        assert!(survival(&pp, -1.0).is_err());
        assert!(killed_density(&pp, 0.0, 1.0).is_err());
        assert!(killed_interval_mass(&pp, 2.0, 1.0, 1.0).is_err());
        assert!(PassageParams::new(0.0, 0.0, 1.0).is_err());
        assert!(PassageParams::new(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn interval_mass_limits() {
        let pp = PassageParams::new(0.7, -0.3, 1.3).unwrap();
        let t = 0.8;
        assert!((pp.killed_interval_mass(0.0, f64::INFINITY, t) - pp.survival(t)).abs() < 1e-15);
        let whole = pp.killed_interval_mass(0.2, 3.0, t);
        let split = pp.killed_interval_mass(0.2, 1.1, t) + pp.killed_interval_mass(1.1, 3.0, t);
        assert!((whole - split).abs() < 1e-15);
    }

    #[test]
    fn extreme_drifts_stay_finite() {
        let pp = PassageParams::new(50.0, -10.0, 1.0).unwrap();
        let s = pp.survival(1.0);
        assert!((0.0..=1.0).contains(&s));
        assert!(pp.killed_interval_mass(1.0, 2.0, 1.0).is_finite());
        let pp = PassageParams::new(1.0, 40.0, 0.5).unwrap();
        assert!(pp.survival(2.0) > 0.99);
    }

    #[test]
    fn hitting_time_draws_are_reproducible() {
        let pp = PassageParams::new(1.0, -0.5, 1.0).unwrap();
        let a: Vec<_> = {
            let mut r = ChaCha8Rng::seed_from_u64(3);
            (0..5).map(|_| sample_hitting_time(&pp, &mut r)).collect()
        };
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let b: Vec<_> = (0..5).map(|_| sample_hitting_time(&pp, &mut r)).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn conditional_survivor_near_barrier() {
        // tiny distance: plain Gaussian rejection would accept ~1e-6 of draws
        let pp = PassageParams::new(1e-6, 0.0, 1.0).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let y = sample_conditional_survivor(&pp, 1.0, &mut r).unwrap();
            assert!(y > 0.0);
        }
    }

    #[test]
    fn conditional_survivor_far_piece() {
        // large α: strong drift into the barrier
        let pp = PassageParams::new(0.5, -30.0, 1.0).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let n = 20_000;
        let mean: f64 = (0..n)
            .map(|_| sample_conditional_survivor(&pp, 1.0, &mut r).unwrap())
            .sum::<f64>()
            / n as f64;
        // the law is ≈ Gamma(2, rate 29.5) near the barrier
        assert!((mean - 2.0 / 29.5).abs() < 0.003, "mean {mean}");
    }

    #[test]
    fn degenerate_conditioning_is_reported() {
        let pp = PassageParams::new(1e-3, -1e3, 1e-3).unwrap();
        assert!(matches!(
            sample_conditional_survivor(&pp, 10.0, &mut ChaCha8Rng::seed_from_u64(1)),
            Err(DominoError::DegenerateConditioning(_))
        ));
    }
}
