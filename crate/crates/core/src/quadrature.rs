//! Integration rules for the analytic engine.
//!
//! Both kinds of integral are written over the unit interval so that the same
//! integrand serves a tensor Gauss–Legendre rule and randomly shifted Halton
//! points:
//!
//! * hitting times use `w = d/(s√u)`, under which the first-passage density
//!   becomes `2φ(w + md/(s²w)) dw`, integrated with a quadratic stretch
//!   towards the horizon;
//! * survivor positions above a level are integrated linearly over the
//!   central part of their free Gaussian law.

use crate::normal;
use crate::passage::PassageParams;
use gauss_quad::GaussLegendre;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex, OnceLock};

type Rule = Arc<[(f64, f64)]>;

/// Gauss–Legendre nodes and weights on `(0, 1)`; weights sum to 1.
pub fn gauss_legendre_unit(n: usize) -> Rule {
    static CACHE: OnceLock<Mutex<HashMap<usize, Rule>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let mut guard = cache.lock().expect("rule cache poisoned");
    guard
        .entry(n)
        .or_insert_with(|| {
            let degree = NonZeroUsize::new(n.max(2)).unwrap();
            GaussLegendre::new(degree)
                .as_node_weight_pairs()
                .iter()
                .map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w))
                .collect()
        })
        .clone()
}

/// Margin above the peak of the transformed density where the time rule is
/// cut; the density there is below `2φ(9)`.
const TIME_CUTOFF: f64 = 9.0;

/// Maps `x ∈ (0, 1)` to a hitting time `u ∈ (0, horizon)` and the weight
/// such that averaging `weight · G(u)` over uniform `x` integrates
/// `G(u) fp_density(u) du`.
#[inline]
pub fn time_point(pp: &PassageParams, horizon: f64, x: f64) -> (f64, f64) {
    let PassageParams { d, m, s } = *pp;
    let w_min = d / (s * horizon.sqrt());
    let w_peak = (-m * d).max(0.0).sqrt() / s;
    let w_max = w_min.max(w_peak) + TIME_CUTOFF;
    let (la, lb) = (w_min.ln(), w_max.ln());
    let lambda = la + (lb - la) * x * x;
    let w = lambda.exp();
    let u = d * d / (s * s * w * w);
    let density = 2.0 * normal::pdf(w + m * d / (s * s * w));
    (u, (lb - la) * 2.0 * x * w * density)
}

/// The part `(lo, hi)` of `(level, ∞)` integrated over for a survivor at
/// time `u`: both tails of its free Gaussian law beyond `tail_quantile` are
/// dropped. `None` when nothing is left.
#[inline]
pub fn space_window(pp: &PassageParams, level: f64, u: f64, tail_quantile: f64) -> Option<(f64, f64)> {
    let st = pp.s * u.sqrt();
    let centre = pp.d + pp.m * u;
    let reach = st * normal::isf(1.0 - tail_quantile);
    let lo = level.max(0.0).max(centre - reach);
    let hi = centre + reach;
    (hi > lo).then_some((lo, hi))
}

/// Killed transition density at distance `z` after time `u`.
#[inline]
pub fn space_density(pp: &PassageParams, u: f64, z: f64) -> f64 {
    let st = pp.s * u.sqrt();
    let kill = -(-2.0 * pp.d * z / (pp.s * pp.s * u)).exp_m1();
    normal::pdf((z - pp.d - pp.m * u) / st) / st * kill
}

/// Maps `x ∈ (0, 1)` linearly onto the window above `level` and returns the
/// distance with its weight, so that averaging `weight · G(z)` integrates
/// `G(z) q(z, u) dz` over `(level, ∞)`.
#[inline]
pub fn space_point(
    pp: &PassageParams,
    level: f64,
    u: f64,
    tail_quantile: f64,
    x: f64,
) -> Option<(f64, f64)> {
    let (lo, hi) = space_window(pp, level, u, tail_quantile)?;
    let z = lo + x * (hi - lo);
    Some((z, (hi - lo) * space_density(pp, u, z)))
}

/// First 32 primes, the Halton bases.
const PRIMES: [u64; 32] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113, 127, 131,
];

pub const MAX_QMC_DIMS: usize = PRIMES.len();

/// Radical inverse of `index` in the `dim`-th prime base.
pub fn halton(index: u64, dim: usize) -> f64 {
    let base = PRIMES[dim];
    let inv = 1.0 / base as f64;
    let (mut i, mut f, mut out) = (index, inv, 0.0);
    while i > 0 {
        out += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    out
}

/// Halton points under independent Cranley–Patterson rotations.
#[derive(Clone, Debug)]
pub struct ShiftedHalton {
    shifts: Vec<Vec<f64>>,
}

impl ShiftedHalton {
    /// Rotations are drawn from a fixed seed so results are reproducible.
    pub fn new(dims: usize, replicas: usize, seed: u64) -> Self {
        assert!(dims <= MAX_QMC_DIMS, "at most {MAX_QMC_DIMS} dimensions");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shifts = (0..replicas)
            .map(|_| (0..dims).map(|_| rng.random::<f64>()).collect())
            .collect();
        ShiftedHalton { shifts }
    }

    pub fn replicas(&self) -> usize {
        self.shifts.len()
    }

    /// Point `index` (from 1) of replica `r`, written into `out`.
    pub fn point(&self, r: usize, index: u64, out: &mut [f64]) {
        for (k, (o, s)) in out.iter_mut().zip(&self.shifts[r]).enumerate() {
            let v = halton(index, k) + s;
            *o = if v >= 1.0 { v - 1.0 } else { v };
            // keep strictly inside the unit cube
            if *o <= 0.0 {
                *o = f64::EPSILON;
            }
        }
    }
}
