//! Independent reference integrator for the test suites: adaptive
//! Gauss–Kronrod (7, 15) bisection.
#![allow(dead_code)]

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for k in 0..7 {
        let dx = h * XGK[k];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[k] * s;
        if k % 2 == 1 {
            gauss += WG[k / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

fn adapt(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (v, err) = gk15(f, a, b);
    if err <= tol || depth == 0 {
        return v;
    }
    let c = 0.5 * (a + b);
    adapt(f, a, c, 0.5 * tol, depth - 1) + adapt(f, c, b, 0.5 * tol, depth - 1)
}

/// `∫_a^b f` to roughly `tol` absolute.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    adapt(&f, a, b, tol, 40)
}

/// `∫_a^∞ f` through `x = a + v/(1 − v)`.
pub fn integrate_to_inf(f: impl Fn(f64) -> f64, a: f64, tol: f64) -> f64 {
    let g = |v: f64| {
        if v >= 1.0 {
            return 0.0;
        }
        let w = 1.0 - v;
        f(a + v / w) / (w * w)
    };
    adapt(&g, 0.0, 1.0, tol, 40)
}

/// Two-sided 1% critical value of the Kolmogorov–Smirnov statistic for `n`
/// samples (asymptotic).
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.627_6 / (n as f64).sqrt()
}

/// Kolmogorov–Smirnov distance between a sample and a continuous CDF.
/// Infinite draws (defective laws) only count through the empirical jumps
/// at finite points.
pub fn ks_distance(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .filter(|(_, x)| x.is_finite())
        .map(|(k, &x)| {
            let c = cdf(x);
            (c - k as f64 / n).abs().max(((k + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max)
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn oracle_integrates_known_functions() {
    let v = integrate(|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-13);
    assert!((v - 2.0).abs() < 1e-12);
    let v = integrate_to_inf(|x: f64| (-x).exp(), 0.0, 1e-13);
    assert!((v - 1.0).abs() < 1e-12);
}

/// ABM portfolio with unit volatility and zero barriers.
pub fn abm(x0: &[f64], mu: &[f64], c: domino_core::ContagionMatrix) -> domino_core::Portfolio {
    let firms = x0
        .iter()
        .zip(mu)
        .enumerate()
        .map(|(id, (&x0, &mu))| domino_core::FirmParams {
            id,
            x0,
            barrier: 0.0,
            mu,
            sigma: 1.0,
        })
        .collect();
    domino_core::Portfolio::new(domino_core::ModelKind::Abm, firms, c)
}

/// Frequency of `hit` over exact-scheme paths, with its binomial standard error.
pub fn exact_frequency(
    p: &domino_core::Portfolio,
    paths: u64,
    t: f64,
    seed: u64,
    hit: impl Fn(&domino_core::montecarlo::CascadeRecord) -> bool,
) -> (f64, f64) {
    use domino_core::montecarlo::{simulate, Scheme, SimConfig};
    let count = simulate(p, &SimConfig::new(paths, t, seed, Scheme::ExactRenewal))
        .unwrap()
        .filter(|r| hit(r.as_ref().unwrap()))
        .count();
    let f = count as f64 / paths as f64;
    (f, (f * (1.0 - f) / paths as f64).sqrt())
}
