//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use domino_cli::format::{read_comparison, read_estimates};
use domino_core::analytic::{h_full, prob_n_t, QuadratureSpec, Query};
use domino_core::domain::{classify_boundary, member_dij, BoundaryPoint, MembershipMode};
use domino_core::montecarlo::{estimate, simulate, EnsembleStats, Scheme, SimConfig};
use domino_core::{normal, ContagionMatrix, FirmParams, IndexSet, ModelKind, Portfolio};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

type Outcome = Result<String, String>;
type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn portfolio(x0: &[f64], mu: &[f64], sigma: &[f64], c: ContagionMatrix) -> Portfolio {
    let firms = (0..x0.len())
        .map(|id| FirmParams {
            id,
            x0: x0[id],
            barrier: 0.0,
            mu: mu[id],
            sigma: sigma[id],
        })
        .collect();
    Portfolio::new(ModelKind::Abm, firms, c)
}

fn single() -> Portfolio {
    portfolio(&[1.0], &[0.0], &[1.0], ContagionMatrix::zeros(1))
}

fn pair_sparse() -> Portfolio {
    let mut c = ContagionMatrix::zeros(2);
    c.set(0, 1, 0.8);
    portfolio(&[1.0, 0.6], &[0.0, 0.0], &[1.0, 1.0], c)
}

fn pair_dense() -> Portfolio {
    portfolio(&[1.0, 1.0], &[0.0, 0.0], &[1.0, 1.0], ContagionMatrix::uniform(2, 1.0))
}

fn triple_dense() -> Portfolio {
    portfolio(&[1.0; 3], &[0.0; 3], &[1.0; 3], ContagionMatrix::uniform(3, 0.5))
}

fn fixtures() -> Vec<(&'static str, Portfolio)> {
    vec![
        ("n=1", single()),
        ("n=2 sparse", pair_sparse()),
        ("n=2 dense", pair_dense()),
        ("n=3 dense", triple_dense()),
    ]
}

fn run_stats(p: &Portfolio, cfg: &SimConfig) -> EnsembleStats {
    estimate(simulate(p, cfg).expect("valid run"), p.n(), cfg.horizon).expect("records")
}

/// Every tallied quantity of a run: N_t rows, event-count tails, single-firm survival.
fn all_queries(n: usize) -> Vec<Query> {
    let mut qs = vec![Query::Nt];
    qs.extend((1..=n).map(Query::TauTail));
    qs.extend((0..n).map(|i| Query::Survive(IndexSet::singleton(i))));
    qs
}

/// Composite Simpson with interval halving until two passes agree.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let mut n = 64;
    let mut last = f64::NAN;
    loop {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for k in 1..n {
            s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        let v = s * h / 3.0;
        if (v - last).abs() < tol || n > 1 << 16 {
            return v;
        }
        last = v;
        n *= 2;
    }
}

fn criterion_1() -> Outcome {
    let p = single();
    let want = 2.0 * normal::cdf(-1.0);
    let table = prob_n_t(&p, 1.0, &QuadratureSpec::default()).map_err(|e| e.to_string())?;
    let analytic = table.probabilities[1];
    if (analytic - 0.317_311).abs() > 5e-7 || (analytic - want).abs() > 1e-12 {
        return Err(format!("analytic {analytic}"));
    }
    let mut notes = vec![format!("analytic {analytic:.6}")];
    let exact = SimConfig::new(1_000_000, 1.0, 101, Scheme::ExactRenewal);
    let mut euler = SimConfig::new(1_000_000, 1.0, 102, Scheme::Euler);
    euler.dt = Some(2f64.powi(-10));
    for (name, cfg) in [("exact", exact), ("euler", euler)] {
        let row = &run_stats(&p, &cfg).rows(&Query::Nt)[1];
        let z = (row.estimate - want) / row.std_error;
        notes.push(format!("{name} {:.6} (z={z:.2})", row.estimate));
        if z.abs() > 3.0 {
            return Err(notes.join(", "));
        }
    }
    Ok(notes.join(", "))
}

fn random_boundary_point(rng: &mut ChaCha8Rng) -> (Portfolio, BoundaryPoint) {
    let n = rng.random_range(1..=5);
    let firms: Vec<FirmParams> = (0..n)
        .map(|id| FirmParams {
            id,
            x0: 0.0,
            barrier: rng.random_range(-1.0..1.0),
            mu: 0.0,
            sigma: 1.0,
        })
        .collect();
    let mut c = ContagionMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.random_bool(0.7) {
                c.set(i, j, rng.random_range(0.0..1.0));
            }
        }
    }
    let trigger = rng.random_range(0..n);
    let live: IndexSet = (0..n).filter(|&i| i == trigger || rng.random_bool(0.8)).collect();
    let mut values: Vec<f64> = firms.iter().map(|f| f.barrier).collect();
    for i in live.without(trigger).iter() {
        values[i] = if rng.random_bool(0.2) {
            // exactly on a post-jump threshold
            let others: IndexSet = live.without(i).iter().filter(|_| rng.random_bool(0.5)).collect();
            firms[i].barrier + c.jump_into(i, others.with(trigger).without(i)).max(0.01)
        } else {
            firms[i].barrier + rng.random_range(1e-3..2.0)
        };
    }
    let p = Portfolio::new(ModelKind::Abm, firms, c);
    let bp = BoundaryPoint::new(live, values, trigger, &p).expect("valid boundary point");
    (p, bp)
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0usize;
    for k in 0..10_000 {
        let (p, bp) = random_boundary_point(&mut rng);
        let j = classify_boundary(&bp, &p);
        let mut found = 0;
        for cand in bp.live.subsets() {
            let a = member_dij(&bp, cand, &p, MembershipMode::Closure).map_err(|e| e.to_string())?;
            let b = member_dij(&bp, cand, &p, MembershipMode::Permutation).map_err(|e| e.to_string())?;
            if a != b {
                return Err(format!("instance {k}: modes disagree on {cand}"));
            }
            if a {
                found += 1;
                if cand != j {
                    return Err(format!("instance {k}: member of {cand}, closure gives {j}"));
                }
            }
            checked += 1;
        }
        if found != 1 {
            return Err(format!("instance {k}: lies in {found} domains"));
        }
    }
    Ok(format!("10000 instances, {checked} memberships"))
}

fn random_portfolio(rng: &mut ChaCha8Rng, n: usize) -> Portfolio {
    let x0: Vec<f64> = (0..n).map(|_| rng.random_range(0.6..1.4)).collect();
    let mu: Vec<f64> = (0..n).map(|_| rng.random_range(-0.3..0.3)).collect();
    let sigma: Vec<f64> = (0..n).map(|_| rng.random_range(0.7..1.3)).collect();
    let mut c = ContagionMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                c.set(i, j, rng.random_range(0.3..1.2));
            }
        }
    }
    portfolio(&x0, &mu, &sigma, c)
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut notes = Vec::new();
    for n in [2, 3] {
        let p = random_portfolio(&mut rng, n);
        let x = p.initial_values();
        let free = p.with_contagion(ContagionMatrix::zeros(n));
        for t in [0.1, 0.5, 1.0, 2.0] {
            for i in 0..n {
                let fp = p.reduce(i, x[i]).map_err(|e| e.to_string())?.fp_density(t);
                let h = h_full(&p, IndexSet::singleton(i), &x, t).map_err(|e| e.to_string())?;
                if h != fp {
                    return Err(format!("n={n}: singleton {i} at t={t}: {h} vs {fp}"));
                }
            }
            for set in p.all().subsets().filter(|s| s.len() >= 2) {
                let h = h_full(&free, set, &x, t).map_err(|e| e.to_string())?;
                if h.abs() > 1e-10 {
                    return Err(format!("n={n}: C=0 gives {h} for {set} at t={t}"));
                }
            }
        }
        let horizon = 1.0;
        let integral = simpson(
            |t| if t > 0.0 { h_full(&p, p.all(), &x, t).expect("density") } else { 0.0 },
            0.0,
            horizon,
            1e-10,
        );
        let cfg = SimConfig::new(1_000_000, horizon, 30 + n as u64, Scheme::ExactRenewal);
        let all = p.all();
        let hits = simulate(&p, &cfg)
            .map_err(|e| e.to_string())?
            .filter(|r| {
                r.as_ref()
                    .map(|r| r.events.first().is_some_and(|e| e.time <= horizon && e.defaults == all))
                    .unwrap_or(false)
            })
            .count();
        let f = hits as f64 / 1e6;
        let se = (f * (1.0 - f) / 1e6).sqrt();
        let z = (integral - f) / se;
        notes.push(format!("n={n}: integral {integral:.6} vs mc {f:.6} (z={z:.2})"));
        if z.abs() > 3.0 {
            return Err(notes.join(", "));
        }
    }
    Ok(notes.join(", "))
}

fn criterion_4() -> Outcome {
    let quad = QuadratureSpec {
        time_nodes: 32,
        space_nodes: 24,
        ..QuadratureSpec::default()
    };
    let mut notes = Vec::new();
    let mut ok = true;
    for (name, p) in fixtures().into_iter().skip(1) {
        let table = prob_n_t(&p, 1.0, &quad).map_err(|e| e.to_string())?;
        let total: f64 = table.probabilities.iter().sum();
        let tol: f64 = table.tolerances.iter().sum();
        let pass = tol <= 1e-5 && (total - 1.0).abs() <= tol;
        ok &= pass;
        notes.push(format!("{name}: |sum-1|={:.1e}, tolerance {tol:.1e}", (total - 1.0).abs()));
    }
    if ok {
        Ok(notes.join(", "))
    } else {
        Err(notes.join(", "))
    }
}

fn write_config(dir: &Path, name: &str, p: &Portfolio) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(p).expect("config serializes")).expect("write config");
    path
}

fn domino(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_domino"))
        .args(args)
        .env_remove("DOMINO_THREADS")
        .output()
        .expect("binary runs")
}

fn criterion_5(dir: &Path) -> Outcome {
    let cfg = write_config(dir, "triple.json", &triple_dense());
    let manifest = dir.join("compare.json");
    let out = domino(&[
        "compare",
        cfg.to_str().unwrap(),
        "--t",
        "1",
        "--paths",
        "1000000",
        "--seed",
        "5",
        "--query",
        "nt",
        "--query",
        "tau",
        "1",
        "--query",
        "tau",
        "2",
        "--query",
        "survive",
        "2",
        "--manifest",
        manifest.to_str().unwrap(),
    ]);
    let text = String::from_utf8_lossy(&out.stdout);
    let entries = read_comparison(&text).map_err(|e| format!("unreadable report: {e}"))?;
    let worst = entries.iter().map(|e| e.z.abs()).fold(0.0, f64::max);
    let summary = format!("{} entries, max |z| = {worst:.2}", entries.len());
    if out.status.code() == Some(0) && entries.len() == 7 {
        Ok(summary)
    } else {
        Err(format!("exit {:?}, {summary}\n{text}", out.status.code()))
    }
}

fn criterion_6() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for (k, (name, p)) in fixtures().into_iter().enumerate() {
        let exact = run_stats(&p, &SimConfig::new(200_000, 1.0, 60 + k as u64, Scheme::ExactRenewal));
        let mut cfg = SimConfig::new(200_000, 1.0, 70 + k as u64, Scheme::Euler);
        cfg.dt = Some(2f64.powi(-10));
        let euler = run_stats(&p, &cfg);
        let mut worst: f64 = 0.0;
        for q in all_queries(p.n()) {
            for (a, b) in exact.rows(&q).iter().zip(euler.rows(&q)) {
                let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
                let diff = a.estimate - b.estimate;
                let z = if se > 0.0 { diff / se } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
                worst = worst.max(z.abs());
            }
        }
        ok &= worst <= 3.0;
        notes.push(format!("{name}: max |z| {worst:.2}"));
    }
    let p = single();
    let want = 2.0 * normal::cdf(-1.0);
    let mut cfg = SimConfig::new(1_000_000, 1.0, 80, Scheme::Euler);
    cfg.dt = Some(2f64.powi(-6));
    cfg.bridge_correction = false;
    let row = &run_stats(&p, &cfg).rows(&Query::Nt)[1];
    let z = (row.estimate - want) / row.std_error;
    ok &= z < -3.0;
    notes.push(format!("no bridge at dt=2^-6: z={z:.1}"));
    if ok {
        Ok(notes.join(", "))
    } else {
        Err(notes.join(", "))
    }
}

fn criterion_7(dir: &Path) -> Outcome {
    let cfg = write_config(dir, "triple7.json", &triple_dense());
    let cfg = cfg.to_str().unwrap();
    let runs: [&[&str]; 3] = [
        &["simulate", cfg, "--t", "1", "--paths", "50000", "--seed", "7", "--query", "nt", "--query", "tau", "2"],
        &["simulate", cfg, "--t", "1", "--paths", "20000", "--seed", "7", "--scheme", "euler", "--dt", "0.005"],
        &["compare", cfg, "--t", "1", "--paths", "20000", "--seed", "7", "--time-nodes", "8", "--space-nodes", "8"],
    ];
    for args in runs {
        let outputs: Vec<Vec<u8>> = ["1", "2", "8"]
            .iter()
            .map(|threads| domino(&[args, &["--threads", threads]].concat()).stdout)
            .collect();
        if outputs[0].is_empty() || outputs.iter().any(|o| o != &outputs[0]) {
            return Err(format!("{} differs across thread counts", args[0]));
        }
        if args[0] == "simulate" {
            read_estimates(&String::from_utf8_lossy(&outputs[0])).map_err(|e| e.to_string())?;
        }
    }
    Ok("simulate (exact, euler) and compare identical with 1, 2 and 8 threads".into())
}

fn main() {
    // `cargo test -- --list` has nothing to enumerate here.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let dir = tempfile::TempDir::new().expect("temp dir");
    let criteria: Vec<(&str, Check)> = vec![
        ("single-firm closed form", Box::new(criterion_1)),
        ("domain algebra", Box::new(criterion_2)),
        ("chain recursion", Box::new(criterion_3)),
        ("normalization", Box::new(criterion_4)),
        ("end-to-end compare", Box::new(|| criterion_5(dir.path()))),
        ("simulator cross-validation", Box::new(criterion_6)),
        ("reproducibility", Box::new(|| criterion_7(dir.path()))),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name} [{secs:.1}s] {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL {name} [{secs:.1}s] {detail}", k + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
