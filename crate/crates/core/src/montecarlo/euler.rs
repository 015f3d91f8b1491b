use super::{make_event, resolve_event, CascadeRecord, SimConfig};
use crate::domain::IndexSet;
use crate::error::Result;
use crate::model::Portfolio;
use crate::rng::path_rng;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Grid sampler in reduced coordinates. A firm hits inside a step when its
/// end point is at or below the barrier or, with the bridge correction, with
/// probability `exp(−2ab/(s²dt))` given the end points `a`, `b`. All firms
/// hitting within one step start a single cascade dated at the step midpoint.
pub(super) fn simulate_path(p: &Portfolio, cfg: &SimConfig, path: u64) -> Result<CascadeRecord> {
    let mut rng = path_rng(cfg.seed, path);
    let n = p.n();
    let steps = (cfg.horizon / cfg.step()).round().max(1.0) as u64;
    let dt = cfg.horizon / steps as f64;
    let sqrt_dt = dt.sqrt();

    let mut values = p.initial_values();
    let mut dist = vec![0.0; n];
    let mut drift = vec![0.0; n];
    let mut vol = vec![0.0; n];
    for i in 0..n {
        let pp = p.reduce(i, values[i])?;
        dist[i] = pp.d;
        drift[i] = pp.m * dt;
        vol[i] = pp.s;
    }

    let mut live = p.all();
    let mut events = Vec::new();
    for step in 0..steps {
        if live.is_empty() {
            break;
        }
        let mut hit = IndexSet::EMPTY;
        for i in live.iter() {
            let a = dist[i];
            let z: f64 = StandardNormal.sample(&mut rng);
            let b = a + drift[i] + vol[i] * sqrt_dt * z;
            let crossed = if b <= 0.0 {
                true
            } else if cfg.bridge_correction {
                let u: f64 = rng.random();
                u < (-2.0 * a * b / (vol[i] * vol[i] * dt)).exp()
            } else {
                false
            };
            dist[i] = b;
            if crossed {
                hit = hit.with(i);
            }
        }
        if hit.is_empty() {
            continue;
        }
        for i in live.iter() {
            values[i] = if hit.contains(i) {
                p.barrier(i)
            } else {
                p.value_at_distance(i, dist[i])
            };
        }
        let pre = values.clone();
        let (j, survivors) = resolve_event(p, hit, live, &mut values);
        let time = (step as f64 + 0.5) * dt;
        events.push(make_event(time, live, j, survivors, &pre, &values));
        for i in survivors.iter() {
            dist[i] = p.reduce(i, values[i])?.d;
        }
        live = survivors;
    }

    Ok(CascadeRecord {
        path,
        events,
        censored: !live.is_empty(),
        ties: 0,
    })
}
