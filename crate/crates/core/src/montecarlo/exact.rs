use super::{make_event, resolve_event, CascadeRecord, SimConfig};
use crate::domain::IndexSet;
use crate::error::Result;
use crate::model::Portfolio;
use crate::passage::{sample_conditional_survivor, sample_hitting_time};
use crate::rng::path_rng;

/// Renewal sampler: from the current state draw every live firm's hitting
/// time, advance to the first one, draw the others' positions given that
/// they survived, resolve the cascade and restart.
pub(super) fn simulate_path(p: &Portfolio, cfg: &SimConfig, path: u64) -> Result<CascadeRecord> {
    let mut rng = path_rng(cfg.seed, path);
    let mut values = p.initial_values();
    let mut live = p.all();
    let mut now = 0.0;
    let mut events = Vec::new();
    let mut ties = 0;
    let mut pps = Vec::with_capacity(p.n());

    while !live.is_empty() {
        pps.clear();
        let mut first: Option<(usize, f64)> = None;
        for i in live.iter() {
            let pp = p.reduce(i, values[i])?;
            pps.push((i, pp));
            if let Some(tau) = sample_hitting_time(&pp, &mut rng).time() {
                match first {
                    Some((_, best)) if tau > best => {}
                    Some((_, best)) if tau == best => ties += 1,
                    _ => first = Some((i, tau)),
                }
            }
        }
        let Some((trigger, tau)) = first else { break };
        if now + tau > cfg.horizon {
            break;
        }
        now += tau;
        for &(i, pp) in &pps {
            if i != trigger {
                let y = sample_conditional_survivor(&pp, tau, &mut rng)?;
                values[i] = p.value_at_distance(i, y);
            }
        }
        values[trigger] = p.barrier(trigger);
        let pre = values.clone();
        let (j, survivors) = resolve_event(p, IndexSet::singleton(trigger), live, &mut values);
        events.push(make_event(now, live, j, survivors, &pre, &values));
        live = survivors;
    }

    Ok(CascadeRecord {
        path,
        events,
        censored: !live.is_empty(),
        ties,
    })
}
