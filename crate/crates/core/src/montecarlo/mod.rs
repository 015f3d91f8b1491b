//! Path simulation of the contagion model.
//!
//! [`Scheme::ExactRenewal`] jumps from one contagion time to the next with
//! exact hitting-time and conditional-position draws; [`Scheme::Euler`] walks a
//! time grid with exact Gaussian increments and an optional Brownian-bridge
//! crossing test. Both produce [`CascadeRecord`]s, streamed in path order.

mod euler;
mod exact;
mod stats;

pub use stats::{compare, estimate, ComparisonEntry, ComparisonReport, EnsembleStats, EstimateRow};

use crate::domain::{cascade_closure_from, IndexSet};
use crate::error::{DominoError, Result};
use crate::model::{validate_portfolio, Portfolio};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ExactRenewal,
    Euler,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::ExactRenewal => "exact_renewal",
            Scheme::Euler => "euler",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_paths: u64,
    pub horizon: f64,
    pub seed: u64,
    pub scheme: Scheme,
    /// Euler step; `None` means `2^-10 · horizon`.
    pub dt: Option<f64>,
    pub bridge_correction: bool,
}

impl SimConfig {
    pub fn new(n_paths: u64, horizon: f64, seed: u64, scheme: Scheme) -> Self {
        SimConfig {
            n_paths,
            horizon,
            seed,
            scheme,
            dt: None,
            bridge_correction: true,
        }
    }

    pub fn step(&self) -> f64 {
        self.dt.unwrap_or(self.horizon / 1024.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(DominoError::arg("at least one path is required"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(DominoError::arg("horizon must be positive and finite"));
        }
        if self.scheme == Scheme::Euler {
            let dt = self.step();
            if !(dt > 0.0) {
                return Err(DominoError::arg("dt must be positive"));
            }
            if dt >= self.horizon {
                return Err(DominoError::arg("dt must be smaller than the horizon"));
            }
        }
        Ok(())
    }
}

/// One contagion time of a path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeEvent {
    pub time: f64,
    pub defaults: IndexSet,
    /// Firms alive after the event.
    pub survivors: IndexSet,
    /// Values just before the jumps, for the firms alive before the event
    /// in id order (defaulters at their barriers).
    pub pre_jump: Vec<f64>,
    /// Post-jump values of `survivors`, in id order.
    pub post_jump: Vec<f64>,
}

/// One simulated path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeRecord {
    pub path: u64,
    pub events: Vec<CascadeEvent>,
    /// The horizon was reached with firms still alive.
    pub censored: bool,
    /// Number of exact ties between independent hitting times.
    pub ties: u32,
}

impl CascadeRecord {
    pub fn n_star(&self) -> usize {
        self.events.len()
    }

    /// Firms defaulted at or before `t`.
    pub fn defaulted_by(&self, t: f64) -> IndexSet {
        self.events
            .iter()
            .take_while(|e| e.time <= t)
            .fold(IndexSet::EMPTY, |a, e| a.union(e.defaults))
    }

    pub fn events_by(&self, t: f64) -> usize {
        self.events.iter().take_while(|e| e.time <= t).count()
    }

    /// Structural invariants: increasing times, disjoint default sets,
    /// survivors above their barriers.
    pub fn check(&self, p: &Portfolio) -> Result<()> {
        let mut seen = IndexSet::EMPTY;
        let mut last = 0.0;
        for e in &self.events {
            if !(e.time > last) {
                return Err(DominoError::arg(format!("path {}: times not increasing", self.path)));
            }
            last = e.time;
            if !e.defaults.intersection(seen).is_empty() || e.defaults.is_empty() {
                return Err(DominoError::arg(format!("path {}: default sets overlap", self.path)));
            }
            seen = seen.union(e.defaults);
            for (k, i) in e.survivors.iter().enumerate() {
                if !(e.post_jump[k] > p.barrier(i)) {
                    return Err(DominoError::arg(format!(
                        "path {}: survivor {i} not above its barrier",
                        self.path
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Paths simulated per parallel batch.
const CHUNK: u64 = 4096;

/// Records of a run in path order, simulated batch by batch.
pub struct RecordStream<'a> {
    p: &'a Portfolio,
    cfg: SimConfig,
    next_path: u64,
    buffer: std::vec::IntoIter<Result<CascadeRecord>>,
}

impl Iterator for RecordStream<'_> {
    type Item = Result<CascadeRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if let Some(r) = self.buffer.next() {
            return Some(r);
        }
        if self.next_path >= self.cfg.n_paths {
            return None;
        }
        let end = (self.next_path + CHUNK).min(self.cfg.n_paths);
        let (p, cfg) = (self.p, &self.cfg);
        let batch: Vec<Result<CascadeRecord>> = (self.next_path..end)
            .into_par_iter()
            .map(|k| simulate_path(p, cfg, k))
            .collect();
        self.next_path = end;
        self.buffer = batch.into_iter();
        self.buffer.next()
    }
}

fn simulate_path(p: &Portfolio, cfg: &SimConfig, path: u64) -> Result<CascadeRecord> {
    match cfg.scheme {
        Scheme::ExactRenewal => exact::simulate_path(p, cfg, path),
        Scheme::Euler => euler::simulate_path(p, cfg, path),
    }
}

fn check_run(p: &Portfolio, cfg: &SimConfig, scheme: Scheme) -> Result<()> {
    let bad = validate_portfolio(p);
    if !bad.is_empty() {
        let text: Vec<String> = bad.iter().map(|v| v.to_string()).collect();
        return Err(DominoError::InvalidPortfolio(text.join("; ")));
    }
    if cfg.scheme != scheme {
        return Err(DominoError::arg(format!("config selects the {} scheme", cfg.scheme)));
    }
    cfg.validate()
}

pub fn simulate_exact_renewal<'a>(p: &'a Portfolio, cfg: &SimConfig) -> Result<RecordStream<'a>> {
    check_run(p, cfg, Scheme::ExactRenewal)?;
    Ok(stream(p, cfg))
}

pub fn simulate_euler<'a>(p: &'a Portfolio, cfg: &SimConfig) -> Result<RecordStream<'a>> {
    check_run(p, cfg, Scheme::Euler)?;
    Ok(stream(p, cfg))
}

/// Dispatches on `cfg.scheme`.
pub fn simulate<'a>(p: &'a Portfolio, cfg: &SimConfig) -> Result<RecordStream<'a>> {
    check_run(p, cfg, cfg.scheme)?;
    Ok(stream(p, cfg))
}

fn stream<'a>(p: &'a Portfolio, cfg: &SimConfig) -> RecordStream<'a> {
    RecordStream {
        p,
        cfg: cfg.clone(),
        next_path: 0,
        buffer: Vec::new().into_iter(),
    }
}

/// Resolves the cascade started by `seed` from the pre-jump `values` and
/// applies the jumps in place. Returns the default set and the survivors.
fn resolve_event(
    p: &Portfolio,
    seed: IndexSet,
    live: IndexSet,
    values: &mut [f64],
) -> (IndexSet, IndexSet) {
    let mut start = seed;
    loop {
        let j = cascade_closure_from(start, values, live, p);
        let survivors = live.difference(j);
        // a jump landing on the barrier after rounding defaults the firm
        let stuck: IndexSet = survivors
            .iter()
            .filter(|&i| !(values[i] - p.contagion.jump_into(i, j) > p.barrier(i)))
            .collect();
        if stuck.is_empty() {
            for i in survivors.iter() {
                values[i] -= p.contagion.jump_into(i, j);
            }
            return (j, survivors);
        }
        start = j.union(stuck);
    }
}

fn make_event(time: f64, live: IndexSet, j: IndexSet, survivors: IndexSet, pre: &[f64], post: &[f64]) -> CascadeEvent {
    CascadeEvent {
        time,
        defaults: j,
        survivors,
        pre_jump: live.iter().map(|i| pre[i]).collect(),
        post_jump: survivors.iter().map(|i| post[i]).collect(),
    }
}
