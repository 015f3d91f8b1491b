use super::CascadeRecord;
use crate::analytic::{label_nt, label_survive, label_tau, DistributionTable, Query};
use crate::error::{DominoError, Result};
use serde::Serialize;
use std::collections::BTreeMap;

/// Integer tallies of a run at one horizon.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize)]
pub struct EnsembleStats {
    pub n_paths: u64,
    pub n_firms: usize,
    /// `nt_counts[k]`: paths with exactly `k` defaults by the horizon.
    pub nt_counts: Vec<u64>,
    /// `event_counts[j]`: paths with exactly `j` contagion times by the horizon.
    pub event_counts: Vec<u64>,
    /// Paths per set of firms defaulted by the horizon, keyed by bitmask.
    pub default_sets: BTreeMap<u64, u64>,
    pub censored: u64,
    pub ties: u64,
}

/// One Monte Carlo estimate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateRow {
    pub label: String,
    pub estimate: f64,
    pub std_error: f64,
    pub paths: u64,
}

/// Tallies records up to the horizon `t`.
pub fn estimate<I>(records: I, n_firms: usize, t: f64) -> Result<EnsembleStats>
where
    I: IntoIterator<Item = Result<CascadeRecord>>,
{
    let mut s = EnsembleStats::new(n_firms);
    for r in records {
        s.add(&r?, t);
    }
    Ok(s)
}

/// `√(p̂(1 − p̂)/n)`.
pub fn binomial_se(p: f64, n: u64) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

impl EnsembleStats {
    pub fn new(n_firms: usize) -> Self {
        EnsembleStats {
            n_firms,
            nt_counts: vec![0; n_firms + 1],
            event_counts: vec![0; n_firms + 1],
            ..Default::default()
        }
    }

    pub fn add(&mut self, r: &CascadeRecord, t: f64) {
        let set = r.defaulted_by(t);
        let events = r.events_by(t);
        self.n_paths += 1;
        self.nt_counts[set.len()] += 1;
        self.event_counts[events] += 1;
        *self.default_sets.entry(set.bits()).or_default() += 1;
        if set.len() < self.n_firms {
            self.censored += 1;
        }
        self.ties += u64::from(r.ties);
    }

    /// Adds the tallies of another run of the same portfolio.
    pub fn merge(&mut self, other: &EnsembleStats) {
        self.n_paths += other.n_paths;
        for (a, b) in self.nt_counts.iter_mut().zip(&other.nt_counts) {
            *a += b;
        }
        for (a, b) in self.event_counts.iter_mut().zip(&other.event_counts) {
            *a += b;
        }
        for (k, v) in &other.default_sets {
            *self.default_sets.entry(*k).or_default() += v;
        }
        self.censored += other.censored;
        self.ties += other.ties;
    }

    fn row(&self, label: String, count: u64) -> EstimateRow {
        let p = count as f64 / self.n_paths as f64;
        EstimateRow {
            label,
            estimate: p,
            std_error: binomial_se(p, self.n_paths),
            paths: self.n_paths,
        }
    }

    /// Paths with fewer than `m` contagion times.
    pub fn tau_tail_count(&self, m: usize) -> u64 {
        self.event_counts.iter().take(m).sum()
    }

    /// Paths in which no firm of `k` defaulted.
    pub fn survive_count(&self, k: crate::domain::IndexSet) -> u64 {
        self.default_sets
            .iter()
            .filter(|(&bits, _)| bits & k.bits() == 0)
            .map(|(_, &c)| c)
            .sum()
    }

    pub fn rows(&self, q: &Query) -> Vec<EstimateRow> {
        match q {
            Query::Nt => (0..=self.n_firms)
                .map(|k| self.row(label_nt(k), self.nt_counts[k]))
                .collect(),
            Query::TauTail(m) => vec![self.row(label_tau(*m), self.tau_tail_count(*m))],
            Query::Survive(k) => vec![self.row(label_survive(*k), self.survive_count(*k))],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonEntry {
    pub label: String,
    pub analytic: f64,
    pub tolerance: f64,
    pub mc: f64,
    pub std_error: f64,
    pub z: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub entries: Vec<ComparisonEntry>,
    pub all_pass: bool,
}

/// z-scores of analytic values against Monte Carlo estimates. An entry
/// passes when `|analytic − mc| ≤ 3·SE + tolerance`.
pub fn compare(analytic: &DistributionTable, mc: &[EstimateRow]) -> Result<ComparisonReport> {
    if analytic.len() != mc.len() {
        return Err(DominoError::LabelMismatch(format!(
            "{} analytic rows against {} estimates",
            analytic.len(),
            mc.len()
        )));
    }
    let mut entries = Vec::with_capacity(mc.len());
    for (k, label) in analytic.labels.iter().enumerate() {
        let row = mc
            .iter()
            .find(|r| &r.label == label)
            .ok_or_else(|| DominoError::LabelMismatch(format!("no estimate for {label}")))?;
        let a = analytic.probabilities[k];
        let tol = analytic.tolerances[k];
        let diff = a - row.estimate;
        let z = if row.std_error > 0.0 {
            diff / row.std_error
        } else if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        };
        let pass = diff.abs() <= 3.0 * row.std_error + tol;
        entries.push(ComparisonEntry {
            label: label.clone(),
            analytic: a,
            tolerance: tol,
            mc: row.estimate,
            std_error: row.std_error,
            z,
            pass,
        });
    }
    let all_pass = entries.iter().all(|e| e.pass);
    Ok(ComparisonReport { entries, all_pass })
}
