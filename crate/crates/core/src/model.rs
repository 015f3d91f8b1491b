//! Portfolio data model.
//!
//! Firm values are either arithmetic (`abm`) or geometric (`gbm`) Brownian
//! motions stopped at their barriers. Contagion jumps are additive in value
//! space for both kinds; only the first-passage analytics work in the reduced
//! coordinate returned by [`reduce_to_abm`].

use crate::domain::IndexSet;
use crate::error::{DominoError, Result};
use crate::passage::PassageParams;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Largest portfolio representable by [`IndexSet`].
pub const MAX_FIRMS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Abm,
    Gbm,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Abm => write!(f, "abm"),
            ModelKind::Gbm => write!(f, "gbm"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirmParams {
    pub id: usize,
    /// Initial firm value.
    pub x0: f64,
    /// Default level: the firm defaults once its value is at or below it.
    pub barrier: f64,
    /// Drift, per unit time (ABM) or relative (GBM).
    pub mu: f64,
    /// Volatility, absolute (ABM) or relative (GBM).
    pub sigma: f64,
}

/// Jump sizes `c[defaulter][victim]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContagionMatrix {
    rows: Vec<Vec<f64>>,
}

impl ContagionMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        ContagionMatrix { rows }
    }

    pub fn zeros(n: usize) -> Self {
        ContagionMatrix {
            rows: vec![vec![0.0; n]; n],
        }
    }

    /// Same off-diagonal value everywhere.
    pub fn uniform(n: usize, value: f64) -> Self {
        let rows = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else { value }).collect())
            .collect();
        ContagionMatrix { rows }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    #[inline]
    pub fn get(&self, defaulter: usize, victim: usize) -> f64 {
        self.rows[defaulter][victim]
    }

    pub fn set(&mut self, defaulter: usize, victim: usize, value: f64) {
        self.rows[defaulter][victim] = value;
    }

    /// Total jump suffered by `victim` when every firm of `defaulted` fails.
    #[inline]
    pub fn jump_into(&self, victim: usize, defaulted: IndexSet) -> f64 {
        defaulted.iter().map(|j| self.rows[j][victim]).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.rows.iter().flatten().all(|&c| c == 0.0)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ContagionMatrix {
            rows: self
                .rows
                .iter()
                .map(|row| row.iter().map(|&c| f(c)).collect())
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Portfolio {
    pub kind: ModelKind,
    pub firms: Vec<FirmParams>,
    pub contagion: ContagionMatrix,
}

/// One violated invariant of a portfolio.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    /// Offending firm (row of the contagion matrix for matrix rules), `None`
    /// for portfolio-wide rules.
    pub firm: Option<usize>,
    pub field: &'static str,
    pub rule: &'static str,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.firm {
            Some(id) => write!(f, "firm={} field={} rule={}", id, self.field, self.rule),
            None => write!(f, "firm=* field={} rule={}", self.field, self.rule),
        }
    }
}

impl Portfolio {
    pub fn new(kind: ModelKind, firms: Vec<FirmParams>, contagion: ContagionMatrix) -> Self {
        Portfolio {
            kind,
            firms,
            contagion,
        }
    }

    /// Parses the JSON config format, rejecting unknown keys. Invariants are
    /// not checked here, see [`validate_portfolio`].
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| DominoError::Parse(e.to_string()))
    }

    /// Serialization with a fixed key order, used for config digests.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("portfolio serializes")
    }

    pub fn n(&self) -> usize {
        self.firms.len()
    }

    pub fn all(&self) -> IndexSet {
        IndexSet::full(self.n())
    }

    pub fn barrier(&self, firm: usize) -> f64 {
        self.firms[firm].barrier
    }

    pub fn initial_values(&self) -> Vec<f64> {
        self.firms.iter().map(|f| f.x0).collect()
    }

    /// Reduced-coordinate parameters of `firm` currently at value `x`.
    #[inline]
    pub fn reduce(&self, firm: usize, x: f64) -> Result<PassageParams> {
        reduce_to_abm(self, firm, x)
    }

    /// Distance in reduced coordinates between the barrier and a value-space
    /// level. Levels at or below the barrier map to 0.
    #[inline]
    pub fn reduced_level(&self, firm: usize, level: f64) -> f64 {
        let k = self.firms[firm].barrier;
        if !(level > k) {
            return 0.0;
        }
        if level == f64::INFINITY {
            return f64::INFINITY;
        }
        match self.kind {
            ModelKind::Abm => level - k,
            ModelKind::Gbm => (level / k).ln(),
        }
    }

    /// Inverse of [`Portfolio::reduced_level`] for distances ≥ 0.
    #[inline]
    pub fn value_at_distance(&self, firm: usize, distance: f64) -> f64 {
        let k = self.firms[firm].barrier;
        match self.kind {
            ModelKind::Abm => k + distance,
            ModelKind::Gbm => k * distance.exp(),
        }
    }

    pub fn with_contagion(&self, contagion: ContagionMatrix) -> Self {
        Portfolio {
            kind: self.kind,
            firms: self.firms.clone(),
            contagion,
        }
    }
}

/// Lists every violated invariant; an empty list means the portfolio is valid.
pub fn validate_portfolio(p: &Portfolio) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = p.n();
    if n == 0 {
        out.push(Violation {
            firm: None,
            field: "firms",
            rule: "n >= 1",
        });
    }
    if n > MAX_FIRMS {
        out.push(Violation {
            firm: None,
            field: "firms",
            rule: "n <= 64",
        });
    }
    for (pos, f) in p.firms.iter().enumerate() {
        let firm = Some(f.id);
        if f.id != pos {
            out.push(Violation {
                firm,
                field: "id",
                rule: "id dense",
            });
        }
        for (field, v) in [
            ("x0", f.x0),
            ("barrier", f.barrier),
            ("mu", f.mu),
            ("sigma", f.sigma),
        ] {
            if !v.is_finite() {
                out.push(Violation {
                    firm,
                    field,
                    rule: "finite",
                });
            }
        }
        if !(f.x0 > f.barrier) {
            out.push(Violation {
                firm,
                field: "x0",
                rule: "x0 > barrier",
            });
        }
        if !(f.sigma > 0.0) {
            out.push(Violation {
                firm,
                field: "sigma",
                rule: "sigma > 0",
            });
        }
        if p.kind == ModelKind::Gbm {
            if !(f.x0 > 0.0) {
                out.push(Violation {
                    firm,
                    field: "x0",
                    rule: "x0 > 0",
                });
            }
            if !(f.barrier > 0.0) {
                out.push(Violation {
                    firm,
                    field: "barrier",
                    rule: "barrier > 0",
                });
            }
        }
    }

    let rows = p.contagion.rows();
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        out.push(Violation {
            firm: None,
            field: "contagion",
            rule: "dimension n x n",
        });
    }
    for (i, row) in rows.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if !c.is_finite() {
                out.push(Violation {
                    firm: Some(i),
                    field: "contagion",
                    rule: "finite",
                });
            } else if c < 0.0 {
                out.push(Violation {
                    firm: Some(i),
                    field: "contagion",
                    rule: "entries >= 0",
                });
            }
            if i == j && c != 0.0 {
                out.push(Violation {
                    firm: Some(i),
                    field: "contagion",
                    rule: "diagonal zero",
                });
            }
        }
    }
    out
}

/// Maps firm `firm` at value `x` onto the arithmetic first-passage problem
/// with the barrier at the origin.
///
/// ABM: `(x − K, μ, σ)`. GBM: `(ln x − ln K, μ − σ²/2, σ)`.
pub fn reduce_to_abm(p: &Portfolio, firm: usize, x: f64) -> Result<AbmCoord> {
    let f = &p.firms[firm];
    if !(x > f.barrier) {
        return Err(DominoError::NotAboveBarrier {
            firm,
            value: x,
            barrier: f.barrier,
        });
    }
    let coord = match p.kind {
        ModelKind::Abm => PassageParams {
            d: x - f.barrier,
            m: f.mu,
            s: f.sigma,
        },
        ModelKind::Gbm => {
            if !(f.barrier > 0.0) {
                return Err(DominoError::arg(format!(
                    "firm {firm}: gbm barrier must be positive"
                )));
            }
            PassageParams {
                d: (x / f.barrier).ln(),
                m: f.mu - 0.5 * f.sigma * f.sigma,
                s: f.sigma,
            }
        }
    };
    if !(coord.d > 0.0) {
        // x > K but the ratio rounds to 1
        return Err(DominoError::NotAboveBarrier {
            firm,
            value: x,
            barrier: f.barrier,
        });
    }
    Ok(coord)
}

/// Reduced coordinate of one firm.
pub type AbmCoord = PassageParams;

/// Applies the contagion jumps of the firms in `defaulted` to every firm of
/// `survivors`; all other entries are copied unchanged.
pub fn apply_default_jumps(
    values: &[f64],
    survivors: IndexSet,
    defaulted: IndexSet,
    contagion: &ContagionMatrix,
) -> Vec<f64> {
    debug_assert!(survivors.intersection(defaulted).is_empty());
    let mut out = values.to_vec();
    if defaulted.is_empty() {
        return out;
    }
    for i in survivors.iter() {
        out[i] -= contagion.jump_into(i, defaulted);
    }
    out
}
