//! Semi-analytic distributions.
//!
//! Between contagion times the surviving firms move independently, so a
//! history of default sets `J_1, …, J_m` has a probability given by a nested
//! integral: at each stage one firm of `J_l` hits its barrier at time `u`
//! (first-passage density), the rest of `J_l` must be dragged down by the
//! cascade (an alternating sum over default chains of survival masses), and
//! the survivors restart from their post-jump values. [`Engine`] evaluates
//! these integrals; the public functions sum them into the distributions of
//! the number of defaults, the contagion times and joint survival.

use crate::domain::{enumerate_chains, CoordBox, IndexSet};
use crate::error::{DominoError, Result};
use crate::model::{validate_portfolio, Portfolio};
use crate::passage::PassageParams;
use crate::quadrature::{gauss_legendre_unit, space_density, space_window, time_point, ShiftedHalton};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;

/// Largest portfolio the analytic engine accepts.
pub const MAX_ANALYTIC_FIRMS: usize = 6;

/// Above this many integration dimensions the tensor rule is replaced by
/// shifted Halton points.
pub const TENSOR_MAX_DIMS: usize = 6;

const QMC_REPLICAS: usize = 8;
const QMC_SEED: u64 = 0x00d0_d1e5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuadMethod {
    Tensor,
    Qmc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Gauss–Legendre nodes per time integral.
    pub time_nodes: usize,
    /// Gauss–Legendre nodes per survivor coordinate.
    pub space_nodes: usize,
    /// Upper quantile at which survivor coordinates are truncated.
    pub tail_quantile: f64,
    /// Longest default history summed; `None` means the firm count.
    pub max_cascade_depth: Option<usize>,
    pub method: QuadMethod,
    pub qmc_points: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            time_nodes: 24,
            space_nodes: 16,
            tail_quantile: 1.0 - 1e-8,
            max_cascade_depth: None,
            method: QuadMethod::Tensor,
            qmc_points: 1 << 14,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.time_nodes < 2 || self.space_nodes < 2 {
            return Err(DominoError::arg("quadrature needs at least 2 nodes"));
        }
        if !(self.tail_quantile > 0.9 && self.tail_quantile < 1.0) {
            return Err(DominoError::arg("tail quantile must lie in (0.9, 1)"));
        }
        if self.qmc_points < QMC_REPLICAS {
            return Err(DominoError::arg(format!(
                "qmc needs at least {QMC_REPLICAS} points"
            )));
        }
        if self.max_cascade_depth == Some(0) {
            return Err(DominoError::arg("cascade depth must be at least 1"));
        }
        Ok(())
    }

    fn depth(&self, n: usize) -> usize {
        self.max_cascade_depth.unwrap_or(n).min(n)
    }

    /// The companion rule whose difference from this one is the error estimate.
    fn coarser(&self) -> Self {
        QuadratureSpec {
            time_nodes: (3 * self.time_nodes / 4).max(2),
            space_nodes: (3 * self.space_nodes / 4).max(2),
            ..self.clone()
        }
    }
}

/// What the firms left after the last default set must do until the horizon.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    /// Every remaining firm survives the residual time.
    SurviveAll,
    /// No constraint after the last event (`none`).
    Unconstrained,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EvalMethod {
    ClosedForm,
    Tensor,
    Qmc,
}

impl fmt::Display for EvalMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMethod::ClosedForm => "closed-form",
            EvalMethod::Tensor => "tensor",
            EvalMethod::Qmc => "qmc",
        })
    }
}

/// A probability with its estimated quadrature error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub method: EvalMethod,
}

/// Quantities a table can be computed for.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Query {
    /// Distribution of the number of defaults, rows `N=0..n`.
    Nt,
    /// `P(τ(m) > t)`.
    TauTail(usize),
    /// Joint survival of a set of firms.
    Survive(IndexSet),
}

impl Query {
    pub fn labels(&self, n: usize) -> Vec<String> {
        match self {
            Query::Nt => (0..=n).map(label_nt).collect(),
            Query::TauTail(m) => vec![label_tau(*m)],
            Query::Survive(k) => vec![label_survive(*k)],
        }
    }
}

pub fn label_nt(k: usize) -> String {
    format!("N={k}")
}

pub fn label_tau(m: usize) -> String {
    format!("tau({m})>t")
}

pub fn label_survive(k: IndexSet) -> String {
    format!("survive{k}")
}

/// Probabilities with per-entry error estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionTable {
    pub labels: Vec<String>,
    pub probabilities: Vec<f64>,
    /// Quadrature error estimate of each entry.
    pub tolerances: Vec<f64>,
    pub method: String,
}

impl DistributionTable {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<(f64, f64)> {
        let k = self.labels.iter().position(|l| l == label)?;
        Some((self.probabilities[k], self.tolerances[k]))
    }

    /// Concatenates tables, joining their method tags.
    pub fn concat(tables: &[DistributionTable]) -> DistributionTable {
        let mut out = DistributionTable {
            labels: Vec::new(),
            probabilities: Vec::new(),
            tolerances: Vec::new(),
            method: String::new(),
        };
        let mut tags: Vec<&str> = Vec::new();
        for t in tables {
            out.labels.extend(t.labels.iter().cloned());
            out.probabilities.extend(&t.probabilities);
            out.tolerances.extend(&t.tolerances);
            for tag in t.method.split('+') {
                if !tags.contains(&tag) {
                    tags.push(tag);
                }
            }
        }
        out.method = tags.join("+");
        out
    }
}

fn method_tag(methods: impl IntoIterator<Item = EvalMethod>) -> String {
    let mut used: Vec<EvalMethod> = methods.into_iter().collect();
    used.sort();
    used.dedup();
    if used.len() > 1 {
        used.retain(|&m| m != EvalMethod::ClosedForm);
    }
    used.iter().map(|m| m.to_string()).collect::<Vec<_>>().join("+")
}

/// Checks everything the engine relies on. Contagion signs are deliberately
/// not checked so that perturbed matrices can still be evaluated.
fn check_inputs(p: &Portfolio) -> Result<()> {
    if p.n() > MAX_ANALYTIC_FIRMS {
        return Err(DominoError::guard(
            "analytic-portfolio-size",
            format!("n = {} exceeds {MAX_ANALYTIC_FIRMS}", p.n()),
        ));
    }
    let bad: Vec<String> = validate_portfolio(p)
        .into_iter()
        .filter(|v| v.rule != "entries >= 0")
        .map(|v| v.to_string())
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(DominoError::InvalidPortfolio(bad.join("; ")))
    }
}

fn check_horizon(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(DominoError::arg(format!("horizon must be positive and finite, got {t}")))
    }
}

type Values = [f64; MAX_ANALYTIC_FIRMS];

/// Alternating chain sum for one default set and one trigger, stored as
/// signed products of survival masses.
#[derive(Clone, Debug)]
struct TriggerPlan {
    /// Distinct `(firm, reduced level)` masses.
    factors: Vec<(usize, f64)>,
    terms: Vec<(f64, Vec<u16>)>,
}

const MAX_PLAN_FACTORS: usize = 256;

impl TriggerPlan {
    /// Terms for the set `j` when firm `i` hits its barrier: for each chain
    /// `J ⊋ J_1 ⊋ … ⊋ J_k ∋ i` (the empty chain included), the other members
    /// of `J_k` survive and every firm of `J_{l−1}∖J_l` stays above its
    /// barrier lowered by the jumps of `J_l`.
    fn build(p: &Portfolio, j: IndexSet, i: usize) -> Result<Self> {
        let mut plan = TriggerPlan {
            factors: Vec::new(),
            terms: Vec::new(),
        };
        let chains = std::iter::once(Vec::new())
            .chain(enumerate_chains(j, usize::MAX)?.map(|c| c.sets));
        for chain in chains {
            let last = chain.last().copied().unwrap_or(j);
            if !last.contains(i) {
                continue;
            }
            let sign = if chain.len() % 2 == 0 { 1.0 } else { -1.0 };
            let mut idx = Vec::new();
            for k in last.without(i).iter() {
                idx.push(plan.factor(k, 0.0));
            }
            let mut prev = j;
            for &jl in &chain {
                for k in prev.difference(jl).iter() {
                    let level = p.reduced_level(k, p.barrier(k) + p.contagion.jump_into(k, jl));
                    idx.push(plan.factor(k, level));
                }
                prev = jl;
            }
            plan.terms.push((sign, idx));
        }
        if plan.factors.len() > MAX_PLAN_FACTORS {
            return Err(DominoError::guard(
                "chain-factor-count",
                format!("{} distinct masses for {j}", plan.factors.len()),
            ));
        }
        Ok(plan)
    }

    fn factor(&mut self, firm: usize, level: f64) -> u16 {
        let pos = self
            .factors
            .iter()
            .position(|&(f, l)| f == firm && l == level)
            .unwrap_or_else(|| {
                self.factors.push((firm, level));
                self.factors.len() - 1
            });
        pos as u16
    }

    #[inline]
    fn eval(&self, pps: &[PassageParams; MAX_ANALYTIC_FIRMS], u: f64) -> f64 {
        let mut vals = [0.0; MAX_PLAN_FACTORS];
        for (v, &(f, level)) in vals.iter_mut().zip(&self.factors) {
            *v = pps[f].mass_above(level, u);
        }
        self.terms
            .iter()
            .map(|(sign, idx)| sign * idx.iter().map(|&k| vals[k as usize]).product::<f64>())
            .sum()
    }
}

/// Precomputed chain plans for every non-empty subset of the portfolio.
pub struct Engine<'a> {
    p: &'a Portfolio,
    plans: HashMap<(u64, usize), TriggerPlan>,
}

enum Rule<'r> {
    Tensor {
        time: &'r [(f64, f64)],
        space: &'r [(f64, f64)],
    },
    Point(&'r [f64]),
}

struct Evaluator<'e, 'r> {
    engine: &'e Engine<'e>,
    seq: &'e [IndexSet],
    /// `breaks[l][k]`: distances of survivor `k` at stage `l` whose post-jump
    /// value sits exactly on a threshold of stage `l + 1`.
    breaks: &'e [Vec<Vec<f64>>],
    terminal: Terminal,
    tail: f64,
    rule: Rule<'r>,
}

/// Distances at which the integrand over survivor positions has a kink or a
/// steep front; the tensor rule splits its panels there.
fn stage_breaks(p: &Portfolio, seq: &[IndexSet]) -> Vec<Vec<Vec<f64>>> {
    let mut live = p.all();
    let mut out = Vec::with_capacity(seq.len());
    for (l, &j) in seq.iter().enumerate() {
        let surv = live.difference(j);
        let mut per = vec![Vec::new(); p.n()];
        if let Some(&next) = seq.get(l + 1) {
            for k in surv.iter() {
                let c = p.contagion.jump_into(k, j);
                let mut b: Vec<f64> = next
                    .subsets()
                    .filter(|s| !s.is_empty())
                    .map(|s| p.contagion.jump_into(k, s))
                    .filter(|&jump| jump > 0.0)
                    .map(|jump| p.reduced_level(k, p.barrier(k) + c + jump))
                    .collect();
                b.sort_by(f64::total_cmp);
                b.dedup();
                per[k] = b;
            }
        }
        out.push(per);
        live = surv;
    }
    out
}

const PLACEHOLDER: PassageParams = PassageParams {
    d: 1.0,
    m: 0.0,
    s: 1.0,
};

impl<'a> Engine<'a> {
    pub fn new(p: &'a Portfolio) -> Result<Self> {
        check_inputs(p)?;
        let mut plans = HashMap::new();
        for j in p.all().subsets() {
            for i in j.iter() {
                plans.insert((j.bits(), i), TriggerPlan::build(p, j, i)?);
            }
        }
        Ok(Engine { p, plans })
    }

    fn plan(&self, j: IndexSet, i: usize) -> &TriggerPlan {
        &self.plans[&(j.bits(), i)]
    }

    fn reduce_all(&self, live: IndexSet, x: &Values) -> Result<[PassageParams; MAX_ANALYTIC_FIRMS]> {
        let mut pps = [PLACEHOLDER; MAX_ANALYTIC_FIRMS];
        for i in live.iter() {
            pps[i] = self.p.reduce(i, x[i])?;
        }
        Ok(pps)
    }

    /// Density in `t` of the whole of `live` defaulting at the first
    /// contagion time.
    pub fn h_full(&self, live: IndexSet, x: &[f64], t: f64) -> Result<f64> {
        check_horizon(t)?;
        let pps = self.reduce_all(live, &to_values(x, self.p.n())?)?;
        let plan_set = live;
        Ok(live
            .iter()
            .map(|i| pps[i].fp_density(t) * self.plan(plan_set, i).eval(&pps, t))
            .sum())
    }

    /// Probability of the default history `seq` by `t`, followed by the
    /// terminal condition.
    pub fn sequence(&self, seq: &[IndexSet], t: f64, terminal: Terminal, quad: &QuadratureSpec) -> Result<Estimate> {
        check_horizon(t)?;
        quad.validate()?;
        let all = self.p.all();
        let mut used = IndexSet::EMPTY;
        for j in seq {
            if j.is_empty() || !j.is_subset(all) || !j.intersection(used).is_empty() {
                return Err(DominoError::arg(format!(
                    "default sets must be non-empty, disjoint and within the portfolio, got {j}"
                )));
            }
            used = used.union(*j);
        }
        if seq.len() > quad.depth(self.p.n()) {
            return Err(DominoError::guard(
                "max-cascade-depth",
                format!("sequence of length {} exceeds depth {}", seq.len(), quad.depth(self.p.n())),
            ));
        }
        let x0 = to_values(&self.p.initial_values(), self.p.n())?;
        let dims = dimensions(all, seq, terminal);
        let breaks = stage_breaks(self.p, seq);
        let eval = |rule: Rule| {
            Evaluator {
                engine: self,
                seq,
                breaks: &breaks,
                terminal,
                tail: quad.tail_quantile,
                rule,
            }
            .stage(0, all, &x0, t, 0)
        };
        if dims == 0 {
            let value = eval(Rule::Point(&[]))?;
            return Ok(Estimate {
                value,
                error: 0.0,
                method: EvalMethod::ClosedForm,
            });
        }
        if quad.method == QuadMethod::Tensor && dims <= TENSOR_MAX_DIMS {
            let full = eval(tensor_rule(quad).as_rule())?;
            let half = eval(tensor_rule(&quad.coarser()).as_rule())?;
            return Ok(Estimate {
                value: full,
                error: (full - half).abs(),
                method: EvalMethod::Tensor,
            });
        }
        let halton = ShiftedHalton::new(dims, QMC_REPLICAS, QMC_SEED);
        let per = (quad.qmc_points / QMC_REPLICAS) as u64;
        let mut point = vec![0.0; dims];
        let mut means = Vec::with_capacity(QMC_REPLICAS);
        for r in 0..QMC_REPLICAS {
            let mut sum = 0.0;
            for k in 1..=per {
                halton.point(r, k, &mut point);
                sum += eval(Rule::Point(&point))?;
            }
            means.push(sum / per as f64);
        }
        let mean = means.iter().sum::<f64>() / QMC_REPLICAS as f64;
        let var = means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (QMC_REPLICAS - 1) as f64;
        Ok(Estimate {
            value: mean,
            error: 3.0 * (var / QMC_REPLICAS as f64).sqrt(),
            method: EvalMethod::Qmc,
        })
    }
}

struct TensorRule {
    time: std::sync::Arc<[(f64, f64)]>,
    space: std::sync::Arc<[(f64, f64)]>,
}

impl TensorRule {
    fn as_rule(&self) -> Rule<'_> {
        Rule::Tensor {
            time: &self.time,
            space: &self.space,
        }
    }
}

fn tensor_rule(quad: &QuadratureSpec) -> TensorRule {
    TensorRule {
        time: gauss_legendre_unit(quad.time_nodes),
        space: gauss_legendre_unit(quad.space_nodes),
    }
}

fn to_values(x: &[f64], n: usize) -> Result<Values> {
    if x.len() != n {
        return Err(DominoError::arg(format!("expected {n} values, got {}", x.len())));
    }
    let mut v = [0.0; MAX_ANALYTIC_FIRMS];
    v[..n].copy_from_slice(x);
    Ok(v)
}

/// Integration dimensions of a history; 0 means closed form.
fn dimensions(all: IndexSet, seq: &[IndexSet], terminal: Terminal) -> usize {
    let mut live = all;
    let mut dims = 0;
    for (l, &j) in seq.iter().enumerate() {
        let surv = live.difference(j);
        if l + 1 == seq.len() {
            if !(surv.is_empty() && j.len() == 1) {
                dims += 1;
                if terminal == Terminal::SurviveAll {
                    dims += surv.len();
                }
            }
        } else {
            dims += 1 + surv.len();
        }
        live = surv;
    }
    dims
}

#[inline]
fn survival_after(pp: &PassageParams, t: f64) -> f64 {
    if t > 0.0 {
        pp.survival(t)
    } else {
        1.0
    }
}

impl Evaluator<'_, '_> {
    #[inline]
    fn integrate(
        &self,
        dim: usize,
        time: bool,
        mut f: impl FnMut(f64) -> Result<f64>,
    ) -> Result<f64> {
        match self.rule {
            Rule::Tensor { time: tr, space: sr } => {
                let rule = if time { tr } else { sr };
                let mut acc = 0.0;
                for &(x, w) in rule {
                    acc += w * f(x)?;
                }
                Ok(acc)
            }
            Rule::Point(pt) => f(pt[dim]),
        }
    }

    /// Integrates `G(z) q(z, u) dz` over `(level, ∞)`; the tensor rule is
    /// applied on each panel between consecutive `breaks`.
    #[inline]
    fn integrate_space(
        &self,
        dim: usize,
        pp: &PassageParams,
        level: f64,
        u: f64,
        breaks: &[f64],
        mut g: impl FnMut(f64) -> Result<f64>,
    ) -> Result<f64> {
        let Some((lo, hi)) = space_window(pp, level, u, self.tail) else {
            return Ok(0.0);
        };
        match self.rule {
            Rule::Tensor { space, .. } => {
                let mut acc = 0.0;
                let mut a = lo;
                for b in breaks.iter().copied().filter(|&b| b > lo && b < hi).chain([hi]) {
                    for &(x, w) in space {
                        let z = a + x * (b - a);
                        let q = space_density(pp, u, z);
                        if q > 0.0 {
                            acc += w * (b - a) * q * g(z)?;
                        }
                    }
                    a = b;
                }
                Ok(acc)
            }
            Rule::Point(pt) => {
                let z = lo + pt[dim] * (hi - lo);
                let q = space_density(pp, u, z);
                if q > 0.0 {
                    Ok((hi - lo) * q * g(z)?)
                } else {
                    Ok(0.0)
                }
            }
        }
    }

    fn stage(&self, l: usize, live: IndexSet, x: &Values, horizon: f64, dim: usize) -> Result<f64> {
        let engine = self.engine;
        let p = engine.p;
        let pps = engine.reduce_all(live, x)?;
        if l == self.seq.len() {
            return Ok(match self.terminal {
                Terminal::Unconstrained => 1.0,
                Terminal::SurviveAll => live.iter().map(|i| survival_after(&pps[i], horizon)).product(),
            });
        }
        let j_set = self.seq[l];
        let surv = live.difference(j_set);
        let last = l + 1 == self.seq.len();
        if surv.is_empty() && !last {
            return Ok(0.0);
        }
        if last && surv.is_empty() && j_set.len() == 1 {
            let i = j_set.first().unwrap();
            return Ok(1.0 - survival_after(&pps[i], horizon));
        }

        let mut cs = [0.0; MAX_ANALYTIC_FIRMS];
        let mut level = [0.0; MAX_ANALYTIC_FIRMS];
        for k in surv.iter() {
            cs[k] = p.contagion.jump_into(k, j_set);
            level[k] = p.reduced_level(k, p.barrier(k) + cs[k]);
        }
        let ids: Vec<usize> = surv.iter().collect();

        let mut total = 0.0;
        for i in j_set.iter() {
            let plan = engine.plan(j_set, i);
            total += self.integrate(dim, true, |xu| {
                let (u, w) = time_point(&pps[i], horizon, xu);
                if !(w > 0.0) || !(u < horizon) {
                    return Ok(0.0);
                }
                let tf = plan.eval(&pps, u);
                if tf == 0.0 {
                    return Ok(0.0);
                }
                let psi = if ids.is_empty() {
                    1.0
                } else if last {
                    match self.terminal {
                        Terminal::Unconstrained => {
                            ids.iter().map(|&k| pps[k].mass_above(level[k], u)).product()
                        }
                        Terminal::SurviveAll => {
                            let mut prod = 1.0;
                            for (pos, &k) in ids.iter().enumerate() {
                                prod *= self.integrate_space(dim + 1 + pos, &pps[k], level[k], u, &[], |z| {
                                    let post = p.value_at_distance(k, z) - cs[k];
                                    if !(post > p.barrier(k)) {
                                        return Ok(0.0);
                                    }
                                    let next = p.reduce(k, post)?;
                                    Ok(survival_after(&next, horizon - u))
                                })?;
                                if prod == 0.0 {
                                    break;
                                }
                            }
                            prod
                        }
                    }
                } else {
                    let restart = Restart {
                        l,
                        surv,
                        ids: &ids,
                        pps: &pps,
                        cs: &cs,
                        level: &level,
                        u,
                        horizon,
                        dim,
                    };
                    self.nest(&restart, 0, *x)?
                };
                Ok(w * tf * psi)
            })?;
        }
        Ok(total)
    }

    /// Integrates survivor `ids[k..]` over their pre-jump positions, then
    /// continues with the next stage from the post-jump values.
    fn nest(&self, r: &Restart, k: usize, next: Values) -> Result<f64> {
        if k == r.ids.len() {
            return self.stage(r.l + 1, r.surv, &next, r.horizon - r.u, r.dim + 1 + r.ids.len());
        }
        let p = self.engine.p;
        let j = r.ids[k];
        let breaks = &self.breaks[r.l][j];
        self.integrate_space(r.dim + 1 + k, &r.pps[j], r.level[j], r.u, breaks, |z| {
            let post = p.value_at_distance(j, z) - r.cs[j];
            if !(post > p.barrier(j)) {
                return Ok(0.0);
            }
            let mut nx = next;
            nx[j] = post;
            self.nest(r, k + 1, nx)
        })
    }
}

struct Restart<'s> {
    l: usize,
    surv: IndexSet,
    ids: &'s [usize],
    pps: &'s [PassageParams; MAX_ANALYTIC_FIRMS],
    cs: &'s Values,
    level: &'s Values,
    u: f64,
    horizon: f64,
    dim: usize,
}

/// Ordered sequences of non-empty, pairwise disjoint subsets of `universe`
/// with at most `max_len` entries, the empty sequence first.
pub fn ordered_sequences(universe: IndexSet, max_len: usize) -> Vec<Vec<IndexSet>> {
    fn rec(rest: IndexSet, cur: &mut Vec<IndexSet>, max_len: usize, out: &mut Vec<Vec<IndexSet>>) {
        if cur.len() >= max_len {
            return;
        }
        for j in rest.subsets() {
            cur.push(j);
            out.push(cur.clone());
            rec(rest.difference(j), cur, max_len, out);
            cur.pop();
        }
    }
    let mut out = vec![Vec::new()];
    rec(universe, &mut Vec::new(), max_len, &mut out);
    out
}

fn defaulted(seq: &[IndexSet]) -> IndexSet {
    seq.iter().fold(IndexSet::EMPTY, |a, &j| a.union(j))
}

/// Evaluates the sequences in parallel; results keep the input order.
fn evaluate_all(
    engine: &Engine,
    seqs: &[Vec<IndexSet>],
    t: f64,
    terminal: Terminal,
    quad: &QuadratureSpec,
) -> Result<Vec<Estimate>> {
    seqs.par_iter()
        .map(|s| engine.sequence(s, t, terminal, quad))
        .collect()
}

/// Mass of the histories cut off by the depth limit: those of maximal length
/// after which some firm is still alive.
fn truncated_mass(
    engine: &Engine,
    seqs: &[Vec<IndexSet>],
    depth: usize,
    t: f64,
    quad: &QuadratureSpec,
) -> Result<f64> {
    let all = engine.p.all();
    let cut: Vec<Vec<IndexSet>> = seqs
        .iter()
        .filter(|s| s.len() == depth && defaulted(s) != all)
        .cloned()
        .collect();
    if cut.is_empty() {
        return Ok(0.0);
    }
    let free = evaluate_all(engine, &cut, t, Terminal::Unconstrained, quad)?;
    let stay = evaluate_all(engine, &cut, t, Terminal::SurviveAll, quad)?;
    Ok(free
        .iter()
        .zip(&stay)
        .map(|(a, b)| (a.value - b.value).max(0.0) + a.error + b.error)
        .sum())
}

/// `Π_{i∈K∖J} P(survivor i ends above K^i + Σ_J C[j][i] at t)`.
pub fn g_mass(p: &Portfolio, i_set: IndexSet, j: IndexSet, x: &[f64], t: f64) -> Result<f64> {
    check_horizon(t)?;
    let b = crate::domain::a_box(i_set, j, p)?;
    let mut prod = 1.0;
    for (k, i) in b.ids.iter().enumerate() {
        let pp = p.reduce(i, x[i])?;
        prod *= pp.mass_above(p.reduced_level(i, b.lower[k]), t);
    }
    Ok(prod)
}

/// Density in `t` of all of `i_set` defaulting together at the first
/// contagion time, the firms starting from `x` (indexed by firm id).
pub fn h_full(p: &Portfolio, i_set: IndexSet, x: &[f64], t: f64) -> Result<f64> {
    if i_set.is_empty() || !i_set.is_subset(p.all()) {
        return Err(DominoError::arg(format!("invalid firm set {i_set}")));
    }
    Engine::new(p)?.h_full(i_set, x, t)
}

/// Density in `t` of `j` defaulting at the first contagion time with the
/// post-jump survivors of `i_set ∖ j` inside `post_box`.
pub fn h_sub_kernel(
    p: &Portfolio,
    i_set: IndexSet,
    j: IndexSet,
    x: &[f64],
    t: f64,
    post_box: &CoordBox,
) -> Result<f64> {
    if j.is_empty() || !j.is_proper_subset(i_set) {
        return Err(DominoError::arg(format!("need ∅ ≠ {j} ⊊ {i_set}")));
    }
    if post_box.ids != i_set.difference(j) {
        return Err(DominoError::arg("box coordinates must be the survivors"));
    }
    for (k, i) in post_box.ids.iter().enumerate() {
        if post_box.lower[k] < p.barrier(i) {
            return Err(DominoError::arg(format!(
                "box lower bound of firm {i} is below its barrier"
            )));
        }
    }
    let engine = Engine::new(p)?;
    let head = engine.h_full(j, x, t)?;
    let pre = crate::domain::shift_box(j, post_box, p);
    let mut prod = 1.0;
    for (k, i) in pre.ids.iter().enumerate() {
        let pp = p.reduce(i, x[i])?;
        let a = p.reduced_level(i, pre.lower[k]);
        let b = p.reduced_level(i, pre.upper[k]);
        prod *= pp.killed_interval_mass(a, b, t);
    }
    Ok(head * prod)
}

pub fn cascade_sequence_integral(
    p: &Portfolio,
    seq: &[IndexSet],
    t: f64,
    terminal: Terminal,
    quad: &QuadratureSpec,
) -> Result<Estimate> {
    Engine::new(p)?.sequence(seq, t, terminal, quad)
}

/// `P(N_t = k)` for `k = 0..n`.
pub fn prob_n_t(p: &Portfolio, t: f64, quad: &QuadratureSpec) -> Result<DistributionTable> {
    quad.validate()?;
    let engine = Engine::new(p)?;
    let n = p.n();
    let depth = quad.depth(n);
    let seqs = ordered_sequences(p.all(), depth);
    let est = evaluate_all(&engine, &seqs, t, Terminal::SurviveAll, quad)?;
    let mut probs = vec![0.0; n + 1];
    let mut tols = vec![0.0; n + 1];
    for (s, e) in seqs.iter().zip(&est) {
        let k = defaulted(s).len();
        probs[k] += e.value;
        tols[k] += e.error;
    }
    let cut = truncated_mass(&engine, &seqs, depth, t, quad)?;
    for tol in &mut tols {
        *tol += cut;
    }
    Ok(DistributionTable {
        labels: (0..=n).map(label_nt).collect(),
        probabilities: probs,
        tolerances: tols,
        method: method_tag(est.iter().map(|e| e.method)),
    })
}

/// `P(τ(m) > t)`: fewer than `m` contagion events by `t`.
pub fn prob_tau_m_tail(p: &Portfolio, m: usize, t: f64, quad: &QuadratureSpec) -> Result<Estimate> {
    if m == 0 || m > p.n() {
        return Err(DominoError::arg(format!("m must lie in 1..={}, got {m}", p.n())));
    }
    quad.validate()?;
    let engine = Engine::new(p)?;
    let depth = quad.depth(p.n());
    let seqs = ordered_sequences(p.all(), (m - 1).min(depth));
    let est = evaluate_all(&engine, &seqs, t, Terminal::SurviveAll, quad)?;
    let cut = if m - 1 > depth {
        truncated_mass(&engine, &seqs, depth, t, quad)?
    } else {
        0.0
    };
    Ok(sum_estimates(&est, cut))
}

/// Probability that every firm of `k_set` survives to `t`.
pub fn joint_survival(p: &Portfolio, k_set: IndexSet, t: f64, quad: &QuadratureSpec) -> Result<Estimate> {
    if k_set.is_empty() || !k_set.is_subset(p.all()) {
        return Err(DominoError::arg(format!("invalid firm set {k_set}")));
    }
    quad.validate()?;
    let engine = Engine::new(p)?;
    let others = p.all().difference(k_set);
    let depth = quad.depth(p.n());
    let seqs = ordered_sequences(others, depth);
    let est = evaluate_all(&engine, &seqs, t, Terminal::SurviveAll, quad)?;
    let cut = if others.len() > depth {
        truncated_mass(&engine, &seqs, depth, t, quad)?
    } else {
        0.0
    };
    Ok(sum_estimates(&est, cut))
}

fn sum_estimates(est: &[Estimate], extra_error: f64) -> Estimate {
    Estimate {
        value: est.iter().map(|e| e.value).sum(),
        error: est.iter().map(|e| e.error).sum::<f64>() + extra_error,
        method: est
            .iter()
            .map(|e| e.method)
            .filter(|&m| m != EvalMethod::ClosedForm)
            .max()
            .unwrap_or(EvalMethod::ClosedForm),
    }
}

/// Table for one query.
pub fn evaluate_query(p: &Portfolio, q: &Query, t: f64, quad: &QuadratureSpec) -> Result<DistributionTable> {
    let single = |label: String, e: Estimate| DistributionTable {
        labels: vec![label],
        probabilities: vec![e.value],
        tolerances: vec![e.error],
        method: e.method.to_string(),
    };
    match q {
        Query::Nt => prob_n_t(p, t, quad),
        Query::TauTail(m) => Ok(single(label_tau(*m), prob_tau_m_tail(p, *m, t, quad)?)),
        Query::Survive(k) => Ok(single(label_survive(*k), joint_survival(p, *k, t, quad)?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ContagionMatrix, FirmParams, ModelKind};

    fn abm(x0: &[f64], c: ContagionMatrix) -> Portfolio {
        let firms = x0
            .iter()
            .enumerate()
            .map(|(id, &x)| FirmParams {
                id,
                x0: x,
                barrier: 0.0,
                mu: 0.0,
                sigma: 1.0,
            })
            .collect();
        Portfolio::new(ModelKind::Abm, firms, c)
    }

    #[test]
    fn single_firm_is_closed_form() {
        let p = abm(&[1.0], ContagionMatrix::zeros(1));
        let table = prob_n_t(&p, 1.0, &QuadratureSpec::default()).unwrap();
        assert_eq!(table.labels, vec!["N=0", "N=1"]);
        assert!((table.probabilities[1] - 0.317_310_507_862_914_1).abs() < 1e-14);
        assert!((table.probabilities[0] + table.probabilities[1] - 1.0).abs() < 1e-15);
        assert_eq!(table.method, "closed-form");
    }

    #[test]
    fn sequence_counts() {
        let seqs = ordered_sequences(IndexSet::full(3), 3);
        assert_eq!(seqs.len(), 1 + 7 + 12 + 6);
        assert_eq!(ordered_sequences(IndexSet::full(3), 1).len(), 8);
        assert!(seqs[0].is_empty());
    }

    #[test]
    fn dimension_count() {
        let all = IndexSet::full(3);
        let s = |ids: &[&[usize]]| ids.iter().map(|i| IndexSet::from_ids(i)).collect::<Vec<_>>();
        assert_eq!(dimensions(all, &s(&[]), Terminal::SurviveAll), 0);
        assert_eq!(dimensions(all, &s(&[&[0]]), Terminal::SurviveAll), 3);
        assert_eq!(dimensions(all, &s(&[&[0]]), Terminal::Unconstrained), 1);
        assert_eq!(dimensions(all, &s(&[&[0], &[1], &[2]]), Terminal::SurviveAll), 5);
        assert_eq!(dimensions(all, &s(&[&[0], &[1, 2]]), Terminal::SurviveAll), 4);
        assert_eq!(dimensions(IndexSet::full(1), &s(&[&[0]]), Terminal::SurviveAll), 0);
    }

    #[test]
    fn h_full_single_firm_is_first_passage_density() {
        let p = abm(&[0.7], ContagionMatrix::zeros(1));
        let pp = p.reduce(0, 0.7).unwrap();
        for t in [0.1, 1.0, 3.0] {
            assert_eq!(h_full(&p, IndexSet::full(1), &[0.7], t).unwrap(), pp.fp_density(t));
        }
    }

    #[test]
    fn h_full_vanishes_without_contagion() {
        let p = abm(&[1.0, 0.4], ContagionMatrix::zeros(2));
        for t in [0.05, 0.5, 2.0] {
            assert!(h_full(&p, IndexSet::full(2), &[1.0, 0.4], t).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn independent_pair_factorizes() {
        let p = abm(&[1.0, 0.6], ContagionMatrix::zeros(2));
        let table = prob_n_t(&p, 1.0, &QuadratureSpec::default()).unwrap();
        let s0 = p.reduce(0, 1.0).unwrap().survival(1.0);
        let s1 = p.reduce(1, 0.6).unwrap().survival(1.0);
        assert!((table.probabilities[0] - s0 * s1).abs() < 1e-14);
        assert!((table.probabilities[2] - (1.0 - s0) * (1.0 - s1)).abs() < 1e-7);
        let total: f64 = table.probabilities.iter().sum();
        assert!((total - 1.0).abs() < 1e-7);
    }

    #[test]
    fn first_tail_is_product_of_survivals() {
        let p = abm(&[1.0, 0.8], ContagionMatrix::uniform(2, 0.5));
        let e = prob_tau_m_tail(&p, 1, 1.0, &QuadratureSpec::default()).unwrap();
        let s0 = p.reduce(0, 1.0).unwrap().survival(1.0);
        let s1 = p.reduce(1, 0.8).unwrap().survival(1.0);
        assert!((e.value - s0 * s1).abs() < 1e-15);
        assert_eq!(e.method, EvalMethod::ClosedForm);
    }

    #[test]
    fn guards() {
        let p = abm(&[1.0; 7], ContagionMatrix::zeros(7));
        assert!(matches!(
            prob_n_t(&p, 1.0, &QuadratureSpec::default()),
            Err(DominoError::Guard { .. })
        ));
        let p = abm(&[1.0, 1.0], ContagionMatrix::zeros(2));
        let quad = QuadratureSpec {
            max_cascade_depth: Some(1),
            ..Default::default()
        };
        let seq = [IndexSet::singleton(0), IndexSet::singleton(1)];
        assert!(matches!(
            cascade_sequence_integral(&p, &seq, 1.0, Terminal::SurviveAll, &quad),
            Err(DominoError::Guard { .. })
        ));
        let bad = QuadratureSpec {
            tail_quantile: 0.5,
            ..Default::default()
        };
        assert!(prob_n_t(&p, 1.0, &bad).is_err());
    }

    #[test]
    fn qmc_agrees_with_tensor() {
        let p = abm(&[1.0, 1.0], ContagionMatrix::uniform(2, 1.0));
        let seq = [IndexSet::singleton(0), IndexSet::singleton(1)];
        let tensor = cascade_sequence_integral(&p, &seq, 1.0, Terminal::SurviveAll, &QuadratureSpec::default()).unwrap();
        let quad = QuadratureSpec {
            method: QuadMethod::Qmc,
            ..Default::default()
        };
        let qmc = cascade_sequence_integral(&p, &seq, 1.0, Terminal::SurviveAll, &quad).unwrap();
        assert_eq!(qmc.method, EvalMethod::Qmc);
        assert!((qmc.value - tensor.value).abs() < qmc.error.max(1e-4), "{qmc:?} vs {tensor:?}");
    }
}
