//! Contagion domains.
//!
//! At a contagion time the pre-jump state sits on the boundary of the
//! survival orthant: one firm (the trigger) is at its barrier and the others
//! above theirs. The set of firms that default in that instant is the cascade
//! closure of the trigger. This module computes it, checks membership in the
//! domain of a given default set both by closure and by brute force over
//! default orders, and provides the boxes, shifts and chains used by the
//! analytic engine.

use crate::error::{DominoError, Result};
use crate::model::Portfolio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;

/// Subset of firm ids `0..64`, stored as a bitmask.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IndexSet(u64);

impl IndexSet {
    pub const EMPTY: IndexSet = IndexSet(0);

    /// `{0, …, n−1}`.
    pub fn full(n: usize) -> Self {
        assert!(n <= 64, "index sets hold at most 64 firms");
        if n == 64 {
            IndexSet(u64::MAX)
        } else {
            IndexSet((1u64 << n) - 1)
        }
    }

    pub fn singleton(i: usize) -> Self {
        assert!(i < 64);
        IndexSet(1u64 << i)
    }

    pub fn from_ids(ids: &[usize]) -> Self {
        ids.iter().fold(IndexSet::EMPTY, |s, &i| s.with(i))
    }

    pub const fn from_bits(bits: u64) -> Self {
        IndexSet(bits)
    }

    pub const fn bits(self) -> u64 {
        self.0
    }

    #[inline]
    pub fn contains(self, i: usize) -> bool {
        i < 64 && self.0 >> i & 1 == 1
    }

    #[inline]
    pub fn with(self, i: usize) -> Self {
        assert!(i < 64);
        IndexSet(self.0 | 1u64 << i)
    }

    #[inline]
    pub fn without(self, i: usize) -> Self {
        if i < 64 {
            IndexSet(self.0 & !(1u64 << i))
        } else {
            self
        }
    }

    #[inline]
    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    #[inline]
    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    #[inline]
    pub fn union(self, other: Self) -> Self {
        IndexSet(self.0 | other.0)
    }

    #[inline]
    pub fn intersection(self, other: Self) -> Self {
        IndexSet(self.0 & other.0)
    }

    #[inline]
    pub fn difference(self, other: Self) -> Self {
        IndexSet(self.0 & !other.0)
    }

    #[inline]
    pub fn is_subset(self, other: Self) -> bool {
        self.0 & !other.0 == 0
    }

    #[inline]
    pub fn is_proper_subset(self, other: Self) -> bool {
        self.is_subset(other) && self != other
    }

    /// Smallest member.
    pub fn first(self) -> Option<usize> {
        (self.0 != 0).then(|| self.0.trailing_zeros() as usize)
    }

    /// Members in increasing order.
    pub fn iter(self) -> Members {
        Members(self.0)
    }

    pub fn to_vec(self) -> Vec<usize> {
        self.iter().collect()
    }

    /// Non-empty subsets in increasing bitmask order, `self` included.
    pub fn subsets(self) -> impl Iterator<Item = IndexSet> {
        let parent = self.0;
        let mut sub = 0u64;
        std::iter::from_fn(move || {
            if sub == parent {
                return None;
            }
            sub = (sub | !parent).wrapping_add(1) & parent;
            Some(IndexSet(sub))
        })
    }
}

pub struct Members(u64);

impl Iterator for Members {
    type Item = usize;

    #[inline]
    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let i = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(i)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.0.count_ones() as usize;
        (n, Some(n))
    }
}

impl ExactSizeIterator for Members {}

impl FromIterator<usize> for IndexSet {
    fn from_iter<T: IntoIterator<Item = usize>>(iter: T) -> Self {
        iter.into_iter().fold(IndexSet::EMPTY, |s, i| s.with(i))
    }
}

impl fmt::Display for IndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

impl fmt::Debug for IndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl Serialize for IndexSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for IndexSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let ids = Vec::<usize>::deserialize(d)?;
        if let Some(bad) = ids.iter().find(|&&i| i >= 64) {
            return Err(serde::de::Error::custom(format!("firm id {bad} out of range")));
        }
        Ok(IndexSet::from_ids(&ids))
    }
}

/// Pre-jump state at a contagion time.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryPoint {
    /// Firms alive just before the event.
    pub live: IndexSet,
    /// Values indexed by firm id; entries outside `live` are ignored.
    pub values: Vec<f64>,
    pub trigger: usize,
}

impl BoundaryPoint {
    /// Checks that the trigger is at its barrier and every other live firm
    /// strictly above its own.
    pub fn new(live: IndexSet, values: Vec<f64>, trigger: usize, p: &Portfolio) -> Result<Self> {
        if !live.contains(trigger) {
            return Err(DominoError::arg(format!("trigger {trigger} is not live")));
        }
        if values.len() != p.n() || !live.is_subset(p.all()) {
            return Err(DominoError::arg("boundary point does not match the portfolio"));
        }
        if values[trigger] != p.barrier(trigger) {
            return Err(DominoError::arg(format!(
                "trigger {trigger} is not at its barrier"
            )));
        }
        for i in live.without(trigger).iter() {
            if !(values[i] > p.barrier(i)) {
                return Err(DominoError::NotAboveBarrier {
                    firm: i,
                    value: values[i],
                    barrier: p.barrier(i),
                });
            }
        }
        Ok(BoundaryPoint {
            live,
            values,
            trigger,
        })
    }
}

/// Least set containing `seed` and every live firm whose value is at or below
/// its barrier lowered by the jumps of the set.
pub fn cascade_closure_from(
    seed: IndexSet,
    values: &[f64],
    live: IndexSet,
    p: &Portfolio,
) -> IndexSet {
    let mut set = seed;
    loop {
        let added: IndexSet = live
            .difference(set)
            .iter()
            .filter(|&j| values[j] <= p.barrier(j) + p.contagion.jump_into(j, set))
            .collect();
        if added.is_empty() {
            return set;
        }
        set = set.union(added);
    }
}

pub fn cascade_closure(trigger: usize, bp: &BoundaryPoint, p: &Portfolio) -> IndexSet {
    cascade_closure_from(IndexSet::singleton(trigger), &bp.values, bp.live, p)
}

/// The default set of a boundary point.
pub fn classify_boundary(bp: &BoundaryPoint, p: &Portfolio) -> IndexSet {
    cascade_closure(bp.trigger, bp, p)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MembershipMode {
    Closure,
    Permutation,
}

/// Largest default set tested by [`MembershipMode::Permutation`].
pub const MAX_PERMUTATION_SET: usize = 9;

/// Whether the boundary point lies in the domain where exactly `j` defaults.
pub fn member_dij(bp: &BoundaryPoint, j: IndexSet, p: &Portfolio, mode: MembershipMode) -> Result<bool> {
    if mode == MembershipMode::Permutation && j.len() > MAX_PERMUTATION_SET {
        return Err(DominoError::guard(
            "permutation-set-size",
            format!("|J| = {} exceeds {MAX_PERMUTATION_SET}", j.len()),
        ));
    }
    if !j.contains(bp.trigger) || !j.is_subset(bp.live) {
        return Ok(false);
    }
    let rest_outside = bp
        .live
        .difference(j)
        .iter()
        .all(|i| bp.values[i] > p.barrier(i) + p.contagion.jump_into(i, j));
    if !rest_outside {
        return Ok(false);
    }
    Ok(match mode {
        MembershipMode::Closure => cascade_closure(bp.trigger, bp, p) == j,
        MembershipMode::Permutation => {
            bp.values[bp.trigger] <= p.barrier(bp.trigger)
                && has_default_order(bp, IndexSet::singleton(bp.trigger), j, p)
        }
    })
}

/// Depth-first search for an order of `target` extending `done` in which each
/// firm lies in `(K, K + Σ_{earlier} C]`.
fn has_default_order(bp: &BoundaryPoint, done: IndexSet, target: IndexSet, p: &Portfolio) -> bool {
    if done == target {
        return true;
    }
    target.difference(done).iter().any(|k| {
        let v = bp.values[k];
        let k_bar = p.barrier(k);
        let upper = k_bar + done.iter().map(|l| p.contagion.get(l, k)).sum::<f64>();
        v > k_bar && v <= upper && has_default_order(bp, done.with(k), target, p)
    })
}

/// Product of intervals `(lower, upper]` (open at `+∞`) over the ids of a set.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordBox {
    pub ids: IndexSet,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl CoordBox {
    pub fn new(ids: IndexSet, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != ids.len() || upper.len() != ids.len() {
            return Err(DominoError::arg("box bounds do not match its coordinates"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(DominoError::arg("box needs lower < upper on every coordinate"));
        }
        Ok(CoordBox { ids, lower, upper })
    }

    /// Bounds of firm `i`, if it is a coordinate.
    pub fn bounds(&self, i: usize) -> Option<(f64, f64)> {
        let k = self.ids.iter().position(|j| j == i)?;
        Some((self.lower[k], self.upper[k]))
    }

    pub fn contains(&self, values: &[f64]) -> bool {
        self.ids
            .iter()
            .enumerate()
            .all(|(k, i)| values[i] > self.lower[k] && values[i] <= self.upper[k])
    }
}

/// Survivor region: coordinate `i ∈ I∖J` ranges over `(K^i + Σ_J C[j][i], ∞)`.
pub fn a_box(i_set: IndexSet, j: IndexSet, p: &Portfolio) -> Result<CoordBox> {
    if j.is_empty() || !j.is_proper_subset(i_set) {
        return Err(DominoError::arg(format!("need ∅ ≠ {j} ⊊ {i_set}")));
    }
    let ids = i_set.difference(j);
    let lower = ids
        .iter()
        .map(|i| p.barrier(i) + p.contagion.jump_into(i, j))
        .collect();
    Ok(CoordBox {
        ids,
        lower,
        upper: vec![f64::INFINITY; ids.len()],
    })
}

/// Translates post-jump survivor coordinates to pre-jump ones.
pub fn shift_box(j: IndexSet, b: &CoordBox, p: &Portfolio) -> CoordBox {
    translate(j, b, p, 1.0)
}

/// Inverse of [`shift_box`].
pub fn unshift_box(j: IndexSet, b: &CoordBox, p: &Portfolio) -> CoordBox {
    translate(j, b, p, -1.0)
}

fn translate(j: IndexSet, b: &CoordBox, p: &Portfolio, sign: f64) -> CoordBox {
    debug_assert!(b.ids.intersection(j).is_empty());
    let shifts: Vec<f64> = b.ids.iter().map(|i| sign * p.contagion.jump_into(i, j)).collect();
    CoordBox {
        ids: b.ids,
        lower: b.lower.iter().zip(&shifts).map(|(l, s)| l + s).collect(),
        upper: b.upper.iter().zip(&shifts).map(|(u, s)| u + s).collect(),
    }
}

/// Strictly decreasing chain `J_1 ⊋ J_2 ⊋ … ⊋ J_k` of non-empty sets.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DefaultChain {
    pub sets: Vec<IndexSet>,
}

impl DefaultChain {
    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn last(&self) -> Option<IndexSet> {
        self.sets.last().copied()
    }
}

/// Largest universe accepted by [`enumerate_chains`].
pub const MAX_CHAIN_UNIVERSE: usize = 12;

/// Every chain `J_1 ⊋ … ⊋ J_k` with `J_1 ⊊ I` and `k ≤ max_len`, depth first,
/// each level in increasing bitmask order. The empty chain is not produced.
pub fn enumerate_chains(i_set: IndexSet, max_len: usize) -> Result<ChainIter> {
    if i_set.len() > MAX_CHAIN_UNIVERSE {
        return Err(DominoError::guard(
            "chain-universe-size",
            format!("|I| = {} exceeds {MAX_CHAIN_UNIVERSE}", i_set.len()),
        ));
    }
    Ok(ChainIter {
        stack: if max_len > 0 { vec![(i_set.0, 0)] } else { Vec::new() },
        chain: Vec::new(),
        max_len,
    })
}

pub struct ChainIter {
    /// `(parent mask, last subset tried)` per chain position.
    stack: Vec<(u64, u64)>,
    chain: Vec<IndexSet>,
    max_len: usize,
}

impl Iterator for ChainIter {
    type Item = DefaultChain;

    fn next(&mut self) -> Option<DefaultChain> {
        loop {
            let depth = self.stack.len().checked_sub(1)?;
            let (parent, sub) = self.stack[depth];
            let next = (sub | !parent).wrapping_add(1) & parent;
            if next == 0 || next == parent {
                self.stack.pop();
                continue;
            }
            self.stack[depth].1 = next;
            self.chain.truncate(depth);
            self.chain.push(IndexSet(next));
            if self.chain.len() < self.max_len && next.count_ones() >= 2 {
                self.stack.push((next, 0));
            }
            return Some(DefaultChain {
                sets: self.chain.clone(),
            });
        }
    }
}
