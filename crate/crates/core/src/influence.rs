//! Endogenous influences and their aggregation.
//!
//! Each rule maps the current values of its source attributes and the
//! target's own value to either "steady" or a direction with a uniform
//! transition-time interval. Several rules acting on one target are merged
//! in two stages: influences pushing the same way are folded with the
//! concordant combinator, then the two sides are resolved with the contrary
//! combinator.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AttrId, Direction, ModelDef, TimeInterval};
use crate::real::Real;

/// A direction of change with its transition-time interval.
///
/// Also used for individual table cells. The interval is absent iff the
/// direction is steady.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetInfluence<T> {
    pub direction: Direction,
    pub interval: Option<TimeInterval<T>>,
}

impl<T: Real> NetInfluence<T> {
    pub fn steady() -> Self {
        NetInfluence {
            direction: Direction::Steady,
            interval: None,
        }
    }

    pub fn moving(direction: Direction, interval: TimeInterval<T>) -> Self {
        debug_assert!(direction != Direction::Steady);
        NetInfluence {
            direction,
            interval: Some(interval),
        }
    }

    pub fn is_steady(&self) -> bool {
        self.direction == Direction::Steady
    }
}

/// Table of influences from one or more source attributes on a target.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceRule<T> {
    pub target: AttrId,
    pub sources: Vec<AttrId>,
    /// Directly assessed joint table; replaces formula aggregation of the
    /// individual rules whose sources it covers.
    pub aggregated: bool,
    /// Row-major over source combinations (first source slowest), then
    /// target value.
    pub table: Vec<NetInfluence<T>>,
}

impl<T: Real> InfluenceRule<T> {
    /// Number of source-value combinations for this rule's sources.
    pub fn combinations<U>(&self, model: &ModelDef<U>) -> usize {
        self.sources
            .iter()
            .map(|s| model.attributes[s.index()].values.len())
            .product()
    }

    /// Index of the source combination encoded by `values`.
    pub fn combination_index<U>(&self, model: &ModelDef<U>, values: &[usize]) -> usize {
        self.sources.iter().fold(0, |acc, s| {
            acc * model.attributes[s.index()].values.len() + values[s.index()]
        })
    }

    /// Source values of combination `index`, in source order.
    pub fn combination_values<U>(&self, model: &ModelDef<U>, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.sources.len()];
        for (k, s) in self.sources.iter().enumerate().rev() {
            let n = model.attributes[s.index()].values.len();
            out[k] = index % n;
            index /= n;
        }
        out
    }

    pub fn cell<U>(&self, model: &ModelDef<U>, combination: usize, target_value: usize) -> &NetInfluence<T> {
        let width = model.attributes[self.target.index()].values.len();
        &self.table[combination * width + target_value]
    }

    /// The cell selected by a full value vector.
    pub fn lookup<U>(&self, model: &ModelDef<U>, values: &[usize]) -> &NetInfluence<T> {
        let combo = self.combination_index(model, values);
        self.cell(model, combo, values[self.target.index()])
    }

    /// Structural problems, as human-readable messages.
    pub fn problems<U>(&self, model: &ModelDef<U>) -> Vec<String> {
        let mut out = Vec::new();
        let n_attrs = model.attributes.len();
        if self.target.index() >= n_attrs || self.sources.iter().any(|s| s.index() >= n_attrs) {
            out.push("influence references an unknown attribute".to_string());
            return out;
        }
        let target = &model.attributes[self.target.index()];
        if self.sources.is_empty() {
            out.push(format!("influence on `{}` has no sources", target.name));
            return out;
        }
        for (i, s) in self.sources.iter().enumerate() {
            if self.sources[..i].contains(s) {
                out.push(format!(
                    "influence on `{}` lists source `{}` twice",
                    target.name, model.attributes[s.index()].name
                ));
            }
        }
        let expected = self.combinations(model) * target.values.len();
        if self.table.len() != expected {
            out.push(format!(
                "influence on `{}` has {} cells, expected {expected}",
                target.name,
                self.table.len()
            ));
            return out;
        }
        for (k, cell) in self.table.iter().enumerate() {
            let value = k % target.values.len();
            let here = || format!("influence on `{}` at `{}`", target.name, target.values[value]);
            match (cell.direction, cell.interval) {
                (Direction::Steady, None) => {}
                (Direction::Steady, Some(_)) => out.push(format!("{}: steady cell carries an interval", here())),
                (_, None) => out.push(format!("{}: moving cell has no interval", here())),
                (dir, Some(iv)) => {
                    if !dir.admissible(value, target.max_index()) {
                        out.push(format!("{}: cannot move {dir} from this value", here()));
                    }
                    if !(iv.lo > T::zero() && iv.lo <= iv.hi && iv.hi.is_finite()) {
                        out.push(format!(
                            "{}: interval [{}, {}] must satisfy 0 < lo <= hi",
                            here(),
                            iv.lo,
                            iv.hi
                        ));
                    }
                }
            }
        }
        out
    }
}

/// Merges two transition times pushing the same way.
pub fn combine_concordant<T: Real>(a: T, b: T) -> Result<T> {
    check_positive(a, b)?;
    let (a, b) = if b < a { (b, a) } else { (a, b) };
    if b > T::of(100.0) * a {
        Ok(a)
    } else {
        Ok(a / T::of(2.0) + (b - a) / T::of(198.0))
    }
}

/// Merges two opposing transition times; the result is the delay of the
/// faster (smaller) one, slowed by the other.
pub fn combine_contrary<T: Real>(a: T, b: T) -> Result<T> {
    check_positive(a, b)?;
    let (a, b) = if b < a { (b, a) } else { (a, b) };
    let hundred_a = T::of(100.0) * a;
    if b > hundred_a {
        Ok(a)
    } else {
        Ok(hundred_a - (b - a))
    }
}

fn check_positive<T: Real>(a: T, b: T) -> Result<()> {
    if a > T::zero() && b > T::zero() && a.is_finite() && b.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("transition times must be positive, got {a} and {b}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combination {
    Concordant,
    Contrary,
}

/// Applies a combinator to matching endpoints, then reorders them.
pub fn combine_intervals<T: Real>(
    kind: Combination,
    first: TimeInterval<T>,
    second: TimeInterval<T>,
) -> Result<TimeInterval<T>> {
    let op = match kind {
        Combination::Concordant => combine_concordant::<T>,
        Combination::Contrary => combine_contrary::<T>,
    };
    Ok(TimeInterval::normalized(
        op(first.lo, second.lo)?,
        op(first.hi, second.hi)?,
    ))
}

/// Cells exerted on `target` by the model's rules, given full state values.
///
/// An aggregated rule suppresses every individual rule on the same target
/// whose sources it covers.
pub fn active_influences<T: Real>(model: &ModelDef<T>, values: &[usize], target: AttrId) -> Vec<NetInfluence<T>> {
    let aggregated: Vec<&InfluenceRule<T>> = model
        .rules_on(target)
        .map(|(_, r)| r)
        .filter(|r| r.aggregated)
        .collect();
    model
        .rules_on(target)
        .map(|(_, r)| r)
        .filter(|r| {
            r.aggregated
                || !aggregated
                    .iter()
                    .any(|agg| r.sources.iter().all(|s| agg.sources.contains(s)))
        })
        .map(|r| *r.lookup(model, values))
        .collect()
}

/// Cells of the individual (non-aggregated) rules only, ignoring overrides.
pub fn individual_influences<T: Real>(model: &ModelDef<T>, values: &[usize], target: AttrId) -> Vec<NetInfluence<T>> {
    model
        .rules_on(target)
        .map(|(_, r)| r)
        .filter(|r| !r.aggregated)
        .map(|r| *r.lookup(model, values))
        .collect()
}

fn by_midpoint<T: Real>(a: &TimeInterval<T>, b: &TimeInterval<T>) -> Ordering {
    a.midpoint()
        .partial_cmp(&b.midpoint())
        .unwrap_or(Ordering::Equal)
        .then(a.lo.partial_cmp(&b.lo).unwrap_or(Ordering::Equal))
        .then(a.hi.partial_cmp(&b.hi).unwrap_or(Ordering::Equal))
}

fn fold_side<T: Real>(mut side: Vec<TimeInterval<T>>) -> Result<Option<TimeInterval<T>>> {
    side.sort_by(by_midpoint);
    let mut iter = side.into_iter();
    let Some(first) = iter.next() else {
        return Ok(None);
    };
    iter.try_fold(first, |acc, next| combine_intervals(Combination::Concordant, acc, next))
        .map(Some)
}

/// Net direction and interval of a list of cells.
///
/// Steady cells are ignored. Each side is folded pairwise in ascending
/// midpoint order; when both sides remain the faster one (smaller
/// midpoint, `Down` on a tie) wins and is slowed by the other.
pub fn aggregate<T: Real>(entries: &[NetInfluence<T>]) -> Result<NetInfluence<T>> {
    let side = |dir: Direction| -> Vec<TimeInterval<T>> {
        entries
            .iter()
            .filter(|e| e.direction == dir)
            .filter_map(|e| e.interval)
            .collect()
    };
    let up = fold_side(side(Direction::Up))?;
    let down = fold_side(side(Direction::Down))?;
    Ok(match (up, down) {
        (None, None) => NetInfluence::steady(),
        (Some(u), None) => NetInfluence::moving(Direction::Up, u),
        (None, Some(d)) => NetInfluence::moving(Direction::Down, d),
        (Some(u), Some(d)) => {
            let (dir, fast, slow) = if u.midpoint() < d.midpoint() {
                (Direction::Up, u, d)
            } else {
                (Direction::Down, d, u)
            };
            NetInfluence::moving(dir, combine_intervals(Combination::Contrary, fast, slow)?)
        }
    })
}

/// Net influence on `target` in a state, honoring aggregated overrides.
pub fn net_influence<T: Real>(model: &ModelDef<T>, values: &[usize], target: AttrId) -> Result<NetInfluence<T>> {
    aggregate(&active_influences(model, values, target))
}
