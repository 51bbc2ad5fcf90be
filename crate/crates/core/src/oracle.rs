//! Exact posteriors for feed-forward models.
//!
//! When no influence target is itself a source, every source attribute is
//! constant between events and each target runs an independent chain of
//! uniform holding times. The oracle enumerates the discrete branches
//! (initial values, consequences) and integrates the chains in closed form,
//! reading a target's value only where an event, observation or query needs
//! it.
//!
//! Scope: after a target's value has been read while its chain is still
//! moving, the chain is conditioned on that read, so the target may not be
//! read again at a different time. Such scenarios are reported as
//! unsupported. A transition falling inside the delta after an event is
//! treated as undelayed, which the sampler does not do; the difference is
//! of the order of delta over the interval widths.

use std::collections::BTreeSet;

use crate::engine::RecordPlan;
use crate::error::{Error, Result};
use crate::infer::{PosteriorReport, QueryPosterior};
use crate::influence::net_influence;
use crate::model::{AttrId, Direction, ModelDef, ScenarioDef, TimeInterval};
use crate::real::Real;

/// Outcome of [`check_feedforward`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedForwardCertificate {
    pub verdict: bool,
    /// A cycle (first name repeated at the end) or a path through an
    /// attribute that is both target and source.
    pub offending: Option<Vec<String>>,
}

impl FeedForwardCertificate {
    pub fn describe(&self) -> String {
        match &self.offending {
            None => "feed-forward".into(),
            Some(path) if path.first() == path.last() => format!("influence cycle {}", path.join(" -> ")),
            Some(path) => format!("influenced attribute feeds another influence: {}", path.join(" -> ")),
        }
    }
}

/// Checks that no influence target is also an influence source.
pub fn check_feedforward<T: Real>(model: &ModelDef<T>) -> FeedForwardCertificate {
    let n = model.attributes.len();
    let mut edges: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for rule in &model.rules {
        for s in &rule.sources {
            edges[s.index()].insert(rule.target.index());
        }
    }
    let name = |i: usize| model.attributes[i].name.clone();

    // 0 unvisited, 1 on stack, 2 done
    fn dfs(v: usize, edges: &[BTreeSet<usize>], color: &mut [u8], stack: &mut Vec<usize>) -> Option<Vec<usize>> {
        color[v] = 1;
        stack.push(v);
        for &w in &edges[v] {
            if color[w] == 1 {
                let from = stack.iter().position(|&x| x == w).unwrap_or(0);
                let mut cycle = stack[from..].to_vec();
                cycle.push(w);
                return Some(cycle);
            }
            if color[w] == 0 {
                if let Some(c) = dfs(w, edges, color, stack) {
                    return Some(c);
                }
            }
        }
        stack.pop();
        color[v] = 2;
        None
    }
    let mut color = vec![0u8; n];
    for v in 0..n {
        if color[v] == 0 {
            let mut stack = Vec::new();
            if let Some(cycle) = dfs(v, &edges, &mut color, &mut stack) {
                return FeedForwardCertificate {
                    verdict: false,
                    offending: Some(cycle.into_iter().map(name).collect()),
                };
            }
        }
    }
    for (mid, out) in edges.iter().enumerate() {
        let Some(&next) = out.iter().next() else { continue };
        if let Some(src) = (0..n).find(|&s| edges[s].contains(&mid)) {
            return FeedForwardCertificate {
                verdict: false,
                offending: Some(vec![name(src), name(mid), name(next)]),
            };
        }
    }
    FeedForwardCertificate {
        verdict: true,
        offending: None,
    }
}

const GRID_POINTS: usize = 10_000;

/// `P(U_1 + ... + U_n <= threshold)` for independent `U_k ~ U[lo_k, hi_k]`.
pub fn uniform_sum_crossing<T: Real>(intervals: &[TimeInterval<T>], threshold: T) -> Result<T> {
    uniform_sum_crossing_with_error(intervals, threshold).map(|(p, _)| p)
}

/// Like [`uniform_sum_crossing`], also returning an error estimate.
///
/// Up to three nondegenerate intervals the result is exact up to rounding
/// and the estimate is zero. Longer sums are convolved on a grid; the
/// estimate is the change from halving the grid step.
pub fn uniform_sum_crossing_with_error<T: Real>(intervals: &[TimeInterval<T>], threshold: T) -> Result<(T, T)> {
    if intervals.is_empty() {
        return Err(Error::Domain("uniform sum over no intervals".into()));
    }
    let lo: Vec<f64> = intervals.iter().map(|i| i.lo.as_f64()).collect();
    let hi: Vec<f64> = intervals.iter().map(|i| i.hi.as_f64()).collect();
    let (p, e) = crossing(&lo, &hi, threshold.as_f64());
    Ok((T::of(p), T::of(e)))
}

fn crossing(lo: &[f64], hi: &[f64], x: f64) -> (f64, f64) {
    if x >= hi.iter().sum::<f64>() {
        return (1.0, 0.0);
    }
    let shift: f64 = lo.iter().sum();
    let widths: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| h - l).filter(|w| *w > 0.0).collect();
    let y = x - shift;
    let total: f64 = widths.iter().sum();
    if y < 0.0 {
        return (0.0, 0.0);
    }
    if y >= total {
        return (1.0, 0.0);
    }
    if widths.len() <= 3 {
        return (box_spline_cdf(&widths, y), 0.0);
    }
    let coarse = grid_cdf(&widths, y, GRID_POINTS);
    let fine = grid_cdf(&widths, y, 2 * GRID_POINTS);
    (fine, (fine - coarse).abs())
}

/// CDF at `y` of a sum of `U[0, w_k]` by inclusion-exclusion.
fn box_spline_cdf(widths: &[f64], y: f64) -> f64 {
    let n = widths.len();
    if n == 0 {
        return if y >= 0.0 { 1.0 } else { 0.0 };
    }
    let mut acc = 0.0;
    for mask in 0u32..(1 << n) {
        let s: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| widths[i]).sum();
        if y > s {
            let term = (y - s).powi(n as i32);
            acc += if mask.count_ones() % 2 == 0 { term } else { -term };
        }
    }
    let fact: f64 = (1..=n).map(|k| k as f64).product();
    let prod: f64 = widths.iter().product();
    (acc / (fact * prod)).clamp(0.0, 1.0)
}

/// CDF at `y` from the closed form for the first three widths, then one
/// grid convolution per remaining width.
fn grid_cdf(widths: &[f64], y: f64, points: usize) -> f64 {
    let total: f64 = widths.iter().sum();
    let h = total / points as f64;
    let mut cdf: Vec<f64> = (0..=points).map(|j| box_spline_cdf(&widths[..3], j as f64 * h)).collect();
    let mut integral = vec![0.0; points + 1];
    for &w in &widths[3..] {
        for j in 0..points {
            integral[j + 1] = integral[j] + h * (cdf[j] + cdf[j + 1]) / 2.0;
        }
        let at = |x: f64| -> f64 {
            if x <= 0.0 {
                return 0.0;
            }
            let j = ((x / h) as usize).min(points - 1);
            let d = x - j as f64 * h;
            integral[j] + cdf[j] * d + (cdf[j + 1] - cdf[j]) * d * d / (2.0 * h)
        };
        let next: Vec<f64> = (0..=points)
            .map(|j| {
                let s = j as f64 * h;
                ((at(s) - at(s - w)) / w).clamp(0.0, 1.0)
            })
            .collect();
        cdf = next;
    }
    let j = ((y / h) as usize).min(points - 1);
    let d = (y - j as f64 * h) / h;
    (cdf[j] * (1.0 - d) + cdf[j + 1] * d).clamp(0.0, 1.0)
}

const MAX_CHAIN: usize = 10_000;

/// A target's endogenous chain since it last entered a regime.
#[derive(Debug, Clone, PartialEq)]
struct Chain {
    start: f64,
    /// Time of the last read while the chain was still moving.
    pinned: Option<f64>,
}

#[derive(Debug, Clone)]
struct Branch {
    weight: f64,
    /// Current value of non-moving attributes; for moving targets, the value
    /// at chain start or at the pin.
    values: Vec<usize>,
    chains: Vec<Option<Chain>>,
    record: Vec<usize>,
}

struct Oracle<'a, T> {
    model: &'a ModelDef<T>,
    delta: f64,
    max_error: f64,
}

impl<'a, T: Real> Oracle<'a, T> {
    /// Distribution of a target's value `elapsed` after its chain started at
    /// `v0`, with every other attribute fixed at `values`.
    fn chain_distribution(&mut self, values: &[usize], x: AttrId, elapsed: f64) -> Result<Vec<(usize, f64)>> {
        let model = self.model;
        let mut vals = values.to_vec();
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        let mut reach = 1.0;
        let mut out: Vec<(usize, f64)> = Vec::new();
        let mut add = |v: usize, p: f64| {
            if p > 0.0 {
                match out.iter_mut().find(|(w, _)| *w == v) {
                    Some(e) => e.1 += p,
                    None => out.push((v, p)),
                }
            }
        };
        loop {
            let v = vals[x.index()];
            let regime = net_influence(model, &vals, x)?;
            let Some(iv) = regime.interval else {
                add(v, reach);
                break;
            };
            lo.push(iv.lo.as_f64());
            hi.push(iv.hi.as_f64());
            let (next, err) = crossing(&lo, &hi, elapsed);
            self.max_error = self.max_error.max(err);
            add(v, (reach - next).max(0.0));
            if next <= 0.0 {
                break;
            }
            if lo.len() >= MAX_CHAIN {
                return Err(Error::Unsupported(format!(
                    "chain of `{}` is longer than {MAX_CHAIN} steps",
                    model.attr_def(x).name
                )));
            }
            reach = next;
            let max = model.attr_def(x).max_index();
            vals[x.index()] = match regime.direction {
                Direction::Up if v < max => v + 1,
                Direction::Down if v > 0 => v - 1,
                _ => return Err(Error::Invariant(format!("`{}` cannot move", model.attr_def(x).name))),
            };
        }
        Ok(out)
    }

    /// Splits `branch` on the value of `x` at `time`.
    fn read(&mut self, branch: Branch, x: AttrId, time: f64) -> Result<Vec<Branch>> {
        let i = x.index();
        let Some(chain) = branch.chains[i].clone() else {
            return Ok(vec![branch]);
        };
        if let Some(at) = chain.pinned {
            if (at - time).abs() < self.delta / 2.0 {
                return Ok(vec![branch]);
            }
            return Err(Error::Unsupported(format!(
                "`{}` is read at two different times while it is changing",
                self.model.attr_def(x).name
            )));
        }
        let elapsed = (time - chain.start).max(0.0);
        let dist = self.chain_distribution(&branch.values, x, elapsed)?;
        let mut out = Vec::with_capacity(dist.len());
        for (v, p) in dist {
            let mut b = branch.clone();
            b.weight *= p;
            b.values[i] = v;
            let settled = net_influence(self.model, &b.values, x)?.is_steady();
            b.chains[i] = if settled {
                None
            } else {
                Some(Chain {
                    start: chain.start,
                    pinned: Some(time),
                })
            };
            out.push(b);
        }
        Ok(out)
    }

    fn read_all(&mut self, branches: Vec<Branch>, attrs: &[AttrId], time: f64) -> Result<Vec<Branch>> {
        let mut current = branches;
        for &x in attrs {
            let mut next = Vec::with_capacity(current.len());
            for b in current {
                next.extend(self.read(b, x, time)?);
            }
            current = next;
        }
        Ok(current)
    }

    fn record(&self, plan: &RecordPlan<T>, entry: usize, after: bool, branches: &mut [Branch]) {
        for (k, slot) in plan.slots.iter().enumerate() {
            if slot.entry == entry && slot.after == after {
                for b in branches.iter_mut() {
                    b.record[k] = b.values[slot.attr.index()];
                }
            }
        }
    }

    fn slot_attrs(plan: &RecordPlan<T>, entry: usize, after: bool) -> Vec<AttrId> {
        plan.slots
            .iter()
            .filter(|s| s.entry == entry && s.after == after)
            .map(|s| s.attr)
            .collect()
    }

    /// Processes timeline entry `i` for one branch.
    fn step(&mut self, scenario: &ScenarioDef<T>, i: usize, branch: Branch) -> Result<Vec<Branch>> {
        let model = self.model;
        let entry = &scenario.timeline[i];
        let event = &model.events[entry.event];
        let t = entry.time.value(model.delta).as_f64();

        let mut needed = BTreeSet::new();
        for c in &event.consequences {
            c.condition.attributes(&mut needed);
        }
        let needed: Vec<AttrId> = needed.into_iter().collect();
        let mut out = Vec::new();
        for b in self.read_all(vec![branch], &needed, t)? {
            let group = event.true_group(&b.values)?;
            for &ci in &group.members {
                let c = &event.consequences[ci];
                if let Some(label) = &entry.observed {
                    if c.observation.as_deref() != Some(label.as_str()) {
                        continue;
                    }
                }
                let p = c.probability.as_f64();
                if p <= 0.0 {
                    continue;
                }
                let mut nb = b.clone();
                nb.weight *= p;
                let touched: Vec<AttrId> = c.changes.iter().map(|(a, _)| *a).collect();
                for cb in self.read_all(vec![nb], &touched, t)? {
                    let changed: Vec<AttrId> = if i == 0 {
                        (0..model.attributes.len()).map(AttrId).collect()
                    } else {
                        c.changes
                            .iter()
                            .filter(|(a, v)| cb.values[a.index()] != *v)
                            .map(|(a, _)| *a)
                            .collect()
                    };
                    let mut affected: BTreeSet<AttrId> = changed.iter().copied().collect();
                    for a in &changed {
                        affected.extend(model.dependents(*a));
                    }
                    let affected: Vec<AttrId> = affected.into_iter().collect();
                    for mut ab in self.read_all(vec![cb], &affected, t)? {
                        let old: Vec<_> = affected
                            .iter()
                            .map(|&x| net_influence(model, &ab.values, x))
                            .collect::<Result<_>>()?;
                        for &(a, v) in &c.changes {
                            ab.values[a.index()] = v;
                        }
                        for (&x, old) in affected.iter().zip(old) {
                            let regime = net_influence(model, &ab.values, x)?;
                            if changed.contains(&x) || regime != old {
                                ab.chains[x.index()] = (!regime.is_steady()).then_some(Chain {
                                    start: t + self.delta,
                                    pinned: None,
                                });
                            }
                        }
                        out.push(ab);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Exact posterior of every query of `scenario`.
///
/// Fails with an unsupported-model error when the model is not
/// feed-forward or a target would have to be read twice while moving.
pub fn exact_posterior<T: Real>(model: &ModelDef<T>, scenario: &ScenarioDef<T>) -> Result<PosteriorReport<T>> {
    let cert = check_feedforward(model);
    if !cert.verdict {
        return Err(Error::Unsupported(cert.describe()));
    }
    scenario.check(model)?;
    let mut plan = RecordPlan::default();
    for q in &scenario.queries {
        plan.push(model, scenario, q.attr, q.time)?;
    }
    let priors = model.effective_priors(&scenario.priors)?;
    let n_attr = model.attributes.len();

    let mut branches = vec![Branch {
        weight: 1.0,
        values: vec![0; n_attr],
        chains: vec![None; n_attr],
        record: vec![0; plan.slots.len()],
    }];
    for (a, probs) in priors.iter().enumerate() {
        let mut next = Vec::new();
        for b in &branches {
            for (v, p) in probs.iter().enumerate() {
                let p = p.as_f64();
                if p > 0.0 {
                    let mut nb = b.clone();
                    nb.weight *= p;
                    nb.values[a] = v;
                    next.push(nb);
                }
            }
        }
        branches = next;
    }

    let mut oracle = Oracle {
        model,
        delta: model.delta.as_f64(),
        max_error: 0.0,
    };
    for i in 0..scenario.timeline.len() {
        let t = scenario.timeline[i].time.value(model.delta).as_f64();
        branches = oracle.read_all(branches, &Oracle::slot_attrs(&plan, i, false), t)?;
        oracle.record(&plan, i, false, &mut branches);
        let mut next = Vec::new();
        for b in branches {
            next.extend(oracle.step(scenario, i, b)?);
        }
        let after = t + oracle.delta;
        branches = oracle.read_all(next, &Oracle::slot_attrs(&plan, i, true), after)?;
        oracle.record(&plan, i, true, &mut branches);
        branches.retain(|b| b.weight > 0.0);
    }

    let total: f64 = branches.iter().map(|b| b.weight).sum();
    let mut queries = Vec::new();
    for q in &scenario.queries {
        let def = model.attr_def(q.attr);
        let (entry, after) = scenario
            .slot_time(&q.time, model.delta)
            .ok_or_else(|| Error::scenario(format!("query time {} is off the timeline", q.time)))?;
        let slot = plan
            .find(q.attr, entry, after)
            .ok_or_else(|| Error::Invariant("query slot missing".into()))?;
        let mut probs = vec![0.0; def.values.len()];
        if total > 0.0 {
            for b in &branches {
                probs[b.record[slot]] += b.weight / total;
            }
        }
        queries.push(QueryPosterior {
            attribute: def.name.clone(),
            time: q.time.to_string(),
            values: def.values.clone(),
            probs: probs.into_iter().map(T::of).collect(),
            std_errors: None,
        });
    }
    let rounding = 1e3 * f64::EPSILON.max(T::epsilon().as_f64());
    Ok(PosteriorReport {
        queries,
        n: None,
        seed: None,
        ess: None,
        error_bound: Some(T::of(4.0 * oracle.max_error + rounding)),
        compatible: total > 0.0,
        wall_time: None,
    })
}
