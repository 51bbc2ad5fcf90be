//! Sequential imputation over scenario timelines.
//!
//! Each trial carries a log-weight, the sum of the log-likelihoods of the
//! observations it absorbed. Posterior distributions are weight-sums over
//! the recorded values, normalized at report time, so a session can absorb
//! further observations without regenerating its past.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{run_trials, simulate_segment, trial_rng, with_workers, Proposal, RecordPlan, Trial};
use crate::error::{Error, Result};
use crate::model::{AttrId, EventDef, ModelDef, ScenarioDef, Time};
use crate::real::Real;

/// Attribute/time pairs an observation's likelihood depends on.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightSet<T> {
    pub pairs: Vec<(AttrId, Time<T>)>,
}

/// For each observing entry, every attribute named by a consequence that
/// reports the actual label, at the entry's time.
pub fn weight_relevant_set<T: Real>(model: &ModelDef<T>, scenario: &ScenarioDef<T>) -> WeightSet<T> {
    weight_set_for(model, scenario, 0..scenario.timeline.len())
}

fn weight_set_for<T: Real>(
    model: &ModelDef<T>,
    scenario: &ScenarioDef<T>,
    entries: std::ops::Range<usize>,
) -> WeightSet<T> {
    let mut set = WeightSet::default();
    for entry in &scenario.timeline[entries] {
        let Some(label) = &entry.observed else { continue };
        for attr in model.events[entry.event].attributes_for_label(label) {
            let dup = set
                .pairs
                .iter()
                .any(|(a, t)| *a == attr && t.same_instant(&entry.time, model.delta));
            if !dup {
                set.pairs.push((attr, entry.time));
            }
        }
    }
    set
}

/// Probability that `event`, occurring in a state with `values`, reports
/// `label`.
pub fn observation_likelihood<T: Real>(event: &EventDef<T>, values: &[usize], label: &str) -> Result<T> {
    if !event.labels().contains(&label) {
        return Err(Error::UnknownLabel {
            event: event.name.clone(),
            label: label.to_string(),
        });
    }
    let group = event.true_group(values)?;
    Ok(group
        .members
        .iter()
        .map(|&i| &event.consequences[i])
        .filter(|c| c.observation.as_deref() == Some(label))
        .fold(T::zero(), |acc, c| acc + c.probability))
}

/// Effective sample size `(Σw)² / Σw²`.
pub fn ess<T: Real>(weights: &[T]) -> Result<T> {
    let (s, s2) = weights.iter().fold((T::zero(), T::zero()), |(s, s2), &w| (s + w, s2 + w * w));
    if weights.iter().any(|w| *w < T::zero() || !w.is_finite()) {
        return Err(Error::Domain("weights must be finite and nonnegative".into()));
    }
    if s <= T::zero() {
        return Err(Error::Domain("all weights are zero".into()));
    }
    Ok(s * s / s2)
}

/// Weighted distribution of one query.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryPosterior<T> {
    pub attribute: String,
    pub time: String,
    pub values: Vec<String>,
    pub probs: Vec<T>,
    /// Monte Carlo standard error per entry; absent for exact results.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std_errors: Option<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorReport<T> {
    pub queries: Vec<QueryPosterior<T>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ess: Option<T>,
    /// Numerical error bound of an exact computation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_bound: Option<T>,
    /// False when no trial (or branch) is compatible with the observations.
    pub compatible: bool,
    #[serde(skip)]
    pub wall_time: Option<Duration>,
}

impl<T: Real> PosteriorReport<T> {
    pub fn query(&self, attribute: &str) -> Option<&QueryPosterior<T>> {
        self.queries.iter().find(|q| q.attribute == attribute)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InferOptions {
    pub trials: u64,
    pub seed: u64,
    pub proposal: Proposal,
    /// Worker threads; zero picks the machine default.
    pub workers: usize,
}

impl InferOptions {
    pub fn new(trials: u64, seed: u64) -> Self {
        InferOptions {
            trials,
            seed,
            proposal: Proposal::default(),
            workers: 0,
        }
    }
}

/// Trials of a scenario together with what is needed to extend them.
#[derive(Debug, Clone, PartialEq)]
pub struct Session<T> {
    pub model: ModelDef<T>,
    pub scenario: ScenarioDef<T>,
    pub plan: RecordPlan<T>,
    pub trials: Vec<Trial<T>>,
    pub seed: u64,
    /// Number of timeline segments simulated so far.
    pub segments: u32,
    pub proposal: Proposal,
}

impl<T: Real> Session<T> {
    pub fn n(&self) -> usize {
        self.trials.len()
    }

    pub fn exhausted(&self) -> bool {
        self.trials.iter().all(|t| t.log_weight == T::neg_infinity())
    }

    /// Normalized weights in trial order; `None` when every weight is zero.
    pub fn normalized_weights(&self) -> Option<Vec<T>> {
        let max = self
            .trials
            .iter()
            .fold(T::neg_infinity(), |m, t| m.max(t.log_weight));
        if max == T::neg_infinity() {
            return None;
        }
        let raw: Vec<T> = self.trials.iter().map(|t| (t.log_weight - max).exp()).collect();
        let total = raw.iter().fold(T::zero(), |a, &w| a + w);
        Some(raw.into_iter().map(|w| w / total).collect())
    }

    /// Posterior for every scenario query under the current weights.
    pub fn report(&self) -> Result<PosteriorReport<T>> {
        let weights = self.normalized_weights();
        let delta = self.model.delta;
        let mut queries = Vec::with_capacity(self.scenario.queries.len());
        for q in &self.scenario.queries {
            let def = self.model.attr_def(q.attr);
            let (entry, after) = self
                .scenario
                .slot_time(&q.time, delta)
                .ok_or_else(|| Error::scenario(format!("query time {} is off the timeline", q.time)))?;
            let slot = self.plan.find(q.attr, entry, after).ok_or_else(|| {
                Error::Unsupported(format!("`{}` at {} was not recorded by this session", def.name, q.time))
            })?;
            let k = def.values.len();
            let mut probs = vec![T::zero(); k];
            let mut std_errors = vec![T::zero(); k];
            if let Some(w) = &weights {
                for (t, &wi) in self.trials.iter().zip(w) {
                    probs[t.values[slot]] = probs[t.values[slot]] + wi;
                }
                for (t, &wi) in self.trials.iter().zip(w) {
                    for (v, se) in std_errors.iter_mut().enumerate() {
                        let hit = if t.values[slot] == v { T::one() } else { T::zero() };
                        let d = wi * (hit - probs[v]);
                        *se = *se + d * d;
                    }
                }
                for se in &mut std_errors {
                    *se = se.sqrt();
                }
            }
            queries.push(QueryPosterior {
                attribute: def.name.clone(),
                time: q.time.to_string(),
                values: def.values.clone(),
                probs,
                std_errors: Some(std_errors),
            });
        }
        let ess = match &weights {
            Some(w) => Some(ess(w)?),
            None => None,
        };
        Ok(PosteriorReport {
            queries,
            n: Some(self.n() as u64),
            seed: Some(self.seed),
            ess,
            error_bound: None,
            compatible: weights.is_some(),
            wall_time: None,
        })
    }
}

fn build_plan<T: Real>(
    model: &ModelDef<T>,
    scenario: &ScenarioDef<T>,
    plan: &mut RecordPlan<T>,
    queries: &[crate::model::Query<T>],
    weights: &WeightSet<T>,
) -> Result<()> {
    for q in queries {
        plan.push(model, scenario, q.attr, q.time)?;
    }
    for &(attr, time) in &weights.pairs {
        plan.push(model, scenario, attr, time)?;
    }
    Ok(())
}

/// Generates `options.trials` weighted trials and reports the posterior of
/// every query.
pub fn run_inference<T: Real>(
    model: &ModelDef<T>,
    scenario: &ScenarioDef<T>,
    options: InferOptions,
) -> Result<(Session<T>, PosteriorReport<T>)> {
    if options.trials == 0 {
        return Err(Error::Domain("trial count must be at least 1".into()));
    }
    scenario.check(model)?;
    let started = Instant::now();
    let mut plan = RecordPlan::default();
    build_plan(model, scenario, &mut plan, &scenario.queries, &weight_relevant_set(model, scenario))?;
    let trials = run_trials(model, scenario, &plan, options.proposal, options.trials, options.seed, options.workers)?;
    let session = Session {
        model: model.clone(),
        scenario: scenario.clone(),
        plan,
        trials,
        seed: options.seed,
        segments: 1,
        proposal: options.proposal,
    };
    let mut report = session.report()?;
    report.wall_time = Some(started.elapsed());
    Ok((session, report))
}

/// Resumes every trial from its horizon state through the entries and
/// queries of `extension`, which must not start before the horizon.
///
/// Queries of the extension may refer to new entries or to anything the
/// session already recorded.
pub fn extend<T: Real>(
    session: &Session<T>,
    extension: &ScenarioDef<T>,
    workers: usize,
) -> Result<(Session<T>, PosteriorReport<T>)> {
    if session.exhausted() {
        return Err(Error::SessionExhausted);
    }
    if !extension.priors.is_empty() {
        return Err(Error::scenario("an extension cannot override priors"));
    }
    let model = &session.model;
    let delta = model.delta;
    let horizon = session
        .scenario
        .horizon()
        .ok_or_else(|| Error::scenario("session has an empty timeline"))?;
    if let Some(first) = extension.timeline.first() {
        if first.time.value(delta) < horizon.value(delta) - delta * T::of(0.5) {
            return Err(Error::TimeOrder(format!(
                "extension starts at {} before the session horizon {horizon}",
                first.time
            )));
        }
    }
    let started = Instant::now();
    let old_len = session.scenario.timeline.len();
    let mut scenario = session.scenario.clone();
    scenario.timeline.extend(extension.timeline.iter().cloned());
    scenario.queries.extend(extension.queries.iter().copied());
    scenario.check(model)?;

    let mut plan = session.plan.clone();
    let weights = weight_set_for(model, &scenario, old_len..scenario.timeline.len());
    build_plan(model, &scenario, &mut plan, &extension.queries, &weights)?;
    for slot in &plan.slots[session.plan.slots.len()..] {
        if slot.entry < old_len && !(slot.entry == old_len - 1 && slot.after) {
            return Err(Error::Unsupported(format!(
                "`{}` at {} was not recorded by this session",
                model.attr_def(slot.attr).name,
                slot.time
            )));
        }
    }
    // the horizon state is exactly the state after the last old entry
    let horizon_slots: Vec<(usize, AttrId)> = plan
        .slots
        .iter()
        .enumerate()
        .skip(session.plan.slots.len())
        .filter(|(_, s)| s.entry == old_len - 1)
        .map(|(k, s)| (k, s.attr))
        .collect();

    let segment = session.segments;
    let range = old_len..scenario.timeline.len();
    let trials = with_workers(workers, || {
        session
            .trials
            .par_iter()
            .map(|old| {
                let mut trial = old.clone();
                trial.values.resize(plan.slots.len(), 0);
                for &(k, attr) in &horizon_slots {
                    trial.values[k] = trial.horizon.value(attr);
                }
                let mut rng = trial_rng(session.seed, segment, trial.index);
                simulate_segment(model, &scenario, &plan, range.clone(), session.proposal, &mut trial, &mut rng)?;
                Ok(trial)
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let extended = Session {
        model: model.clone(),
        scenario,
        plan,
        trials,
        seed: session.seed,
        segments: segment + 1,
        proposal: session.proposal,
    };
    let mut report = extended.report()?;
    report.wall_time = Some(started.elapsed());
    Ok((extended, report))
}
