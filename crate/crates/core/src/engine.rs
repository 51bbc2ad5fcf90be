//! Trial generation: exogenous events at known times, endogenous
//! transitions in between.
//!
//! Every attribute under a non-steady net influence carries a pending
//! transition time. The time is sampled once when the attribute enters an
//! influence regime and is then only decremented as the clock moves; it is
//! resampled when the regime changes or the attribute's own value changes.

use std::collections::BTreeSet;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::influence::net_influence;
use crate::model::{initial_state, pick, AttrId, Direction, EventDef, ModelDef, ScenarioDef, SystemState, Time};
use crate::real::Real;

/// How consequences of observing events are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Proposal {
    /// Draw among the consequences carrying the actual label and weight the
    /// trial by that label's likelihood.
    #[default]
    Conditional,
    /// Draw from the event's own distribution and zero the weight when the
    /// realized label disagrees with the actual one.
    Prior,
}

impl Proposal {
    pub fn as_str(self) -> &'static str {
        match self {
            Proposal::Conditional => "conditional",
            Proposal::Prior => "prior",
        }
    }
}

/// How [`apply_event`] picks a consequence.
#[derive(Debug, Clone, Copy)]
pub enum Draw<'a> {
    /// From the true group's distribution.
    Free,
    /// Among the true group's consequences reporting this label,
    /// renormalized.
    Given(&'a str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventOutcome<T> {
    /// Index into the event's consequence list.
    pub consequence: usize,
    pub label: Option<String>,
    /// Attributes whose value the change set actually altered.
    pub changed: Vec<AttrId>,
    /// Probability of the conditioning label in the pre-event state, for
    /// [`Draw::Given`]; one otherwise.
    pub likelihood: T,
}

/// Index of the consequence selected by the uniform draw `u` within the true
/// group, by cumulative sum over declaration order.
pub fn select_consequence<T: Real>(event: &EventDef<T>, values: &[usize], draw: Draw<'_>, u: T) -> Result<(usize, T)> {
    let group = event.true_group(values)?;
    match draw {
        Draw::Free => {
            let probs = group.members.iter().map(|&i| event.consequences[i].probability);
            Ok((group.members[pick(probs, u)], T::one()))
        }
        Draw::Given(label) => {
            let matching: Vec<usize> = group
                .members
                .iter()
                .copied()
                .filter(|&i| event.consequences[i].observation.as_deref() == Some(label))
                .collect();
            let lik = matching
                .iter()
                .fold(T::zero(), |a, &i| a + event.consequences[i].probability);
            if lik <= T::zero() {
                // no compatible consequence: continue along the prior path
                let probs = group.members.iter().map(|&i| event.consequences[i].probability);
                return Ok((group.members[pick(probs, u)], T::zero()));
            }
            let probs = matching.iter().map(|&i| event.consequences[i].probability);
            Ok((matching[pick(probs, u * lik)], lik))
        }
    }
}

/// Realizes one exogenous event: picks the consequence, applies its change
/// set, and moves the clock (and every pending time) on by one delta.
pub fn apply_event<T: Real, R: Rng + ?Sized>(
    model: &ModelDef<T>,
    state: &mut SystemState<T>,
    event: &EventDef<T>,
    draw: Draw<'_>,
    rng: &mut R,
) -> Result<EventOutcome<T>> {
    if let Draw::Given(label) = draw {
        if !event.labels().contains(&label) {
            return Err(Error::UnknownLabel {
                event: event.name.clone(),
                label: label.to_string(),
            });
        }
    }
    let u = T::of(rng.random::<f64>());
    let (consequence, likelihood) = select_consequence(event, &state.values, draw, u)?;
    let c = &event.consequences[consequence];
    let changed = state.assign(&c.changes);
    let delta = model.delta;
    for p in state.pending.iter_mut().flatten() {
        // a transition due within this delta fires right after the event
        *p = (*p - delta).max(T::min_positive_value());
    }
    state.clock = state.clock + delta;
    Ok(EventOutcome {
        consequence,
        label: c.observation.clone(),
        changed,
        likelihood,
    })
}

/// Installs a regime: direction, and a fresh pending time when moving.
fn install<T: Real, R: Rng + ?Sized>(state: &mut SystemState<T>, attr: AttrId, regime: crate::influence::NetInfluence<T>, rng: &mut R) {
    let i = attr.index();
    state.regimes[i] = regime;
    state.directions[i] = regime.direction;
    state.pending[i] = regime.interval.map(|iv| iv.sample(rng).max(T::min_positive_value()));
}

/// Recomputes net influences for the changed attributes and everything they
/// influence.
///
/// An attribute whose own value changed always gets a fresh sample from its
/// new regime. Any other affected attribute is resampled only if its regime
/// differs from the one its pending time was drawn under.
pub fn recompute_influences<T: Real, R: Rng + ?Sized>(
    model: &ModelDef<T>,
    state: &mut SystemState<T>,
    changed: &[AttrId],
    rng: &mut R,
) -> Result<()> {
    let mut affected: BTreeSet<AttrId> = changed.iter().copied().collect();
    for a in changed {
        affected.extend(model.dependents(*a));
    }
    for attr in affected {
        let regime = net_influence(model, &state.values, attr)?;
        if changed.contains(&attr) || regime != state.regimes[attr.index()] {
            install(state, attr, regime, rng);
        }
    }
    Ok(())
}

/// Simulates endogenous transitions from the state's clock up to `t_end`.
///
/// Returns the number of transitions. Exact ties between pending times go to
/// the attribute declared first.
pub fn advance_endogenous<T: Real, R: Rng + ?Sized>(
    model: &ModelDef<T>,
    state: &mut SystemState<T>,
    t_end: T,
    rng: &mut R,
) -> Result<usize> {
    if state.clock > t_end {
        return Err(Error::TimeOrder(format!(
            "cannot advance from {} back to {t_end}",
            state.clock
        )));
    }
    let mut transitions = 0;
    loop {
        let next = state
            .pending
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.map(|p| (i, p)))
            .fold(None, |best: Option<(usize, T)>, (i, p)| match best {
                Some((_, b)) if b <= p => best,
                _ => Some((i, p)),
            });
        let remaining = t_end - state.clock;
        let Some((i, wait)) = next.filter(|(_, wait)| *wait <= remaining) else {
            for p in state.pending.iter_mut().flatten() {
                *p = *p - remaining;
            }
            state.clock = t_end;
            return Ok(transitions);
        };
        let attr = AttrId(i);
        let max = model.attributes[i].max_index();
        let value = state.values[i];
        state.values[i] = match state.directions[i] {
            Direction::Up if value < max => value + 1,
            Direction::Down if value > 0 => value - 1,
            dir => {
                return Err(Error::Invariant(format!(
                    "`{}` cannot move {dir} from index {value}",
                    model.attributes[i].name
                )))
            }
        };
        state.pending[i] = None;
        for (j, p) in state.pending.iter_mut().enumerate() {
            if let Some(p) = p {
                *p = *p - wait;
                if *p < T::zero() {
                    return Err(Error::Invariant(format!(
                        "pending time of `{}` went negative",
                        model.attributes[j].name
                    )));
                }
            }
        }
        state.clock = state.clock + wait;
        transitions += 1;
        recompute_influences(model, state, &[attr], rng)?;
    }
}

/// A query or weighting proposition bound to a point on the timeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordSlot<T> {
    pub attr: AttrId,
    pub time: Time<T>,
    /// Timeline entry the time refers to.
    pub entry: usize,
    /// Whether the value is read right after the entry's event instead of
    /// right before it.
    pub after: bool,
}

/// Attribute/time pairs a trial must record, in a fixed order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecordPlan<T> {
    pub slots: Vec<RecordSlot<T>>,
}

impl<T: Real> RecordPlan<T> {
    /// Binds `pairs` to the scenario timeline, dropping duplicates.
    pub fn new(model: &ModelDef<T>, scenario: &ScenarioDef<T>, pairs: &[(AttrId, Time<T>)]) -> Result<Self> {
        let mut plan = RecordPlan::default();
        for &(attr, time) in pairs {
            plan.push(model, scenario, attr, time)?;
        }
        Ok(plan)
    }

    /// Adds a slot unless an equivalent one exists; returns its index.
    pub fn push(&mut self, model: &ModelDef<T>, scenario: &ScenarioDef<T>, attr: AttrId, time: Time<T>) -> Result<usize> {
        let (entry, after) = scenario.slot_time(&time, model.delta).ok_or_else(|| {
            Error::scenario(format!(
                "time {time} of `{}` is neither an event time nor the instant after one",
                model.attributes[attr.index()].name
            ))
        })?;
        if let Some(k) = self.find(attr, entry, after) {
            return Ok(k);
        }
        self.slots.push(RecordSlot { attr, time, entry, after });
        Ok(self.slots.len() - 1)
    }

    pub fn find(&self, attr: AttrId, entry: usize, after: bool) -> Option<usize> {
        self.slots
            .iter()
            .position(|s| s.attr == attr && s.entry == entry && s.after == after)
    }

    fn record(&self, entry: usize, after: bool, state: &SystemState<T>, values: &mut [usize]) {
        for (k, slot) in self.slots.iter().enumerate() {
            if slot.entry == entry && slot.after == after {
                values[k] = state.values[slot.attr.index()];
            }
        }
    }
}

/// One simulated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial<T> {
    pub index: u64,
    /// Recorded value per plan slot.
    pub values: Vec<usize>,
    /// Consequence realized at each timeline entry.
    pub consequences: Vec<usize>,
    /// Log of the accumulated observation likelihood; `-inf` for trials
    /// incompatible with the observations.
    pub log_weight: T,
    /// State at the instant after the last event.
    pub horizon: SystemState<T>,
}

impl<T: Real> Trial<T> {
    pub fn weight(&self) -> T {
        self.log_weight.exp()
    }

    /// Realized observation label per timeline entry.
    pub fn labels<'m>(&self, model: &'m ModelDef<T>, scenario: &ScenarioDef<T>) -> Vec<Option<&'m str>> {
        scenario
            .timeline
            .iter()
            .zip(&self.consequences)
            .map(|(e, &c)| model.events[e.event].consequences[c].observation.as_deref())
            .collect()
    }
}

/// RNG stream for trial `index` of segment `segment` under `seed`.
///
/// Segment 0 is the initial run; each extension uses the next segment.
pub fn trial_rng(seed: u64, segment: u32, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(segment_seed(seed, segment));
    rng.set_stream(index);
    rng
}

fn segment_seed(seed: u64, segment: u32) -> u64 {
    if segment == 0 {
        return seed;
    }
    // splitmix64 finalizer
    let mut z = seed ^ (u64::from(segment)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs timeline entries `range` on `trial`, starting from its horizon state.
pub(crate) fn simulate_segment<T: Real, R: Rng + ?Sized>(
    model: &ModelDef<T>,
    scenario: &ScenarioDef<T>,
    plan: &RecordPlan<T>,
    range: Range<usize>,
    proposal: Proposal,
    trial: &mut Trial<T>,
    rng: &mut R,
) -> Result<()> {
    let delta = model.delta;
    for i in range {
        let entry = &scenario.timeline[i];
        let event = &model.events[entry.event];
        let state = &mut trial.horizon;
        advance_endogenous(model, state, entry.time.value(delta), rng)?;
        plan.record(i, false, state, &mut trial.values);

        let draw = match (&entry.observed, proposal) {
            (Some(label), Proposal::Conditional) => Draw::Given(label),
            _ => Draw::Free,
        };
        let outcome = apply_event(model, state, event, draw, rng)?;
        if let Some(actual) = entry.observed.as_deref() {
            let factor = match proposal {
                Proposal::Conditional => outcome.likelihood,
                Proposal::Prior if outcome.label.as_deref() == Some(actual) => T::one(),
                Proposal::Prior => T::zero(),
            };
            trial.log_weight = trial.log_weight + factor.ln();
        }
        let changed: Vec<AttrId> = if i == 0 {
            (0..model.attributes.len()).map(AttrId).collect()
        } else {
            outcome.changed
        };
        recompute_influences(model, state, &changed, rng)?;
        trial.consequences.push(outcome.consequence);
        plan.record(i, true, state, &mut trial.values);
    }
    Ok(())
}

/// Generates trial `index` over the whole scenario.
///
/// The first event recomputes every attribute's influences, so influences
/// already active in the initial state are not lost.
pub fn run_trial<T: Real>(
    model: &ModelDef<T>,
    scenario: &ScenarioDef<T>,
    priors: &[Vec<T>],
    plan: &RecordPlan<T>,
    proposal: Proposal,
    seed: u64,
    index: u64,
) -> Result<Trial<T>> {
    let mut rng = trial_rng(seed, 0, index);
    let start = scenario
        .timeline
        .first()
        .ok_or_else(|| Error::scenario("timeline is empty"))?
        .time
        .value(model.delta);
    let state = initial_state(model, priors, start, &mut rng)?;
    let mut trial = Trial {
        index,
        values: vec![0; plan.slots.len()],
        consequences: Vec::with_capacity(scenario.timeline.len()),
        log_weight: T::zero(),
        horizon: state,
    };
    simulate_segment(model, scenario, plan, 0..scenario.timeline.len(), proposal, &mut trial, &mut rng)?;
    Ok(trial)
}

/// Runs `f` on a pool of `workers` threads; zero means rayon's default.
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Invariant(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Generates trials `0..n` in parallel; the result is in index order and
/// does not depend on the worker count.
pub fn run_trials<T: Real>(
    model: &ModelDef<T>,
    scenario: &ScenarioDef<T>,
    plan: &RecordPlan<T>,
    proposal: Proposal,
    n: u64,
    seed: u64,
    workers: usize,
) -> Result<Vec<Trial<T>>> {
    let priors = model.effective_priors(&scenario.priors)?;
    with_workers(workers, || {
        (0..n)
            .into_par_iter()
            .map(|i| run_trial(model, scenario, &priors, plan, proposal, seed, i))
            .collect::<Result<Vec<_>>>()
    })?
}
