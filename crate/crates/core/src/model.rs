//! Attributes, events, scenarios and system states.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::influence::{InfluenceRule, NetInfluence};
use crate::real::Real;
use crate::span::{Site, SourceMap, Span};

/// Index of an attribute in its model's declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AttrId(pub usize);

impl AttrId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

/// An attribute with a totally ordered value set; index 0 is the lowest value.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeDef {
    pub name: String,
    pub values: Vec<String>,
}

impl AttributeDef {
    pub fn new(name: impl Into<String>, values: &[&str]) -> Self {
        AttributeDef {
            name: name.into(),
            values: values.iter().map(|v| v.to_string()).collect(),
        }
    }

    pub fn value_index(&self, value: &str) -> Option<usize> {
        self.values.iter().position(|v| v == value)
    }

    pub fn max_index(&self) -> usize {
        self.values.len() - 1
    }
}

/// Direction of change of an attribute's value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Down,
    Steady,
    Up,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Down => "down",
            Direction::Steady => "steady",
            Direction::Up => "up",
        }
    }

    /// Whether a move in this direction is possible from `index` in a value
    /// set whose highest index is `max`.
    pub fn admissible(self, index: usize, max: usize) -> bool {
        match self {
            Direction::Down => index > 0,
            Direction::Up => index < max,
            Direction::Steady => true,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A closed interval of minutes, read as a uniform distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeInterval<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: Real> TimeInterval<T> {
    pub fn new(lo: T, hi: T) -> Result<Self> {
        if !(lo >= T::zero() && lo <= hi && hi.is_finite()) {
            return Err(Error::Domain(format!("invalid time interval [{lo}, {hi}]")));
        }
        Ok(TimeInterval { lo, hi })
    }

    /// Builds an interval from two endpoints in either order.
    pub fn normalized(a: T, b: T) -> Self {
        TimeInterval {
            lo: a.min(b),
            hi: a.max(b),
        }
    }

    pub fn midpoint(&self) -> T {
        (self.lo + self.hi) / T::of(2.0)
    }

    pub fn width(&self) -> T {
        self.hi - self.lo
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> T {
        let u = T::of(rng.random::<f64>());
        self.lo + u * (self.hi - self.lo)
    }
}

/// Boolean expression over `attribute = value` tests.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Condition {
    True,
    Is { attr: AttrId, value: usize },
    Not(Box<Condition>),
    And(Box<Condition>, Box<Condition>),
    Or(Box<Condition>, Box<Condition>),
}

impl Condition {
    pub fn is(attr: AttrId, value: usize) -> Self {
        Condition::Is { attr, value }
    }

    pub fn and(self, other: Condition) -> Self {
        Condition::And(Box::new(self), Box::new(other))
    }

    pub fn or(self, other: Condition) -> Self {
        Condition::Or(Box::new(self), Box::new(other))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(self) -> Self {
        Condition::Not(Box::new(self))
    }

    /// Evaluates against a value vector without bounds checking of the model.
    pub fn holds(&self, values: &[usize]) -> bool {
        match self {
            Condition::True => true,
            Condition::Is { attr, value } => values[attr.index()] == *value,
            Condition::Not(c) => !c.holds(values),
            Condition::And(a, b) => a.holds(values) && b.holds(values),
            Condition::Or(a, b) => a.holds(values) || b.holds(values),
        }
    }

    pub fn attributes(&self, out: &mut BTreeSet<AttrId>) {
        match self {
            Condition::True => {}
            Condition::Is { attr, .. } => {
                out.insert(*attr);
            }
            Condition::Not(c) => c.attributes(out),
            Condition::And(a, b) | Condition::Or(a, b) => {
                a.attributes(out);
                b.attributes(out);
            }
        }
    }

    /// Checks every test against the model's attributes and values.
    pub fn check<T>(&self, model: &ModelDef<T>) -> Result<()> {
        match self {
            Condition::True => Ok(()),
            Condition::Is { attr, value } => match model.attributes.get(attr.index()) {
                None => Err(Error::mismatch(format!("unknown attribute #{}", attr.index()))),
                Some(def) if *value >= def.values.len() => Err(Error::mismatch(format!(
                    "attribute `{}` has no value #{value}",
                    def.name
                ))),
                Some(_) => Ok(()),
            },
            Condition::Not(c) => c.check(model),
            Condition::And(a, b) | Condition::Or(a, b) => {
                a.check(model)?;
                b.check(model)
            }
        }
    }
}

/// `attribute = value` assignment made by a consequence.
pub type Change = (AttrId, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Consequence<T> {
    pub condition: Condition,
    pub probability: T,
    pub changes: Vec<Change>,
    pub observation: Option<String>,
}

/// Consequences of an event sharing one condition.
#[derive(Debug, Clone)]
pub struct ConditionGroup<'a> {
    pub condition: &'a Condition,
    /// Indices into the event's consequence list, in declaration order.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventDef<T> {
    pub name: String,
    pub consequences: Vec<Consequence<T>>,
}

impl<T: Real> EventDef<T> {
    /// Groups consequences by structurally equal conditions, in order of
    /// first appearance.
    pub fn groups(&self) -> Vec<ConditionGroup<'_>> {
        let mut groups: Vec<ConditionGroup<'_>> = Vec::new();
        for (i, c) in self.consequences.iter().enumerate() {
            match groups.iter_mut().find(|g| *g.condition == c.condition) {
                Some(g) => g.members.push(i),
                None => groups.push(ConditionGroup {
                    condition: &c.condition,
                    members: vec![i],
                }),
            }
        }
        groups
    }

    /// The unique group whose condition holds for `values`.
    pub fn true_group(&self, values: &[usize]) -> Result<ConditionGroup<'_>> {
        let mut hit = self.groups().into_iter().filter(|g| g.condition.holds(values));
        let first = hit.next().ok_or_else(|| Error::ModelIntegrity {
            event: self.name.clone(),
            message: "no condition holds in the current state".into(),
        })?;
        if hit.next().is_some() {
            return Err(Error::ModelIntegrity {
                event: self.name.clone(),
                message: "several conditions hold in the current state".into(),
            });
        }
        Ok(first)
    }

    /// Distinct observation labels in declaration order.
    pub fn labels(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for c in &self.consequences {
            if let Some(l) = c.observation.as_deref() {
                if !out.contains(&l) {
                    out.push(l);
                }
            }
        }
        out
    }

    /// Attributes mentioned by the conditions or change sets of consequences
    /// carrying `label`.
    pub fn attributes_for_label(&self, label: &str) -> BTreeSet<AttrId> {
        let mut out = BTreeSet::new();
        for c in &self.consequences {
            if c.observation.as_deref() == Some(label) {
                c.condition.attributes(&mut out);
                out.extend(c.changes.iter().map(|(a, _)| *a));
            }
        }
        out
    }
}

/// Prior over the initial value of one attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct Prior<T> {
    pub attr: AttrId,
    pub probs: Vec<T>,
}

/// A complete model: attributes, exogenous events and endogenous influences.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDef<T> {
    pub attributes: Vec<AttributeDef>,
    pub events: Vec<EventDef<T>>,
    pub rules: Vec<InfluenceRule<T>>,
    pub priors: Vec<Prior<T>>,
    /// Bookkeeping offset between an event and the realization of its
    /// effects, in minutes.
    pub delta: T,
    pub source: SourceMap,
}

impl<T: Real> ModelDef<T> {
    pub fn default_delta() -> T {
        T::of(0.001)
    }

    pub fn new(attributes: Vec<AttributeDef>) -> Self {
        ModelDef {
            attributes,
            events: Vec::new(),
            rules: Vec::new(),
            priors: Vec::new(),
            delta: Self::default_delta(),
            source: SourceMap::default(),
        }
    }

    pub fn attr(&self, name: &str) -> Option<AttrId> {
        self.attributes.iter().position(|a| a.name == name).map(AttrId)
    }

    pub fn attr_def(&self, id: AttrId) -> &AttributeDef {
        &self.attributes[id.index()]
    }

    pub fn event(&self, name: &str) -> Option<usize> {
        self.events.iter().position(|e| e.name == name)
    }

    /// Resolves `attribute`/`value` names, failing with a model-mismatch error.
    pub fn resolve(&self, attribute: &str, value: &str) -> Result<(AttrId, usize)> {
        let id = self
            .attr(attribute)
            .ok_or_else(|| Error::mismatch(format!("undeclared attribute `{attribute}`")))?;
        let v = self.attr_def(id).value_index(value).ok_or_else(|| {
            Error::mismatch(format!("attribute `{attribute}` has no value `{value}`"))
        })?;
        Ok((id, v))
    }

    pub fn value_name(&self, attr: AttrId, value: usize) -> &str {
        &self.attributes[attr.index()].values[value]
    }

    /// Per-attribute prior distributions, with `overrides` taking precedence
    /// over the model's own priors. Every attribute must be covered.
    pub fn effective_priors(&self, overrides: &[Prior<T>]) -> Result<Vec<Vec<T>>> {
        let mut out: Vec<Option<Vec<T>>> = vec![None; self.attributes.len()];
        for p in self.priors.iter().chain(overrides) {
            let slot = out.get_mut(p.attr.index()).ok_or_else(|| {
                Error::mismatch(format!("prior for unknown attribute #{}", p.attr.index()))
            })?;
            *slot = Some(p.probs.clone());
        }
        out.into_iter()
            .enumerate()
            .map(|(i, p)| {
                let def = &self.attributes[i];
                let probs = p.ok_or_else(|| Error::InvalidPrior {
                    attribute: def.name.clone(),
                    message: "no prior declared".into(),
                })?;
                check_distribution(&probs, def.values.len()).map_err(|message| {
                    Error::InvalidPrior {
                        attribute: def.name.clone(),
                        message,
                    }
                })?;
                Ok(probs)
            })
            .collect()
    }

    /// Rules whose target is `target`, with their model indices.
    pub fn rules_on(&self, target: AttrId) -> impl Iterator<Item = (usize, &InfluenceRule<T>)> {
        self.rules
            .iter()
            .enumerate()
            .filter(move |(_, r)| r.target == target)
    }

    /// Targets of rules that read `source`.
    pub fn dependents(&self, source: AttrId) -> BTreeSet<AttrId> {
        self.rules
            .iter()
            .filter(|r| r.sources.contains(&source))
            .map(|r| r.target)
            .collect()
    }
}

fn check_distribution<T: Real>(probs: &[T], len: usize) -> std::result::Result<(), String> {
    if probs.len() != len {
        return Err(format!("expected {len} probabilities, got {}", probs.len()));
    }
    if let Some(p) = probs.iter().find(|p| !(**p >= T::zero() && **p <= T::one())) {
        return Err(format!("probability {p} outside [0, 1]"));
    }
    let sum = probs.iter().fold(T::zero(), |a, &b| a + b);
    if (sum - T::one()).abs() > T::sum_tolerance() {
        return Err(format!("probabilities sum to {sum}, not 1"));
    }
    Ok(())
}

/// A time expressed as a base in minutes plus a whole number of deltas.
///
/// The delta count stays symbolic so `10+d` survives a round trip through
/// text without being expanded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Time<T> {
    pub base: T,
    pub deltas: u32,
}

impl<T: Real> Time<T> {
    pub fn at(base: T) -> Self {
        Time { base, deltas: 0 }
    }

    pub fn plus_deltas(self, k: u32) -> Self {
        Time {
            base: self.base,
            deltas: self.deltas + k,
        }
    }

    pub fn value(&self, delta: T) -> T {
        self.base + T::of(f64::from(self.deltas)) * delta
    }

    /// Equality of the numeric times, up to half a delta.
    pub fn same_instant(&self, other: &Time<T>, delta: T) -> bool {
        (self.value(delta) - other.value(delta)).abs() < delta / T::of(2.0)
    }
}

impl<T: Real> fmt::Display for Time<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = match self.deltas {
            0 => String::new(),
            1 => "d".to_string(),
            k => format!("{k}d"),
        };
        if self.deltas == 0 {
            write!(f, "{}", self.base)
        } else if self.base == T::zero() {
            f.write_str(&d)
        } else {
            write!(f, "{}+{d}", self.base)
        }
    }
}

/// One exogenous event occurrence on a scenario timeline.
#[derive(Debug, Clone, PartialEq)]
pub struct TimelineEntry<T> {
    pub time: Time<T>,
    /// Index of the event in the model.
    pub event: usize,
    /// Observation label actually received, for observing entries.
    pub observed: Option<String>,
}

/// Query proposition: the value of `attr` at `time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Query<T> {
    pub attr: AttrId,
    pub time: Time<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDef<T> {
    pub timeline: Vec<TimelineEntry<T>>,
    pub queries: Vec<Query<T>>,
    /// Overrides of the model's priors.
    pub priors: Vec<Prior<T>>,
    pub source: SourceMap,
}

impl<T: Real> ScenarioDef<T> {
    pub fn new(timeline: Vec<TimelineEntry<T>>, queries: Vec<Query<T>>) -> Self {
        ScenarioDef {
            timeline,
            queries,
            priors: Vec::new(),
            source: SourceMap::default(),
        }
    }

    /// The instant after the last event.
    pub fn horizon(&self) -> Option<Time<T>> {
        self.timeline.last().map(|e| e.time.plus_deltas(1))
    }

    /// Checks the scenario against its model.
    ///
    /// Times must be nondecreasing by at least one delta, observed labels
    /// must be offered by their events, and each query time must be an event
    /// time or the instant after one.
    pub fn check(&self, model: &ModelDef<T>) -> Result<()> {
        let delta = model.delta;
        let at = |site: Site| self.source.get(site);
        if self.timeline.is_empty() {
            return Err(Error::scenario("timeline is empty"));
        }
        for (i, entry) in self.timeline.iter().enumerate() {
            let event = model.events.get(entry.event).ok_or_else(|| {
                Error::scenario(format!("unknown event #{} on the timeline", entry.event))
            })?;
            let t = entry.time.value(delta);
            if i == 0 && t < T::zero() {
                return Err(Error::InvalidScenario {
                    span: at(Site::Timeline(i)),
                    message: "first event time is negative".into(),
                });
            }
            if i > 0 {
                let prev = self.timeline[i - 1].time.value(delta);
                if t - prev < delta * T::of(0.5) {
                    return Err(Error::InvalidScenario {
                        span: at(Site::Timeline(i)),
                        message: format!(
                            "event `{}` at {} does not follow the previous event by at least one delta",
                            event.name, entry.time
                        ),
                    });
                }
            }
            if let Some(label) = &entry.observed {
                if !event.labels().contains(&label.as_str()) {
                    return Err(Error::InvalidScenario {
                        span: at(Site::Timeline(i)),
                        message: format!("event `{}` never reports `{label}`", event.name),
                    });
                }
            }
        }
        for (i, q) in self.queries.iter().enumerate() {
            if q.attr.index() >= model.attributes.len() {
                return Err(Error::scenario(format!("query on unknown attribute #{}", q.attr.index())));
            }
            if self.slot_time(&q.time, delta).is_none() {
                return Err(Error::InvalidScenario {
                    span: at(Site::Query(i)),
                    message: format!(
                        "query time {} is neither an event time nor the instant after one",
                        q.time
                    ),
                });
            }
        }
        for p in &self.priors {
            if p.attr.index() >= model.attributes.len() {
                return Err(Error::scenario("prior for unknown attribute"));
            }
        }
        Ok(())
    }

    /// Locates a time on the timeline: `(i, false)` for the instant event `i`
    /// occurs, `(i, true)` for the instant after it.
    pub fn slot_time(&self, time: &Time<T>, delta: T) -> Option<(usize, bool)> {
        for (i, e) in self.timeline.iter().enumerate() {
            if e.time.same_instant(time, delta) {
                return Some((i, false));
            }
            if e.time.plus_deltas(1).same_instant(time, delta) {
                return Some((i, true));
            }
        }
        None
    }
}

/// State of the system at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState<T> {
    pub values: Vec<usize>,
    pub directions: Vec<Direction>,
    /// Remaining time to the next transition, present iff the direction is
    /// not steady.
    pub pending: Vec<Option<T>>,
    /// Net influence each pending time was sampled under.
    pub regimes: Vec<NetInfluence<T>>,
    pub clock: T,
}

impl<T: Real> SystemState<T> {
    /// A state with the given values, nothing changing.
    pub fn steady(values: Vec<usize>, clock: T) -> Self {
        let n = values.len();
        SystemState {
            values,
            directions: vec![Direction::Steady; n],
            pending: vec![None; n],
            regimes: vec![NetInfluence::steady(); n],
            clock,
        }
    }

    pub fn value(&self, attr: AttrId) -> usize {
        self.values[attr.index()]
    }

    /// Assigns the listed values and returns the attributes whose value
    /// actually changed. Directions and pending times are left alone.
    pub fn assign(&mut self, changes: &[Change]) -> Vec<AttrId> {
        let mut changed = Vec::new();
        for &(attr, value) in changes {
            if self.values[attr.index()] != value {
                self.values[attr.index()] = value;
                changed.push(attr);
            }
        }
        changed
    }

    /// Checks the direction/pending invariants against a model.
    pub fn check_invariants<U>(&self, model: &ModelDef<U>) -> Result<()> {
        for (i, def) in model.attributes.iter().enumerate() {
            let dir = self.directions[i];
            match (dir, self.pending[i]) {
                (Direction::Steady, None) => {}
                (Direction::Steady, Some(_)) => {
                    return Err(Error::Invariant(format!("`{}` is steady with a pending transition", def.name)))
                }
                (_, None) => {
                    return Err(Error::Invariant(format!("`{}` is moving with no pending time", def.name)))
                }
                (_, Some(p)) if p <= T::zero() => {
                    return Err(Error::Invariant(format!("`{}` has nonpositive pending time {p}", def.name)))
                }
                _ => {}
            }
            if !dir.admissible(self.values[i], def.max_index()) {
                return Err(Error::Invariant(format!(
                    "`{}` cannot move {dir} from `{}`",
                    def.name, def.values[self.values[i]]
                )));
            }
        }
        Ok(())
    }
}

/// Evaluates a condition against a state, checking references first.
pub fn eval_condition<T: Real>(model: &ModelDef<T>, expr: &Condition, state: &SystemState<T>) -> Result<bool> {
    expr.check(model)?;
    if state.values.len() != model.attributes.len() {
        return Err(Error::mismatch("state does not match the model's attributes"));
    }
    Ok(expr.holds(&state.values))
}

/// Returns a copy of `state` with `changes` applied; unlisted attributes,
/// directions and pending times are untouched.
pub fn apply_change_set<T: Real>(state: &SystemState<T>, changes: &[Change]) -> SystemState<T> {
    let mut next = state.clone();
    next.assign(changes);
    next
}

/// Draws initial values independently from per-attribute priors.
pub fn initial_state<T: Real, R: Rng + ?Sized>(
    model: &ModelDef<T>,
    priors: &[Vec<T>],
    start: T,
    rng: &mut R,
) -> Result<SystemState<T>> {
    if priors.len() != model.attributes.len() {
        return Err(Error::InvalidPrior {
            attribute: "*".into(),
            message: format!("expected {} priors, got {}", model.attributes.len(), priors.len()),
        });
    }
    let mut values = Vec::with_capacity(priors.len());
    for (def, probs) in model.attributes.iter().zip(priors) {
        check_distribution(probs, def.values.len()).map_err(|message| Error::InvalidPrior {
            attribute: def.name.clone(),
            message,
        })?;
        let u = T::of(rng.random::<f64>());
        values.push(pick(probs.iter().copied(), u));
    }
    Ok(SystemState::steady(values, start))
}

/// Index of the first cumulative sum exceeding `u`; the last positive entry
/// absorbs rounding slack.
pub(crate) fn pick<T: Real>(probs: impl Iterator<Item = T>, u: T) -> usize {
    let mut acc = T::zero();
    let mut last_positive = 0;
    for (i, p) in probs.enumerate() {
        if p > T::zero() {
            last_positive = i;
        }
        acc = acc + p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// Kind of a structural violation found by [`validate_model`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Attribute,
    DuplicateName,
    Reference,
    Probability,
    GroupSum,
    Overlap,
    Gap,
    DuplicateChange,
    Prior,
    Rule,
    Delta,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
    pub event: Option<String>,
    pub consequence: Option<usize>,
    pub span: Option<Span>,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(span) = self.span {
            write!(f, "{span}: ")?;
        }
        if let Some(ev) = &self.event {
            write!(f, "event `{ev}`")?;
            if let Some(c) = self.consequence {
                write!(f, " consequence {}", c + 1)?;
            }
            f.write_str(": ")?;
        }
        f.write_str(&self.message)
    }
}

/// Every violated structural invariant of a model; empty means valid.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, kind: ViolationKind, message: String, span: Option<Span>) {
        self.violations.push(Violation {
            kind,
            message,
            event: None,
            consequence: None,
            span,
        });
    }

    fn push_event(
        &mut self,
        kind: ViolationKind,
        message: String,
        event: &str,
        consequence: Option<usize>,
        span: Option<Span>,
    ) {
        self.violations.push(Violation {
            kind,
            message,
            event: Some(event.to_string()),
            consequence,
            span,
        });
    }
}

/// Upper bound on the assignments enumerated when checking an event's
/// conditions for exclusivity and exhaustiveness.
const MAX_CONDITION_ASSIGNMENTS: usize = 1 << 20;

pub fn validate_model<T: Real>(model: &ModelDef<T>) -> ValidationReport {
    let mut report = ValidationReport::default();
    let src = &model.source;

    if model.attributes.is_empty() {
        report.push(ViolationKind::Attribute, "no attributes declared".into(), None);
    }
    let mut names = HashSet::new();
    for (i, a) in model.attributes.iter().enumerate() {
        let span = src.get(Site::Attribute(i));
        if !names.insert(a.name.as_str()) {
            report.push(ViolationKind::DuplicateName, format!("attribute `{}` declared twice", a.name), span);
        }
        if a.values.len() < 2 {
            report.push(
                ViolationKind::Attribute,
                format!("attribute `{}` needs at least 2 values", a.name),
                span,
            );
        }
        let mut seen = HashSet::new();
        for v in &a.values {
            if !seen.insert(v.as_str()) {
                report.push(
                    ViolationKind::Attribute,
                    format!("attribute `{}` repeats value `{v}`", a.name),
                    span,
                );
            }
        }
    }
    if !(model.delta > T::zero() && model.delta.is_finite()) {
        report.push(ViolationKind::Delta, format!("delta must be positive, got {}", model.delta), None);
    }

    let mut event_names = HashSet::new();
    for (ei, ev) in model.events.iter().enumerate() {
        let ev_span = src.get(Site::Event(ei));
        if !event_names.insert(ev.name.as_str()) {
            report.push(ViolationKind::DuplicateName, format!("event `{}` declared twice", ev.name), ev_span);
        }
        if ev.consequences.is_empty() {
            report.push_event(ViolationKind::Gap, "event has no consequences".into(), &ev.name, None, ev_span);
            continue;
        }
        let mut references_ok = true;
        for (ci, c) in ev.consequences.iter().enumerate() {
            let span = src.get(Site::Consequence(ei, ci)).or(ev_span);
            if let Err(e) = c.condition.check(model) {
                references_ok = false;
                report.push_event(ViolationKind::Reference, e.to_string(), &ev.name, Some(ci), span);
            }
            if !(c.probability >= T::zero() && c.probability <= T::one()) {
                report.push_event(
                    ViolationKind::Probability,
                    format!("probability {} outside [0, 1]", c.probability),
                    &ev.name,
                    Some(ci),
                    span,
                );
            }
            let mut touched = HashSet::new();
            for &(attr, value) in &c.changes {
                match model.attributes.get(attr.index()) {
                    Some(def) if value < def.values.len() => {
                        if !touched.insert(attr) {
                            report.push_event(
                                ViolationKind::DuplicateChange,
                                format!("change set assigns `{}` more than once", def.name),
                                &ev.name,
                                Some(ci),
                                span,
                            );
                        }
                    }
                    _ => report.push_event(
                        ViolationKind::Reference,
                        "change set references an unknown attribute or value".into(),
                        &ev.name,
                        Some(ci),
                        span,
                    ),
                }
            }
        }
        let groups = ev.groups();
        for g in &groups {
            let sum = g
                .members
                .iter()
                .fold(T::zero(), |a, &i| a + ev.consequences[i].probability);
            if (sum - T::one()).abs() > T::sum_tolerance() {
                let first = g.members[0];
                report.push_event(
                    ViolationKind::GroupSum,
                    format!(
                        "probabilities of group `{}` sum to {sum}, not 1",
                        crate::dsl::condition_text(model, g.condition)
                    ),
                    &ev.name,
                    Some(first),
                    src.get(Site::Consequence(ei, first)).or(ev_span),
                );
            }
        }
        if references_ok {
            check_partition(model, ei, &groups, &mut report);
        }
    }

    let mut covered = HashSet::new();
    for (pi, p) in model.priors.iter().enumerate() {
        let span = src.get(Site::Prior(pi));
        let Some(def) = model.attributes.get(p.attr.index()) else {
            report.push(ViolationKind::Reference, "prior for unknown attribute".into(), span);
            continue;
        };
        if !covered.insert(p.attr) {
            report.push(ViolationKind::DuplicateName, format!("prior for `{}` declared twice", def.name), span);
        }
        if let Err(msg) = check_distribution(&p.probs, def.values.len()) {
            report.push(ViolationKind::Prior, format!("prior for `{}`: {msg}", def.name), span);
        }
    }

    for (ri, rule) in model.rules.iter().enumerate() {
        let span = src.get(Site::Rule(ri));
        for msg in rule.problems(model) {
            report.push(ViolationKind::Rule, msg, span);
        }
        if rule.aggregated {
            for (rj, other) in model.rules.iter().enumerate().skip(ri + 1) {
                if other.aggregated
                    && other.target == rule.target
                    && other.sources.iter().any(|s| rule.sources.contains(s))
                {
                    report.push(
                        ViolationKind::Rule,
                        format!(
                            "aggregated influences #{} and #{} on `{}` share a source",
                            ri + 1,
                            rj + 1,
                            model.attributes[rule.target.index()].name
                        ),
                        model.source.get(Site::Rule(rj)).or(span),
                    );
                }
            }
        }
    }
    report
}

/// Enumerates assignments of the attributes referenced by an event's
/// conditions and reports assignments matched by zero or several groups.
fn check_partition<T: Real>(model: &ModelDef<T>, ei: usize, groups: &[ConditionGroup<'_>], report: &mut ValidationReport) {
    let ev = &model.events[ei];
    let ev_span = model.source.get(Site::Event(ei));
    let mut referenced = BTreeSet::new();
    for g in groups {
        g.condition.attributes(&mut referenced);
    }
    let attrs: Vec<AttrId> = referenced.into_iter().collect();
    let sizes: Vec<usize> = attrs.iter().map(|a| model.attr_def(*a).values.len()).collect();
    let total = sizes.iter().try_fold(1usize, |acc, &s| acc.checked_mul(s));
    match total {
        Some(t) if t <= MAX_CONDITION_ASSIGNMENTS => {}
        _ => {
            report.push_event(
                ViolationKind::Gap,
                "conditions reference too many attribute combinations to check".into(),
                &ev.name,
                None,
                ev_span,
            );
            return;
        }
    }
    let mut values = vec![0usize; model.attributes.len()];
    let mut digits = vec![0usize; attrs.len()];
    let mut reported_gap = false;
    let mut reported_overlap = HashSet::new();
    loop {
        for (a, d) in attrs.iter().zip(&digits) {
            values[a.index()] = *d;
        }
        let hits: Vec<usize> = groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.condition.holds(&values))
            .map(|(i, _)| i)
            .collect();
        let describe = || {
            attrs
                .iter()
                .zip(&digits)
                .map(|(a, d)| format!("{}={}", model.attr_def(*a).name, model.attr_def(*a).values[*d]))
                .collect::<Vec<_>>()
                .join(", ")
        };
        if hits.is_empty() && !reported_gap {
            reported_gap = true;
            report.push_event(
                ViolationKind::Gap,
                format!("no condition holds when {}", describe()),
                &ev.name,
                None,
                ev_span,
            );
        } else if hits.len() > 1 && reported_overlap.insert(hits.clone()) {
            let first = groups[hits[1]].members[0];
            report.push_event(
                ViolationKind::Overlap,
                format!("{} conditions hold at once when {}", hits.len(), describe()),
                &ev.name,
                Some(first),
                model.source.get(Site::Consequence(ei, first)).or(ev_span),
            );
        }
        // odometer increment
        let mut k = 0;
        loop {
            if k == digits.len() {
                return;
            }
            digits[k] += 1;
            if digits[k] < sizes[k] {
                break;
            }
            digits[k] = 0;
            k += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state(model: &ModelDef<f64>, pairs: &[(&str, &str)]) -> SystemState<f64> {
        let mut s = SystemState::steady(bench::default_values(model), 0.0);
        for (a, v) in pairs {
            let (id, val) = model.resolve(a, v).unwrap();
            s.values[id.index()] = val;
        }
        s
    }

    #[test]
    fn bench_model_is_valid() {
        let model = bench::model::<f64>();
        let report = validate_model(&model);
        assert!(report.is_valid(), "{:?}", report.violations);
    }

    #[test]
    fn group_sum_violation_names_group() {
        let mut model = bench::model::<f64>();
        let ev = model.event("collision").unwrap();
        // first mild consequence 0.008 -> 0.008 - 0.1 makes the mild group sum to 0.9
        model.events[ev].consequences[3].probability = 0.692;
        let report = validate_model(&model);
        assert_eq!(report.violations.len(), 1, "{:?}", report.violations);
        let v = &report.violations[0];
        assert_eq!(v.kind, ViolationKind::GroupSum);
        assert!(v.message.contains("CS=mild"), "{}", v.message);
        assert_eq!(v.event.as_deref(), Some("collision"));
    }

    #[test]
    fn overlapping_conditions_are_reported() {
        let mut model = bench::model::<f64>();
        let (hi, t) = model.resolve("HI", "true").unwrap();
        model.events.push(EventDef {
            name: "bad".into(),
            consequences: vec![
                Consequence {
                    condition: Condition::is(hi, t),
                    probability: 1.0,
                    changes: vec![],
                    observation: None,
                },
                Consequence {
                    condition: Condition::True,
                    probability: 1.0,
                    changes: vec![],
                    observation: None,
                },
            ],
        });
        let report = validate_model(&model);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].kind, ViolationKind::Overlap);
    }

    #[test]
    fn gap_is_reported() {
        let mut model = bench::model::<f64>();
        let (hi, t) = model.resolve("HI", "true").unwrap();
        model.events.push(EventDef {
            name: "partial".into(),
            consequences: vec![Consequence {
                condition: Condition::is(hi, t),
                probability: 1.0,
                changes: vec![],
                observation: None,
            }],
        });
        let report = validate_model(&model);
        assert_eq!(report.violations[0].kind, ViolationKind::Gap);
    }

    #[test]
    fn each_state_has_exactly_one_true_group() {
        let model = bench::model::<f64>();
        let sizes: Vec<usize> = model.attributes.iter().map(|a| a.values.len()).collect();
        let total: usize = sizes.iter().product();
        for code in 0..total {
            let mut c = code;
            let values: Vec<usize> = sizes
                .iter()
                .map(|s| {
                    let v = c % s;
                    c /= s;
                    v
                })
                .collect();
            for ev in &model.events {
                let n = ev.groups().iter().filter(|g| g.condition.holds(&values)).count();
                assert_eq!(n, 1, "event {} at {values:?}", ev.name);
            }
        }
    }

    #[test]
    fn conditions_follow_boolean_semantics() {
        let model = bench::model::<f64>();
        let (cs, moderate) = model.resolve("CS", "moderate").unwrap();
        let expr = Condition::is(cs, moderate);
        assert!(eval_condition(&model, &expr, &state(&model, &[("CS", "moderate")])).unwrap());
        assert!(!eval_condition(&model, &expr, &state(&model, &[("CS", "mild")])).unwrap());

        let (hi, t) = model.resolve("HI", "true").unwrap();
        let (ib, gross) = model.resolve("IB", "gross").unwrap();
        let expr = Condition::is(hi, t).not().and(Condition::is(ib, gross));
        let s = state(&model, &[("HI", "false"), ("IB", "gross")]);
        assert!(eval_condition(&model, &expr, &s).unwrap());
    }

    #[test]
    fn conditions_ignore_directions() {
        let model = bench::model::<f64>();
        let (vs, normal) = model.resolve("VS", "normal").unwrap();
        let expr = Condition::is(vs, normal);
        let mut s = state(&model, &[]);
        s.directions[vs.index()] = Direction::Down;
        s.pending[vs.index()] = Some(2.0);
        assert!(eval_condition(&model, &expr, &s).unwrap());
    }

    #[test]
    fn unknown_reference_is_a_mismatch() {
        let model = bench::model::<f64>();
        let s = state(&model, &[]);
        let bad = Condition::is(AttrId(42), 0);
        assert!(matches!(
            eval_condition(&model, &bad, &s),
            Err(Error::ModelMismatch { .. })
        ));
        let bad = Condition::is(AttrId(0), 9);
        assert!(eval_condition(&model, &bad, &s).is_err());
    }

    #[test]
    fn change_sets_touch_only_listed_attributes() {
        let model = bench::model::<f64>();
        let s = state(&model, &[]);
        let hi = model.resolve("HI", "true").unwrap();
        let ib = model.resolve("IB", "none").unwrap();
        let next = apply_change_set(&s, &[hi, ib]);
        assert_eq!(next.value(hi.0), hi.1);
        assert_eq!(next.value(ib.0), ib.1);
        for a in ["CS", "PD", "VS"] {
            let id = model.attr(a).unwrap();
            assert_eq!(next.value(id), s.value(id));
        }
        assert_eq!(apply_change_set(&s, &[]), s);
        // idempotent
        assert_eq!(apply_change_set(&next, &[hi, ib]), next);
    }

    #[test]
    fn change_set_leaves_pending_transition() {
        let model = bench::model::<f64>();
        let vs = model.attr("VS").unwrap();
        let mut s = state(&model, &[]);
        s.directions[vs.index()] = Direction::Down;
        s.pending[vs.index()] = Some(3.0);
        let flat = model.resolve("VS", "flat").unwrap();
        let next = apply_change_set(&s, &[flat]);
        assert_eq!(next.value(vs), 0);
        assert_eq!(next.pending[vs.index()], Some(3.0));
        assert_eq!(next.directions[vs.index()], Direction::Down);
    }

    #[test]
    fn initial_state_is_steady_and_deterministic() {
        let model = bench::model::<f64>();
        let priors = model.effective_priors(&[]).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let a = initial_state(&model, &priors, 0.0, &mut r1).unwrap();
        let b = initial_state(&model, &priors, 0.0, &mut r2).unwrap();
        assert_eq!(a, b);
        assert!(a.directions.iter().all(|d| *d == Direction::Steady));
        assert!(a.pending.iter().all(Option::is_none));
        for (attr, val) in [("HI", "false"), ("IB", "none"), ("VS", "normal"), ("PD", "false")] {
            let (id, v) = model.resolve(attr, val).unwrap();
            assert_eq!(a.value(id), v);
        }
    }

    #[test]
    fn initial_state_matches_prior_frequencies() {
        let model = bench::model::<f64>();
        let priors = model.effective_priors(&[]).unwrap();
        let cs = model.attr("CS").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let s = initial_state(&model, &priors, 0.0, &mut rng).unwrap();
            counts[s.value(cs)] += 1;
        }
        for (k, p) in [0.35, 0.5, 0.15].into_iter().enumerate() {
            let freq = counts[k] as f64 / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((freq - p).abs() < 3.0 * se, "value {k}: {freq} vs {p}");
        }
    }

    #[test]
    fn malformed_prior_is_rejected() {
        let model = bench::model::<f64>();
        let mut priors = model.effective_priors(&[]).unwrap();
        priors[0] = vec![0.5, 0.4, 0.2];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            initial_state(&model, &priors, 0.0, &mut rng),
            Err(Error::InvalidPrior { .. })
        ));
    }

    #[test]
    fn cumulative_pick_uses_declaration_order() {
        let probs = [0.05, 0.04, 0.01, 0.72, 0.135, 0.045];
        assert_eq!(pick(probs.iter().copied(), 0.04), 0);
        assert_eq!(pick(probs.iter().copied(), 0.05), 1);
        assert_eq!(pick(probs.iter().copied(), 0.999_999_9), 5);
        assert_eq!(pick([0.75, 0.25].into_iter(), 0.8), 1);
    }

    #[test]
    fn symbolic_times_render_with_delta_suffix() {
        assert_eq!(Time::at(10.0).plus_deltas(1).to_string(), "10+d");
        assert_eq!(Time::at(10.0).plus_deltas(2).to_string(), "10+2d");
        assert_eq!(Time::at(0.0).plus_deltas(1).to_string(), "d");
        assert_eq!(Time::at(2.5).to_string(), "2.5");
    }
}
