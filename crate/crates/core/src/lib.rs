//! Probabilistic temporal reasoning over systems that change through
//! exogenous events and endogenous, influence-driven processes.
//!
//! Models declare ordinal attributes, events with conditional consequences
//! and observation labels, and influence tables giving a direction and a
//! uniform transition-time interval. Trials are simulated forward through a
//! scenario timeline; posteriors come from sequential importance sampling,
//! and for feed-forward models from exact enumeration.
//!
//! ```
//! use tempo_core::{bench, exact_posterior};
//!
//! let model = bench::model::<f64>();
//! let scenario = bench::scenario(&model);
//! let report = exact_posterior(&model, &scenario).unwrap();
//! let cs = &report.query("CS").unwrap().probs;
//! assert!((cs[2] - 0.368).abs() < 0.002);
//! ```

pub mod bench;
pub mod dsl;
pub mod engine;
pub mod error;
pub mod infer;
pub mod influence;
pub mod model;
pub mod oracle;
pub mod real;
pub mod session;
pub mod span;

pub use engine::{
    advance_endogenous, apply_event, recompute_influences, run_trial, run_trials, Draw, EventOutcome, Proposal,
    RecordPlan, RecordSlot, Trial,
};
pub use error::{Error, Result};
pub use infer::{
    ess, extend, observation_likelihood, run_inference, weight_relevant_set, InferOptions, PosteriorReport,
    QueryPosterior, Session, WeightSet,
};
pub use influence::{
    aggregate, combine_concordant, combine_contrary, combine_intervals, net_influence, Combination, InfluenceRule,
    NetInfluence,
};
pub use model::{
    apply_change_set, eval_condition, initial_state, validate_model, AttrId, AttributeDef, Condition, Consequence,
    Direction, EventDef, ModelDef, Prior, Query, ScenarioDef, SystemState, Time, TimeInterval, TimelineEntry,
    ValidationReport, Violation, ViolationKind,
};
pub use oracle::{check_feedforward, exact_posterior, uniform_sum_crossing, FeedForwardCertificate};
pub use real::Real;
pub use session::{read_session, write_session};
pub use span::{Site, SourceMap, Span};

pub type Model = ModelDef<f64>;
pub type Scenario = ScenarioDef<f64>;
pub type State = SystemState<f64>;
pub type Interval = TimeInterval<f64>;
pub type Report = PosteriorReport<f64>;

pub type Model32 = ModelDef<f32>;
pub type Scenario32 = ScenarioDef<f32>;
pub type State32 = SystemState<f32>;
pub type Interval32 = TimeInterval<f32>;
pub type Report32 = PosteriorReport<f32>;
