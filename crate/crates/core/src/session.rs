//! Session files: JSON lines, one header followed by one line per trial.
//!
//! The header embeds the canonical model and scenario text, so a session
//! file is self-contained. Trials store their recorded values, realized
//! consequences, log-weight (`null` for zero weight) and horizon state.
//! Influence regimes are not stored; they are a function of the horizon
//! values and are recomputed on load.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::dsl::{parse_model, parse_scenario, serialize_model, serialize_scenario};
use crate::engine::{Proposal, RecordPlan, Trial};
use crate::error::{Error, Result};
use crate::infer::Session;
use crate::influence::net_influence;
use crate::model::{AttrId, Direction, SystemState, Time};
use crate::real::Real;

pub const SESSION_MAGIC: &str = "tempo-session";
pub const SESSION_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    model: String,
    scenario: String,
    seed: u64,
    segments: u32,
    proposal: Proposal,
    trials: u64,
    slots: Vec<SlotRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SlotRecord {
    attribute: String,
    base: f64,
    deltas: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrialRecord {
    index: u64,
    log_weight: Option<f64>,
    values: Vec<usize>,
    consequences: Vec<usize>,
    horizon: HorizonRecord,
}

#[derive(Debug, Serialize, Deserialize)]
struct HorizonRecord {
    values: Vec<usize>,
    directions: Vec<Direction>,
    pending: Vec<Option<f64>>,
    clock: f64,
}

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::SessionFormat(e.to_string())
}

/// Streams a session to `out`.
pub fn write_session<T: Real, W: Write>(session: &Session<T>, out: &mut W) -> Result<()> {
    let model = &session.model;
    let header = Header {
        format: SESSION_MAGIC.to_string(),
        version: SESSION_VERSION,
        model: serialize_model(model),
        scenario: serialize_scenario(model, &session.scenario),
        seed: session.seed,
        segments: session.segments,
        proposal: session.proposal,
        trials: session.trials.len() as u64,
        slots: session
            .plan
            .slots
            .iter()
            .map(|s| SlotRecord {
                attribute: model.attr_def(s.attr).name.clone(),
                base: s.time.base.as_f64(),
                deltas: s.time.deltas,
            })
            .collect(),
    };
    serde_json::to_writer(&mut *out, &header).map_err(io_err)?;
    out.write_all(b"\n").map_err(io_err)?;
    for t in &session.trials {
        let lw = t.log_weight.as_f64();
        let record = TrialRecord {
            index: t.index,
            log_weight: (lw != f64::NEG_INFINITY).then_some(lw),
            values: t.values.clone(),
            consequences: t.consequences.clone(),
            horizon: HorizonRecord {
                values: t.horizon.values.clone(),
                directions: t.horizon.directions.clone(),
                pending: t.horizon.pending.iter().map(|p| p.map(|p| p.as_f64())).collect(),
                clock: t.horizon.clock.as_f64(),
            },
        };
        serde_json::to_writer(&mut *out, &record).map_err(io_err)?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    Ok(())
}

/// Reads a session written by [`write_session`].
pub fn read_session<T: Real, R: BufRead>(input: R) -> Result<Session<T>> {
    let mut lines = input.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::SessionFormat("empty session file".into()))?
        .map_err(io_err)?;
    let header: Header = serde_json::from_str(&first).map_err(|e| io_err(format!("header: {e}")))?;
    if header.format != SESSION_MAGIC {
        return Err(Error::SessionFormat(format!("not a session file (format `{}`)", header.format)));
    }
    if header.version != SESSION_VERSION {
        return Err(Error::SessionFormat(format!(
            "unsupported session version {} (expected {SESSION_VERSION})",
            header.version
        )));
    }
    let model = parse_model::<T>(&header.model)?;
    let scenario = parse_scenario(&header.scenario, &model)?;
    let mut plan = RecordPlan::default();
    for s in &header.slots {
        let attr = model
            .attr(&s.attribute)
            .ok_or_else(|| Error::SessionFormat(format!("unknown attribute `{}`", s.attribute)))?;
        let time = Time {
            base: T::of(s.base),
            deltas: s.deltas,
        };
        let k = plan.push(&model, &scenario, attr, time)?;
        if k + 1 != plan.slots.len() {
            return Err(Error::SessionFormat("duplicate record slot".into()));
        }
    }

    let n_attr = model.attributes.len();
    let mut trials = Vec::with_capacity(header.trials as usize);
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let r: TrialRecord =
            serde_json::from_str(&line).map_err(|e| io_err(format!("trial line {}: {e}", lineno + 2)))?;
        let h = r.horizon;
        if h.values.len() != n_attr || h.directions.len() != n_attr || h.pending.len() != n_attr {
            return Err(io_err(format!("trial {}: horizon has the wrong arity", r.index)));
        }
        if r.values.len() != plan.slots.len() || r.consequences.len() != scenario.timeline.len() {
            return Err(io_err(format!("trial {}: record has the wrong arity", r.index)));
        }
        for (i, &v) in h.values.iter().enumerate() {
            if v > model.attributes[i].max_index() {
                return Err(io_err(format!("trial {}: value out of range", r.index)));
            }
        }
        let mut horizon = SystemState::steady(h.values, T::of(h.clock));
        horizon.directions = h.directions;
        horizon.pending = h.pending.into_iter().map(|p| p.map(T::of)).collect();
        for a in 0..n_attr {
            horizon.regimes[a] = net_influence(&model, &horizon.values, AttrId(a))?;
        }
        horizon
            .check_invariants(&model)
            .map_err(|e| io_err(format!("trial {}: {e}", r.index)))?;
        trials.push(Trial {
            index: r.index,
            values: r.values,
            consequences: r.consequences,
            log_weight: r.log_weight.map_or(T::neg_infinity(), T::of),
            horizon,
        });
    }
    if trials.len() as u64 != header.trials {
        return Err(Error::SessionFormat(format!(
            "header announces {} trials, file holds {}",
            header.trials,
            trials.len()
        )));
    }
    Ok(Session {
        model,
        scenario,
        plan,
        trials,
        seed: header.seed,
        segments: header.segments,
        proposal: header.proposal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench;
    use crate::dsl::parse_scenario_fragment;
    use crate::infer::{extend, run_inference, InferOptions};

    #[test]
    fn round_trip_preserves_session() {
        let m = bench::model::<f64>();
        let s = bench::scenario(&m);
        let (session, _) = run_inference(&m, &s, InferOptions::new(300, 4)).unwrap();
        let mut buf = Vec::new();
        write_session(&session, &mut buf).unwrap();
        let back: Session<f64> = read_session(buf.as_slice()).unwrap();
        assert_eq!(back, session);
    }

    #[test]
    fn reloaded_session_extends_identically() {
        let m = bench::model::<f64>();
        let s = bench::scenario(&m);
        let (session, _) = run_inference(&m, &s, InferOptions::new(300, 4)).unwrap();
        let mut buf = Vec::new();
        write_session(&session, &mut buf).unwrap();
        let back: Session<f64> = read_session(buf.as_slice()).unwrap();
        let ext = parse_scenario_fragment::<f64>("at 20 do observe-vs observed FLAT\nquery CS at 20\n", &m).unwrap();
        let a = extend(&session, &ext, 1).unwrap();
        let b = extend(&back, &ext, 3).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.queries, b.1.queries);
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(matches!(read_session::<f64, _>(&b""[..]), Err(Error::SessionFormat(_))));
        assert!(matches!(read_session::<f64, _>(&b"{\"format\":1}\n"[..]), Err(Error::SessionFormat(_))));
        let m = bench::model::<f64>();
        let s = bench::scenario(&m);
        let (session, _) = run_inference(&m, &s, InferOptions::new(3, 4)).unwrap();
        let mut buf = Vec::new();
        write_session(&session, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let truncated: String = text.lines().take(2).map(|l| format!("{l}\n")).collect();
        assert!(read_session::<f64, _>(truncated.as_bytes()).is_err());
        let bumped = text.replacen("\"version\":1", "\"version\":99", 1);
        assert!(read_session::<f64, _>(bumped.as_bytes()).is_err());
    }
}
