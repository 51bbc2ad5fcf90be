use std::fmt::Write as _;

use clap::ValueEnum;
use serde_json::{json, Value};
use tempo_core::influence::individual_influences;
use tempo_core::{
    aggregate, AttrId, Model, NetInfluence, PosteriorReport, Proposal, RecordPlan, Scenario, Trial,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Tsv,
    Json,
}

impl Format {
    pub fn as_str(self) -> &'static str {
        match self {
            Format::Tsv => "tsv",
            Format::Json => "json",
        }
    }
}

fn cell_text(cell: &NetInfluence<f64>, rounded: bool) -> String {
    match cell.interval {
        None => "steady".into(),
        Some(iv) if rounded => format!("{} [{:.2}, {:.2}]", cell.direction, iv.lo, iv.hi),
        Some(iv) => format!("{} [{}, {}]", cell.direction, iv.lo, iv.hi),
    }
}

fn table_header(model: &Model, sources: &[AttrId], target: AttrId, out: &mut String) {
    let mut cols: Vec<&str> = sources.iter().map(|s| model.attr_def(*s).name.as_str()).collect();
    cols.extend(model.attr_def(target).values.iter().map(String::as_str));
    out.push_str(&cols.join("\t"));
    out.push('\n');
}

/// Declared joint tables on `target`, then (if asked for, or if none is
/// declared) the table obtained by combining the individual rules.
pub fn aggregate_tables(model: &Model, target: AttrId, from_rules: bool) -> tempo_core::Result<String> {
    let mut out = String::new();
    let tname = &model.attr_def(target).name;
    let declared: Vec<_> = model.rules_on(target).filter(|(_, r)| r.aggregated).collect();
    for (_, rule) in &declared {
        let names: Vec<&str> = rule.sources.iter().map(|s| model.attr_def(*s).name.as_str()).collect();
        let _ = writeln!(out, "# aggregated influence on {tname} by ({})", names.join(", "));
        table_header(model, &rule.sources, target, &mut out);
        for combo in 0..rule.combinations(model) {
            let values = rule.combination_values(model, combo);
            let mut row: Vec<String> = rule
                .sources
                .iter()
                .zip(&values)
                .map(|(s, v)| model.value_name(*s, *v).to_string())
                .collect();
            for tv in 0..model.attr_def(target).values.len() {
                row.push(cell_text(rule.cell(model, combo, tv), false));
            }
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
    }
    if declared.is_empty() || from_rules {
        let mut sources: Vec<AttrId> = model
            .rules_on(target)
            .filter(|(_, r)| !r.aggregated)
            .flat_map(|(_, r)| r.sources.iter().copied())
            .collect();
        sources.sort();
        sources.dedup();
        if !declared.is_empty() {
            out.push('\n');
        }
        if sources.is_empty() {
            let _ = writeln!(out, "# no individual influence rules on {tname}");
            return Ok(out);
        }
        let names: Vec<&str> = sources.iter().map(|s| model.attr_def(*s).name.as_str()).collect();
        let _ = writeln!(out, "# combined from individual rules on {tname} by ({})", names.join(", "));
        table_header(model, &sources, target, &mut out);
        let sizes: Vec<usize> = sources.iter().map(|s| model.attr_def(*s).values.len()).collect();
        let total: usize = sizes.iter().product();
        let mut values = vec![0; model.attributes.len()];
        for combo in 0..total {
            let mut rest = combo;
            let mut row = vec![String::new(); sources.len()];
            for (k, s) in sources.iter().enumerate().rev() {
                values[s.index()] = rest % sizes[k];
                rest /= sizes[k];
                row[k] = model.value_name(*s, values[s.index()]).to_string();
            }
            for tv in 0..model.attr_def(target).values.len() {
                values[target.index()] = tv;
                let net = aggregate(&individual_influences(model, &values, target))?;
                row.push(cell_text(&net, true));
            }
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
    }
    Ok(out)
}

/// Posterior tables: one row per query. Sampled runs carry n, seed and
/// ESS, exact runs their error bound.
pub fn report(report: &PosteriorReport<f64>, format: Format, proposal: Option<Proposal>, timing: bool) -> String {
    let time_ms = report
        .wall_time
        .filter(|_| timing)
        .map(|d| d.as_secs_f64() * 1e3);
    match format {
        Format::Tsv => {
            let mut out = String::new();
            let sampled = report.n.is_some();
            if sampled {
                out.push_str("query\tn\tseed\tess\ttime_ms\tdistribution\n");
            } else {
                out.push_str("query\terror_bound\tdistribution\n");
            }
            for q in &report.queries {
                let dist: Vec<String> = q
                    .values
                    .iter()
                    .zip(&q.probs)
                    .map(|(v, p)| format!("{v}={p:.3}"))
                    .collect();
                let _ = write!(out, "{}@{}\t", q.attribute, q.time);
                if sampled {
                    let _ = write!(
                        out,
                        "{}\t{}\t{}\t{}\t",
                        report.n.unwrap_or(0),
                        report.seed.map_or("NA".into(), |s| s.to_string()),
                        report.ess.map_or("NA".into(), |e| format!("{e:.1}")),
                        time_ms.map_or("NA".into(), |t| format!("{t:.0}")),
                    );
                } else {
                    let _ = write!(out, "{:.1e}\t", report.error_bound.unwrap_or(0.0));
                }
                out.push_str(&dist.join("\t"));
                out.push('\n');
            }
            out
        }
        Format::Json => {
            let queries: Vec<Value> = report
                .queries
                .iter()
                .map(|q| {
                    let mut v = json!({
                        "attribute": q.attribute,
                        "at": q.time,
                        "values": q.values,
                        "probs": q.probs,
                    });
                    if let Some(se) = &q.std_errors {
                        v["std_errors"] = json!(se);
                    }
                    v
                })
                .collect();
            let mut doc = json!({
                "method": if report.n.is_some() { "sampling" } else { "exact" },
                "compatible": report.compatible,
                "queries": queries,
            });
            if let Some(n) = report.n {
                doc["n"] = json!(n);
            }
            if let Some(seed) = report.seed {
                doc["seed"] = json!(seed);
            }
            if let Some(p) = proposal {
                doc["proposal"] = json!(p.as_str());
            }
            if let Some(ess) = report.ess {
                doc["ess"] = json!(ess);
            }
            if let Some(b) = report.error_bound {
                doc["error_bound"] = json!(b);
            }
            if let Some(t) = time_ms {
                doc["time_ms"] = json!(t);
            }
            let mut s = serde_json::to_string_pretty(&doc).unwrap_or_default();
            s.push('\n');
            s
        }
    }
}

fn log_weight_text(lw: f64) -> String {
    if lw == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{lw:.6}")
    }
}

/// Raw trials: recorded values and the consequence realized at each entry
/// (1-based within its event, with the reported label).
pub fn trials(model: &Model, scenario: &Scenario, plan: &RecordPlan<f64>, trials: &[Trial<f64>], format: Format) -> String {
    let slot_names: Vec<String> = plan
        .slots
        .iter()
        .map(|s| format!("{}@{}", model.attr_def(s.attr).name, s.time))
        .collect();
    let entry_names: Vec<String> = scenario
        .timeline
        .iter()
        .map(|e| format!("{}@{}", model.events[e.event].name, e.time))
        .collect();
    let consequence_text = |i: usize, c: usize| -> String {
        let ev = &model.events[scenario.timeline[i].event];
        match &ev.consequences[c].observation {
            Some(label) => format!("{}:{label}", c + 1),
            None => (c + 1).to_string(),
        }
    };
    let mut out = String::new();
    match format {
        Format::Tsv => {
            let mut header = vec!["trial".to_string(), "log_weight".to_string()];
            header.extend(slot_names.iter().cloned());
            header.extend(entry_names.iter().cloned());
            out.push_str(&header.join("\t"));
            out.push('\n');
            for t in trials {
                let mut row = vec![t.index.to_string(), log_weight_text(t.log_weight)];
                row.extend(
                    plan.slots
                        .iter()
                        .zip(&t.values)
                        .map(|(s, v)| model.value_name(s.attr, *v).to_string()),
                );
                row.extend(t.consequences.iter().enumerate().map(|(i, c)| consequence_text(i, *c)));
                out.push_str(&row.join("\t"));
                out.push('\n');
            }
        }
        Format::Json => {
            for t in trials {
                let values: serde_json::Map<String, Value> = slot_names
                    .iter()
                    .zip(plan.slots.iter().zip(&t.values))
                    .map(|(name, (s, v))| (name.clone(), json!(model.value_name(s.attr, *v))))
                    .collect();
                let events: Vec<Value> = t
                    .consequences
                    .iter()
                    .enumerate()
                    .map(|(i, c)| json!({"event": entry_names[i], "consequence": c + 1, "label": model.events[scenario.timeline[i].event].consequences[*c].observation}))
                    .collect();
                let lw = (t.log_weight != f64::NEG_INFINITY).then_some(t.log_weight);
                let line = json!({"trial": t.index, "log_weight": lw, "values": values, "events": events});
                out.push_str(&line.to_string());
                out.push('\n');
            }
        }
    }
    out
}
