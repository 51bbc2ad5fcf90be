use std::fmt::Write as _;

use crate::model::{Condition, ModelDef, Prior, ScenarioDef};
use crate::real::Real;

use super::parse::FORMAT_VERSION;

/// Renders a condition with the minimal parentheses the grammar needs.
pub fn condition_text<T>(model: &ModelDef<T>, cond: &Condition) -> String {
    let mut out = String::new();
    write_condition(model, cond, 0, &mut out);
    out
}

// precedence: 1 = or, 2 = and, 3 = unary/atom
fn write_condition<T>(model: &ModelDef<T>, cond: &Condition, min_prec: u8, out: &mut String) {
    let prec = match cond {
        Condition::Or(..) => 1,
        Condition::And(..) => 2,
        _ => 3,
    };
    let wrap = prec < min_prec;
    if wrap {
        out.push('(');
    }
    match cond {
        Condition::True => out.push_str("true"),
        Condition::Is { attr, value } => {
            let def = &model.attributes[attr.index()];
            let _ = write!(out, "{}={}", def.name, def.values[*value]);
        }
        Condition::Not(c) => {
            out.push('!');
            write_condition(model, c, 3, out);
        }
        Condition::And(a, b) => {
            write_condition(model, a, 2, out);
            out.push_str(" & ");
            write_condition(model, b, 3, out);
        }
        Condition::Or(a, b) => {
            write_condition(model, a, 1, out);
            out.push_str(" | ");
            write_condition(model, b, 2, out);
        }
    }
    if wrap {
        out.push(')');
    }
}

fn write_prior<T: Real>(model: &ModelDef<T>, prior: &Prior<T>, out: &mut String) {
    let def = &model.attributes[prior.attr.index()];
    let _ = write!(out, "prior {} {{", def.name);
    for (v, p) in def.values.iter().zip(&prior.probs) {
        let _ = write!(out, " {v}: {p}");
    }
    out.push_str(" }\n");
}

fn paren_list(items: &[&str]) -> String {
    if items.len() == 1 {
        items[0].to_string()
    } else {
        format!("({})", items.join(", "))
    }
}

/// Canonical text of a model. Declaration order is preserved everywhere;
/// influence rows are emitted in table order.
pub fn serialize_model<T: Real>(model: &ModelDef<T>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "format {FORMAT_VERSION}");
    let _ = writeln!(out, "delta {}", model.delta);

    if !model.attributes.is_empty() {
        out.push('\n');
    }
    for a in &model.attributes {
        let _ = writeln!(out, "attribute {} {{ {} }}", a.name, a.values.join(" "));
    }

    if !model.priors.is_empty() {
        out.push('\n');
    }
    for p in &model.priors {
        write_prior(model, p, &mut out);
    }

    for ev in &model.events {
        let _ = writeln!(out, "\nevent {} {{", ev.name);
        for c in &ev.consequences {
            let changes: Vec<String> = c
                .changes
                .iter()
                .map(|(a, v)| format!("{}={}", model.attributes[a.index()].name, model.value_name(*a, *v)))
                .collect();
            let _ = write!(
                out,
                "  when {} -> {}: {{{}}}",
                condition_text(model, &c.condition),
                c.probability,
                changes.join(", ")
            );
            if let Some(label) = &c.observation {
                let _ = write!(out, " obs {label}");
            }
            out.push_str(";\n");
        }
        out.push_str("}\n");
    }

    for rule in &model.rules {
        let target = &model.attributes[rule.target.index()];
        let sources: Vec<&str> = rule
            .sources
            .iter()
            .map(|s| model.attributes[s.index()].name.as_str())
            .collect();
        let _ = writeln!(
            out,
            "\n{}influence {} by {} {{",
            if rule.aggregated { "aggregated " } else { "" },
            target.name,
            paren_list(&sources)
        );
        for combo in 0..rule.combinations(model) {
            let values = rule.combination_values(model, combo);
            let names: Vec<&str> = rule
                .sources
                .iter()
                .zip(&values)
                .map(|(s, v)| model.value_name(*s, *v))
                .collect();
            let row_head = paren_list(&names);
            for (tv, tv_name) in target.values.iter().enumerate() {
                let cell = rule.cell(model, combo, tv);
                let _ = match cell.interval {
                    None => writeln!(out, "  {row_head} {tv_name}: steady;"),
                    Some(iv) => writeln!(out, "  {row_head} {tv_name}: {} [{}, {}];", cell.direction, iv.lo, iv.hi),
                };
            }
        }
        out.push_str("}\n");
    }
    out
}

/// Canonical text of a scenario; delta offsets stay symbolic.
pub fn serialize_scenario<T: Real>(model: &ModelDef<T>, scenario: &ScenarioDef<T>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "format {FORMAT_VERSION}");
    for p in &scenario.priors {
        write_prior(model, p, &mut out);
    }
    for e in &scenario.timeline {
        let _ = write!(out, "at {} do {}", e.time, model.events[e.event].name);
        if let Some(label) = &e.observed {
            let _ = write!(out, " observed {label}");
        }
        out.push('\n');
    }
    for q in &scenario.queries {
        let _ = writeln!(out, "query {} at {}", model.attributes[q.attr.index()].name, q.time);
    }
    out
}
