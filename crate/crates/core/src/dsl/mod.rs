//! Text format for models (`.model`) and scenarios (`.scenario`).
//!
//! ```text
//! format 1
//! delta 0.001
//! attribute HI { false true }
//! prior HI { false: 1 true: 0 }
//! event hit {
//!   when HI=false -> 0.2: {HI=true};
//!   when HI=false -> 0.8: {};
//!   when HI=true -> 1: {} obs HURT;
//! }
//! influence PD by HI {
//!   true false: up [3, 7];
//!   ...
//! }
//! aggregated influence VS by (HI, IB) { (true, gross) normal: down [1, 2.5]; ... }
//! ```
//!
//! Scenarios list `at TIME do EVENT [observed LABEL]` entries and
//! `query ATTR at TIME` lines, where a time is `N`, `N+d`, `N+2d`, `d`, ...
//! Conditions use `A=v`, `!`, `&`, `|`, parentheses and `true`. `#` starts
//! a comment.

mod lexer;
mod parse;
mod write;

pub use parse::{parse_model, parse_scenario, parse_scenario_fragment, FORMAT_VERSION};
pub use write::{condition_text, serialize_model, serialize_scenario};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench;
    use crate::error::Error;
    use crate::model::{validate_model, ModelDef, ScenarioDef};
    use crate::span::Span;

    fn model() -> ModelDef<f64> {
        parse_model(bench::MODEL_TEXT).unwrap()
    }

    #[test]
    fn bench_model_shape() {
        let m = model();
        assert_eq!(m.attributes.len(), 5);
        assert_eq!(m.events.len(), 3);
        let vs = m.attr("VS").unwrap();
        let pd = m.attr("PD").unwrap();
        assert_eq!(m.rules.iter().filter(|r| r.target == vs && !r.aggregated).count(), 2);
        assert_eq!(m.rules.iter().filter(|r| r.target == pd).count(), 1);
        assert_eq!(m.rules.iter().filter(|r| r.aggregated).count(), 1);
        assert_eq!(m.events[0].consequences.len(), 18);
        assert!(validate_model(&m).is_valid());
    }

    #[test]
    fn empty_file_has_no_attributes() {
        let err = parse_model::<f64>("").unwrap_err();
        assert!(err.to_string().contains("no attributes declared"), "{err}");
        assert!(err.span().is_some());
        assert!(parse_model::<f64>("# only a comment\nformat 1\n").is_err());
    }

    #[test]
    fn undeclared_value_in_influence_table() {
        let text = bench::MODEL_TEXT.replace("true unstable: down [10, 600];", "true flatline: down [10, 600];");
        let err = parse_model::<f64>(&text).unwrap_err();
        match &err {
            Error::ModelMismatch { span: Some(_), message } => assert!(message.contains("flatline")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let err = parse_model::<f64>("attribute A { x y }\nattribute A { p q }").unwrap_err();
        assert!(matches!(err, Error::Duplicate { span: Some(Span { line: 2, .. }), .. }), "{err:?}");
        let err = parse_model::<f64>("attribute A { x x }").unwrap_err();
        assert!(matches!(err, Error::Duplicate { .. }));
    }

    #[test]
    fn syntax_errors_are_located() {
        let err = parse_model::<f64>("attribute A { x y }\nevent e {\n  when A=x 1: {};\n}").unwrap_err();
        assert_eq!(err.span(), Some(Span::new(3, 12)), "{err}");
    }

    #[test]
    fn missing_table_row_is_reported() {
        let text = bench::MODEL_TEXT.replace("  true true: steady;\n}", "}");
        let err = parse_model::<f64>(&text).unwrap_err();
        assert!(err.to_string().contains("no row for (true) true"), "{err}");
    }

    #[test]
    fn bench_scenario_shape() {
        let m = model();
        let sc: ScenarioDef<f64> = parse_scenario(bench::SCENARIO_TEXT, &m).unwrap();
        assert_eq!(sc.timeline.len(), 3);
        assert_eq!(sc.timeline.iter().filter(|e| e.observed.is_some()).count(), 2);
        assert_eq!(sc.queries.len(), 2);
        assert_eq!(sc.timeline[2].time.deltas, 1);
        assert_eq!(sc.timeline[2].time.base, 10.0);
        assert_eq!(sc.queries[0].time.to_string(), "d");
        assert_eq!(sc.queries[1].time.to_string(), "10+2d");
    }

    #[test]
    fn decreasing_timeline_is_rejected() {
        let m = model();
        let text = "at 10 do collision\nat 5 do observe-vs observed NORMAL\n";
        let err = parse_scenario::<f64>(text, &m).unwrap_err();
        assert!(matches!(err, Error::InvalidScenario { span: Some(Span { line: 2, .. }), .. }), "{err:?}");
    }

    #[test]
    fn unknown_label_is_rejected() {
        let m = model();
        let err = parse_scenario::<f64>("at 0 do observe-vs observed DILATED\n", &m).unwrap_err();
        assert!(err.to_string().contains("never reports"), "{err}");
    }

    #[test]
    fn query_time_must_be_on_timeline() {
        let m = model();
        let err = parse_scenario::<f64>("at 0 do collision\nquery CS at 5\n", &m).unwrap_err();
        assert!(err.span().is_some());
    }

    #[test]
    fn serialization_is_a_fixpoint() {
        let m = model();
        let once = serialize_model(&m);
        let again = serialize_model(&parse_model::<f64>(&once).unwrap());
        assert_eq!(once, again);
        assert_eq!(parse_model::<f64>(&once).unwrap(), m);

        let sc = parse_scenario(bench::SCENARIO_TEXT, &m).unwrap();
        let text = serialize_scenario(&m, &sc);
        assert!(text.contains("at 10+d do observe-pd observed OK"), "{text}");
        assert!(text.contains("query IB at 10+2d"));
        assert_eq!(parse_scenario(&text, &m).unwrap(), sc);
    }

    #[test]
    fn conditions_round_trip_with_precedence() {
        let text = "attribute A { x y }\nattribute B { p q }\nevent e {\n  when !(A=x | B=p) & true -> 0.5: {};\n  when !(A=x | B=p) & true -> 0.5: {A=y};\n  when A=x | B=p -> 1: {} obs L;\n}\n";
        let m = parse_model::<f64>(text).unwrap();
        assert!(validate_model(&m).is_valid(), "{:?}", validate_model(&m));
        let out = serialize_model(&m);
        assert!(out.contains("when !(A=x | B=p) & true -> 0.5"), "{out}");
        assert_eq!(parse_model::<f64>(&out).unwrap(), m);
    }

    #[test]
    fn programmatic_model_reparses_equal() {
        let m = bench::model::<f64>();
        let text = serialize_model(&m);
        assert_eq!(parse_model::<f64>(&text).unwrap(), m);
    }

    #[test]
    fn single_precision_round_trip() {
        let m = parse_model::<f32>(bench::MODEL_TEXT).unwrap();
        let text = serialize_model(&m);
        assert_eq!(parse_model::<f32>(&text).unwrap(), m);
        assert!(text.contains("0.0015"));
    }
}
