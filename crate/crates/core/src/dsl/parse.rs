use std::collections::HashSet;

use super::lexer::{tokenize, Tok, Token};
use crate::error::{Error, Result};
use crate::influence::{InfluenceRule, NetInfluence};
use crate::model::{
    AttrId, AttributeDef, Condition, Consequence, Direction, EventDef, ModelDef, Prior, Query, ScenarioDef, Time,
    TimeInterval, TimelineEntry,
};
use crate::real::Real;
use crate::span::{Site, SourceMap, Span};

pub const FORMAT_VERSION: u32 = 1;

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn new(text: &str) -> Result<Self> {
        Ok(Parser {
            toks: tokenize(text)?,
            pos: 0,
        })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn span(&self) -> Span {
        self.toks[self.pos].span
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Syntax {
            span: self.span(),
            message: message.into(),
        })
    }

    fn unexpected<T>(&self, wanted: &str) -> Result<T> {
        self.error(format!("expected {wanted}, found {}", self.peek().describe()))
    }

    fn expect(&mut self, tok: Tok) -> Result<Span> {
        if *self.peek() == tok {
            Ok(self.bump().span)
        } else {
            let wanted = tok.describe();
            self.unexpected(&wanted)
        }
    }

    fn eat(&mut self, tok: &Tok) -> bool {
        if self.peek() == tok {
            self.bump();
            true
        } else {
            false
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn keyword(&mut self, kw: &str) -> Result<Span> {
        if self.is_keyword(kw) {
            Ok(self.bump().span)
        } else {
            self.unexpected(&format!("`{kw}`"))
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, Span)> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                let span = self.bump().span;
                Ok((s, span))
            }
            _ => self.unexpected(what),
        }
    }

    fn number(&mut self, what: &str) -> Result<(f64, Span)> {
        match *self.peek() {
            Tok::Number(n) => {
                let span = self.bump().span;
                Ok((n, span))
            }
            _ => self.unexpected(what),
        }
    }

    fn header(&mut self) -> Result<()> {
        if self.is_keyword("format") {
            self.bump();
            let (v, span) = self.number("format version")?;
            if v != f64::from(FORMAT_VERSION) {
                return Err(Error::Syntax {
                    span,
                    message: format!("unsupported format version {v}"),
                });
            }
        }
        Ok(())
    }
}

fn lookup_attr<T>(model: &ModelDef<T>, name: &str, span: Span) -> Result<AttrId> {
    model
        .attributes
        .iter()
        .position(|a| a.name == name)
        .map(AttrId)
        .ok_or_else(|| Error::ModelMismatch {
            span: Some(span),
            message: format!("undeclared attribute `{name}`"),
        })
}

fn lookup_value<T>(model: &ModelDef<T>, attr: AttrId, value: &str, span: Span) -> Result<usize> {
    let def = &model.attributes[attr.index()];
    def.value_index(value).ok_or_else(|| Error::ModelMismatch {
        span: Some(span),
        message: format!("attribute `{}` has no value `{value}`", def.name),
    })
}

fn prior_block<T: Real>(p: &mut Parser, model: &ModelDef<T>) -> Result<Prior<T>> {
    let (name, span) = p.ident("attribute name")?;
    let attr = lookup_attr(model, &name, span)?;
    let n = model.attributes[attr.index()].values.len();
    let mut probs = vec![T::zero(); n];
    let mut seen = HashSet::new();
    p.expect(Tok::LBrace)?;
    while !p.eat(&Tok::RBrace) {
        let (value, vspan) = p.ident("value name or `}`")?;
        let v = lookup_value(model, attr, &value, vspan)?;
        if !seen.insert(v) {
            return Err(Error::Duplicate {
                span: Some(vspan),
                what: "prior entry",
                name: value,
            });
        }
        p.expect(Tok::Colon)?;
        let (prob, _) = p.number("probability")?;
        probs[v] = T::of(prob);
    }
    Ok(Prior { attr, probs })
}

fn condition<T>(p: &mut Parser, model: &ModelDef<T>) -> Result<Condition> {
    let mut left = conjunction(p, model)?;
    while p.eat(&Tok::Pipe) {
        let right = conjunction(p, model)?;
        left = left.or(right);
    }
    Ok(left)
}

fn conjunction<T>(p: &mut Parser, model: &ModelDef<T>) -> Result<Condition> {
    let mut left = unary(p, model)?;
    while p.eat(&Tok::Amp) {
        let right = unary(p, model)?;
        left = left.and(right);
    }
    Ok(left)
}

fn unary<T>(p: &mut Parser, model: &ModelDef<T>) -> Result<Condition> {
    if p.eat(&Tok::Bang) {
        return Ok(unary(p, model)?.not());
    }
    if p.eat(&Tok::LParen) {
        let inner = condition(p, model)?;
        p.expect(Tok::RParen)?;
        return Ok(inner);
    }
    if p.is_keyword("true") && *p.peek_at(1) != Tok::Eq {
        p.bump();
        return Ok(Condition::True);
    }
    let (name, span) = p.ident("condition")?;
    let attr = lookup_attr(model, &name, span)?;
    p.expect(Tok::Eq)?;
    let (value, vspan) = p.ident("value name")?;
    let v = lookup_value(model, attr, &value, vspan)?;
    Ok(Condition::is(attr, v))
}

fn event_block<T: Real>(p: &mut Parser, model: &mut ModelDef<T>, ei: usize) -> Result<EventDef<T>> {
    let (name, _) = p.ident("event name")?;
    let mut consequences = Vec::new();
    p.expect(Tok::LBrace)?;
    while !p.eat(&Tok::RBrace) {
        let span = p.keyword("when")?;
        let cond = condition(p, model)?;
        p.expect(Tok::Arrow)?;
        let (prob, _) = p.number("probability")?;
        p.expect(Tok::Colon)?;
        p.expect(Tok::LBrace)?;
        let mut changes = Vec::new();
        let mut touched = HashSet::new();
        if !p.eat(&Tok::RBrace) {
            loop {
                let (attr_name, aspan) = p.ident("attribute name")?;
                let attr = lookup_attr(model, &attr_name, aspan)?;
                p.expect(Tok::Eq)?;
                let (value, vspan) = p.ident("value name")?;
                let v = lookup_value(model, attr, &value, vspan)?;
                if !touched.insert(attr) {
                    return Err(Error::Duplicate {
                        span: Some(aspan),
                        what: "change of attribute",
                        name: attr_name,
                    });
                }
                changes.push((attr, v));
                if p.eat(&Tok::RBrace) {
                    break;
                }
                p.expect(Tok::Comma)?;
            }
        }
        let observation = if p.is_keyword("obs") {
            p.bump();
            Some(p.ident("observation label")?.0)
        } else {
            None
        };
        p.expect(Tok::Semi)?;
        model.source.insert(Site::Consequence(ei, consequences.len()), span);
        consequences.push(Consequence {
            condition: cond,
            probability: T::of(prob),
            changes,
            observation,
        });
    }
    Ok(EventDef { name, consequences })
}

fn name_list(p: &mut Parser, what: &str) -> Result<Vec<(String, Span)>> {
    if p.eat(&Tok::LParen) {
        let mut out = vec![p.ident(what)?];
        while p.eat(&Tok::Comma) {
            out.push(p.ident(what)?);
        }
        p.expect(Tok::RParen)?;
        Ok(out)
    } else {
        Ok(vec![p.ident(what)?])
    }
}

fn influence_block<T: Real>(
    p: &mut Parser,
    model: &mut ModelDef<T>,
    ri: usize,
    aggregated: bool,
) -> Result<InfluenceRule<T>> {
    let (target_name, tspan) = p.ident("target attribute")?;
    let target = lookup_attr(model, &target_name, tspan)?;
    p.keyword("by")?;
    let mut sources = Vec::new();
    for (name, span) in name_list(p, "source attribute")? {
        let id = lookup_attr(model, &name, span)?;
        if sources.contains(&id) {
            return Err(Error::Duplicate {
                span: Some(span),
                what: "influence source",
                name,
            });
        }
        sources.push(id);
    }
    let mut rule = InfluenceRule {
        target,
        sources,
        aggregated,
        table: Vec::new(),
    };
    let width = model.attributes[target.index()].values.len();
    let cells = rule.combinations(model) * width;
    let mut table: Vec<Option<NetInfluence<T>>> = vec![None; cells];
    p.expect(Tok::LBrace)?;
    let mut row = 0;
    while !p.eat(&Tok::RBrace) {
        let row_span = p.span();
        let names = name_list(p, "source value")?;
        if names.len() != rule.sources.len() {
            return Err(Error::Syntax {
                span: row_span,
                message: format!(
                    "row lists {} source values, influence has {} sources",
                    names.len(),
                    rule.sources.len()
                ),
            });
        }
        let mut values = vec![0; model.attributes.len()];
        for ((name, span), src) in names.iter().zip(&rule.sources) {
            values[src.index()] = lookup_value(model, *src, name, *span)?;
        }
        let (tv_name, tv_span) = p.ident("target value")?;
        values[target.index()] = lookup_value(model, target, &tv_name, tv_span)?;
        p.expect(Tok::Colon)?;
        let (dir_name, dspan) = p.ident("`steady`, `up` or `down`")?;
        let cell = match dir_name.as_str() {
            "steady" => NetInfluence::steady(),
            "up" | "down" => {
                let dir = if dir_name == "up" { Direction::Up } else { Direction::Down };
                p.expect(Tok::LBracket)?;
                let (lo, lspan) = p.number("interval start")?;
                p.expect(Tok::Comma)?;
                let (hi, _) = p.number("interval end")?;
                p.expect(Tok::RBracket)?;
                let iv = TimeInterval::new(T::of(lo), T::of(hi)).map_err(|e| Error::Syntax {
                    span: lspan,
                    message: e.to_string(),
                })?;
                NetInfluence::moving(dir, iv)
            }
            other => {
                return Err(Error::Syntax {
                    span: dspan,
                    message: format!("expected `steady`, `up` or `down`, found `{other}`"),
                })
            }
        };
        p.expect(Tok::Semi)?;
        let k = rule.combination_index(model, &values) * width + values[target.index()];
        if table[k].is_some() {
            return Err(Error::Duplicate {
                span: Some(row_span),
                what: "influence row",
                name: format!("{} {}", names.iter().map(|n| n.0.as_str()).collect::<Vec<_>>().join(","), tv_name),
            });
        }
        table[k] = Some(cell);
        model.source.insert(Site::RuleRow(ri, row), row_span);
        row += 1;
    }
    if let Some(missing) = table.iter().position(Option::is_none) {
        let combo = rule.combination_values(model, missing / width);
        let src: Vec<&str> = rule
            .sources
            .iter()
            .zip(&combo)
            .map(|(s, v)| model.value_name(*s, *v))
            .collect();
        return Err(Error::Syntax {
            span: tspan,
            message: format!(
                "influence on `{target_name}` has no row for ({}) {}",
                src.join(", "),
                model.value_name(target, missing % width)
            ),
        });
    }
    rule.table = table.into_iter().map(Option::unwrap).collect();
    Ok(rule)
}

/// Parses a `.model` document.
///
/// The result is structurally complete; semantic checks such as
/// probability sums are left to [`crate::model::validate_model`].
pub fn parse_model<T: Real>(text: &str) -> Result<ModelDef<T>> {
    let mut p = Parser::new(text)?;
    p.header()?;
    let mut model = ModelDef::new(Vec::new());
    model.source = SourceMap::default();
    let mut delta_seen = false;
    loop {
        let span = p.span();
        let Tok::Ident(kw) = p.peek().clone() else {
            if *p.peek() == Tok::Eof {
                break;
            }
            return p.unexpected("a declaration");
        };
        match kw.as_str() {
            "delta" => {
                p.bump();
                if delta_seen {
                    return Err(Error::Duplicate {
                        span: Some(span),
                        what: "declaration",
                        name: "delta".into(),
                    });
                }
                delta_seen = true;
                let (d, dspan) = p.number("delta in minutes")?;
                if !(d > 0.0) {
                    return Err(Error::Syntax {
                        span: dspan,
                        message: "delta must be positive".into(),
                    });
                }
                model.delta = T::of(d);
            }
            "attribute" => {
                p.bump();
                let (name, nspan) = p.ident("attribute name")?;
                if model.attr(&name).is_some() {
                    return Err(Error::Duplicate {
                        span: Some(nspan),
                        what: "attribute",
                        name,
                    });
                }
                p.expect(Tok::LBrace)?;
                let mut values: Vec<String> = Vec::new();
                while !p.eat(&Tok::RBrace) {
                    let (v, vspan) = p.ident("value name or `}`")?;
                    if values.contains(&v) {
                        return Err(Error::Duplicate {
                            span: Some(vspan),
                            what: "value",
                            name: v,
                        });
                    }
                    values.push(v);
                }
                if values.len() < 2 {
                    return Err(Error::Syntax {
                        span: nspan,
                        message: format!("attribute `{name}` needs at least 2 values"),
                    });
                }
                model.source.insert(Site::Attribute(model.attributes.len()), span);
                model.attributes.push(AttributeDef { name, values });
            }
            "prior" => {
                p.bump();
                let prior = prior_block(&mut p, &model)?;
                if model.priors.iter().any(|q| q.attr == prior.attr) {
                    return Err(Error::Duplicate {
                        span: Some(span),
                        what: "prior for",
                        name: model.attr_def(prior.attr).name.clone(),
                    });
                }
                model.source.insert(Site::Prior(model.priors.len()), span);
                model.priors.push(prior);
            }
            "event" => {
                p.bump();
                let ei = model.events.len();
                let ev = event_block(&mut p, &mut model, ei)?;
                if model.event(&ev.name).is_some() {
                    return Err(Error::Duplicate {
                        span: Some(span),
                        what: "event",
                        name: ev.name,
                    });
                }
                model.source.insert(Site::Event(ei), span);
                model.events.push(ev);
            }
            "influence" | "aggregated" => {
                p.bump();
                let aggregated = kw == "aggregated";
                if aggregated {
                    p.keyword("influence")?;
                }
                let ri = model.rules.len();
                let rule = influence_block(&mut p, &mut model, ri, aggregated)?;
                model.source.insert(Site::Rule(ri), span);
                model.rules.push(rule);
            }
            "format" => return p.error("`format` must be the first line"),
            _ => return p.unexpected("a declaration"),
        }
    }
    if model.attributes.is_empty() {
        return Err(Error::Syntax {
            span: Span::new(1, 1),
            message: "no attributes declared".into(),
        });
    }
    Ok(model)
}

fn time<T: Real>(p: &mut Parser) -> Result<Time<T>> {
    // `d`, `2d`, `N`, `N+d`, `N+2d`
    let delta_suffix = |p: &mut Parser| -> Result<u32> {
        let k = match *p.peek() {
            Tok::Number(n) => {
                let span = p.bump().span;
                if n.fract() != 0.0 || n < 1.0 || n > f64::from(u32::MAX) {
                    return Err(Error::Syntax {
                        span,
                        message: "delta multiple must be a positive integer".into(),
                    });
                }
                n as u32
            }
            _ => 1,
        };
        p.keyword("d")?;
        Ok(k)
    };
    if p.is_keyword("d") || (matches!(p.peek(), Tok::Number(_)) && matches!(p.peek_at(1), Tok::Ident(s) if s == "d")) {
        let k = delta_suffix(p)?;
        return Ok(Time::at(T::zero()).plus_deltas(k));
    }
    let (base, span) = p.number("time")?;
    if base < 0.0 {
        return Err(Error::Syntax {
            span,
            message: "times must be nonnegative".into(),
        });
    }
    let mut t = Time::at(T::of(base));
    if p.eat(&Tok::Plus) {
        t = t.plus_deltas(delta_suffix(p)?);
    }
    Ok(t)
}

/// Parses a `.scenario` document against its model.
pub fn parse_scenario<T: Real>(text: &str, model: &ModelDef<T>) -> Result<ScenarioDef<T>> {
    let sc = parse_scenario_fragment(text, model)?;
    sc.check(model)?;
    Ok(sc)
}

/// Parses scenario text without the whole-scenario checks, for timelines
/// that continue an earlier scenario.
pub fn parse_scenario_fragment<T: Real>(text: &str, model: &ModelDef<T>) -> Result<ScenarioDef<T>> {
    let mut p = Parser::new(text)?;
    p.header()?;
    let mut sc = ScenarioDef::new(Vec::new(), Vec::new());
    loop {
        let span = p.span();
        let Tok::Ident(kw) = p.peek().clone() else {
            if *p.peek() == Tok::Eof {
                break;
            }
            return p.unexpected("`at`, `query` or `prior`");
        };
        match kw.as_str() {
            "at" => {
                p.bump();
                let tspan = p.span();
                let t = time::<T>(&mut p)?;
                p.keyword("do")?;
                let (ev_name, espan) = p.ident("event name")?;
                let event = model.event(&ev_name).ok_or_else(|| Error::ModelMismatch {
                    span: Some(espan),
                    message: format!("undeclared event `{ev_name}`"),
                })?;
                let observed = if p.is_keyword("observed") {
                    p.bump();
                    let (label, lspan) = p.ident("observation label")?;
                    if !model.events[event].labels().contains(&label.as_str()) {
                        return Err(Error::InvalidScenario {
                            span: Some(lspan),
                            message: format!("event `{ev_name}` never reports `{label}`"),
                        });
                    }
                    Some(label)
                } else {
                    None
                };
                if let Some(prev) = sc.timeline.last() {
                    if t.value(model.delta) <= prev.time.value(model.delta) {
                        return Err(Error::InvalidScenario {
                            span: Some(tspan),
                            message: format!("time {t} does not come after {}", prev.time),
                        });
                    }
                }
                sc.source.insert(Site::Timeline(sc.timeline.len()), span);
                sc.timeline.push(TimelineEntry {
                    time: t,
                    event,
                    observed,
                });
            }
            "query" => {
                p.bump();
                let (name, nspan) = p.ident("attribute name")?;
                let attr = lookup_attr(model, &name, nspan)?;
                p.keyword("at")?;
                let t = time::<T>(&mut p)?;
                sc.source.insert(Site::Query(sc.queries.len()), span);
                sc.queries.push(Query { attr, time: t });
            }
            "prior" => {
                p.bump();
                let prior = prior_block(&mut p, model)?;
                sc.priors.push(prior);
            }
            "format" => return p.error("`format` must be the first line"),
            _ => return p.unexpected("`at`, `query` or `prior`"),
        }
    }
    Ok(sc)
}
