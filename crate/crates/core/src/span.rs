//! Source locations for parsed documents.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// 1-based line and column of a construct in its source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl Span {
    pub fn new(line: u32, col: u32) -> Self {
        Span { line, col }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// Key of a located construct inside a model or scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Site {
    Attribute(usize),
    Prior(usize),
    Event(usize),
    Consequence(usize, usize),
    Rule(usize),
    RuleRow(usize, usize),
    Timeline(usize),
    Query(usize),
}

/// Where each construct of a parsed document came from.
///
/// Source locations never take part in structural equality: two documents
/// that differ only in layout compare equal.
#[derive(Debug, Clone, Default)]
pub struct SourceMap {
    sites: BTreeMap<Site, Span>,
}

impl SourceMap {
    pub fn insert(&mut self, site: Site, span: Span) {
        self.sites.insert(site, span);
    }

    pub fn get(&self, site: Site) -> Option<Span> {
        self.sites.get(&site).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }
}

impl PartialEq for SourceMap {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}
