//! The query language: lexer, recursive-descent parser, canonical renderer
//! and compiler to a [`QueryPlan`].
//!
//! ```text
//! SELECT Left(Object1, Object2) FROM Camera
//! WHERE Object1.label = 'Car' AND Object1.attrcolor = 'Black'
//!   AND Object2.label = 'Car' AND Object2.attrcolor != 'Black'
//! WITHIN TIMEFRAME_WINDOW(10) WITH_CONFIDENCE > 0.5
//! ```

mod ast;
mod compile;
mod lexer;
mod parser;
mod render;

use std::collections::BTreeMap;

use thiserror::Error;

pub use ast::{
    Comparator, Condition, ConfidenceClause, Field, Literal, Pattern, PatternFunction, Predicate, Query,
    WindowSpec,
};
pub use compile::{ObjectQueryNode, PlanStep, QueryPlan};
pub use lexer::{tokenize, Token, TokenKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VeqlError {
    #[error("{line}:{column}: expected {}, found {found}", .expected.join(" or "))]
    Syntax {
        line: usize,
        column: usize,
        expected: Vec<String>,
        found: String,
    },
    #[error("{0}")]
    Semantic(String),
}

/// A named pattern macro such as `HIGH_TRAFFIC_FLOW(Object)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeDef {
    pub name: String,
    pub arity: usize,
    /// Count predicate applied when the query supplies none:
    /// `(comparator, threshold, per_frame)`.
    pub default_count: (Comparator, f64, bool),
}

#[derive(Debug, Clone, Default)]
pub struct CompositeRegistry {
    defs: BTreeMap<String, CompositeDef>,
}

impl CompositeRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register(CompositeDef {
            name: "HIGH_TRAFFIC_FLOW".into(),
            arity: 1,
            default_count: (Comparator::Gt, 5.0, true),
        });
        r
    }

    pub fn register(&mut self, mut def: CompositeDef) {
        def.name = def.name.to_ascii_uppercase();
        self.defs.insert(def.name.clone(), def);
    }

    /// Case-insensitive lookup.
    pub fn get(&self, name: &str) -> Option<&CompositeDef> {
        self.defs.get(&name.to_ascii_uppercase())
    }
}

/// Parses with the built-in composite registry.
pub fn parse_veql(text: &str) -> Result<Query, VeqlError> {
    parser::parse(text, &CompositeRegistry::builtin())
}

pub fn parse_veql_with(text: &str, registry: &CompositeRegistry) -> Result<Query, VeqlError> {
    parser::parse(text, registry)
}

pub fn render_veql(query: &Query) -> String {
    render::render(query)
}

pub fn compile_query(query_id: &str, query: &Query) -> Result<QueryPlan, VeqlError> {
    compile::compile(query_id, query, &CompositeRegistry::builtin())
}

pub fn compile_query_with(
    query_id: &str,
    query: &Query,
    registry: &CompositeRegistry,
) -> Result<QueryPlan, VeqlError> {
    compile::compile(query_id, query, registry)
}

/// Parse and compile in one go.
pub fn plan_from_text(query_id: &str, text: &str) -> Result<QueryPlan, VeqlError> {
    compile_query(query_id, &parse_veql(text)?)
}
