use std::fmt;

use crate::spatial::SpatialRelation;
use crate::temporal::TemporalOperator;

/// `SELECT pattern FROM producer WHERE condition WITHIN window WITH_CONFIDENCE cmp value`
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub pattern: Pattern,
    pub producer: String,
    pub condition: Condition,
    pub window: WindowSpec,
    pub confidence: ConfidenceClause,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Pattern {
    /// Bare object variable, e.g. `SELECT Object`.
    Object(String),
    /// `Name(Var1, Var2, ...)`; `name` keeps the spelling used in the text.
    Call {
        name: String,
        function: PatternFunction,
        args: Vec<String>,
    },
}

impl Pattern {
    pub fn variables(&self) -> Vec<&str> {
        match self {
            Pattern::Object(v) => vec![v.as_str()],
            Pattern::Call { args, .. } => args.iter().map(String::as_str).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PatternFunction {
    Spatial(SpatialRelation),
    Temporal(TemporalOperator),
    /// Named composite from the registry, stored in canonical upper case.
    Composite(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Condition {
    Predicate(Predicate),
    And(Vec<Condition>),
    Or(Vec<Condition>),
}

impl Condition {
    /// Object variables referenced anywhere in the tree, in first-seen order.
    pub fn variables(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_variables(&mut out);
        out
    }

    fn collect_variables<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Condition::Predicate(p) => {
                let v = p.variable();
                if !out.contains(&v) {
                    out.push(v);
                }
            }
            Condition::And(cs) | Condition::Or(cs) => {
                for c in cs {
                    c.collect_variables(out);
                }
            }
        }
    }

    pub fn contains_count(&self) -> bool {
        match self {
            Condition::Predicate(p) => matches!(p, Predicate::Count { .. }),
            Condition::And(cs) | Condition::Or(cs) => cs.iter().any(Condition::contains_count),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    Field {
        var: String,
        field: Field,
        cmp: Comparator,
        value: Literal,
    },
    Count {
        var: String,
        cmp: Comparator,
        value: f64,
        per_frame: bool,
    },
}

impl Predicate {
    pub fn variable(&self) -> &str {
        match self {
            Predicate::Field { var, .. } | Predicate::Count { var, .. } => var,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Label,
    /// `attr<name>`; the name is matched against attribute keys lowercased.
    Attr(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparator {
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
}

impl Comparator {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Eq => "=",
            Comparator::Ne => "!=",
            Comparator::Lt => "<",
            Comparator::Gt => ">",
            Comparator::Le => "<=",
            Comparator::Ge => ">=",
        }
    }

    pub fn holds<T: PartialOrd + ?Sized>(self, lhs: &T, rhs: &T) -> bool {
        match self {
            Comparator::Eq => lhs == rhs,
            Comparator::Ne => lhs != rhs,
            Comparator::Lt => lhs < rhs,
            Comparator::Gt => lhs > rhs,
            Comparator::Le => lhs <= rhs,
            Comparator::Ge => lhs >= rhs,
        }
    }
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Str(String),
    Num(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpec {
    pub length_s: f64,
    /// `None` means tumbling.
    pub slide_s: Option<f64>,
}

impl WindowSpec {
    pub fn length_ms(&self) -> u64 {
        (self.length_s * 1000.0).round() as u64
    }

    pub fn slide_ms(&self) -> u64 {
        self.slide_s
            .map(|s| (s * 1000.0).round() as u64)
            .unwrap_or_else(|| self.length_ms())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceClause {
    /// `>` or `>=`.
    pub cmp: Comparator,
    pub value: f64,
}

impl ConfidenceClause {
    pub fn accepts(&self, score: f64) -> bool {
        self.cmp.holds(&score, &self.value)
    }
}

impl Default for ConfidenceClause {
    fn default() -> Self {
        ConfidenceClause {
            cmp: Comparator::Gt,
            value: 0.5,
        }
    }
}
