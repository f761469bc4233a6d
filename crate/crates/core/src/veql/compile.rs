use std::fmt;
use std::sync::Arc;

use super::ast::*;
use super::render::render_condition;
use super::{CompositeRegistry, VeqlError};
use crate::spatial::{SpatialRelation, TopologyRelation};
use crate::temporal::TemporalOperator;
use crate::vekg::ObjectNode;

/// One object node of the query graph: a variable plus the conjunction of
/// predicates folded onto it.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectQueryNode {
    pub variable: String,
    /// `Var:Label` when the label is pinned by equality, else `Var`.
    pub key: Arc<str>,
    pub filter: Vec<Condition>,
}

impl ObjectQueryNode {
    pub fn matches(&self, node: &ObjectNode) -> bool {
        self.filter.iter().all(|c| eval_condition(c, node))
    }

    /// The label pinned by a top-level `label = '...'` conjunct, if any.
    pub fn label_constraint(&self) -> Option<&str> {
        pinned_label(&self.filter)
    }
}

fn pinned_label(filter: &[Condition]) -> Option<&str> {
    filter.iter().find_map(|c| match c {
        Condition::Predicate(Predicate::Field {
            field: Field::Label,
            cmp: Comparator::Eq,
            value: Literal::Str(s),
            ..
        }) => Some(s.as_str()),
        _ => None,
    })
}

fn eval_condition(c: &Condition, node: &ObjectNode) -> bool {
    match c {
        Condition::Predicate(p) => eval_predicate(p, node),
        Condition::And(cs) => cs.iter().all(|c| eval_condition(c, node)),
        Condition::Or(cs) => cs.iter().any(|c| eval_condition(c, node)),
    }
}

fn eval_predicate(p: &Predicate, node: &ObjectNode) -> bool {
    let Predicate::Field {
        field, cmp, value, ..
    } = p
    else {
        // COUNT is never part of a per-node filter.
        return true;
    };
    let actual = match field {
        Field::Label => Some(node.label.as_str()),
        Field::Attr(name) => node.attribute(name),
    };
    // A missing attribute satisfies no comparison, `!=` included.
    let Some(actual) = actual else {
        return false;
    };
    match value {
        Literal::Str(s) => cmp.holds(actual, s.as_str()),
        Literal::Num(n) => actual
            .trim()
            .parse::<f64>()
            .is_ok_and(|a| cmp.holds(&a, n)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanStep {
    /// Bare object pattern: every matching node notifies on its own.
    Object { key: Arc<str> },
    /// `Rel(subject, reference)`.
    Spatial {
        relation: SpatialRelation,
        subject: Arc<str>,
        reference: Arc<str>,
    },
    Temporal {
        op: TemporalOperator,
        keys: Vec<Arc<str>>,
    },
    Count {
        key: Arc<str>,
        cmp: Comparator,
        value: f64,
        /// Universal over frames when set, existential otherwise.
        per_frame: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryPlan {
    pub query_id: String,
    pub producer: String,
    pub object_nodes: Vec<ObjectQueryNode>,
    pub step: PlanStep,
    pub window: WindowSpec,
    pub confidence: ConfidenceClause,
    /// Name of the composite the pattern expanded from.
    pub composite: Option<String>,
    pub warnings: Vec<String>,
}

impl QueryPlan {
    pub fn node(&self, key: &str) -> Option<&ObjectQueryNode> {
        self.object_nodes.iter().find(|n| &*n.key == key)
    }
}

impl fmt::Display for QueryPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "query {} on producer {}", self.query_id, self.producer)?;
        for n in &self.object_nodes {
            let parts: Vec<String> = n.filter.iter().map(render_condition).collect();
            let filter = if parts.is_empty() { "(any)".to_string() } else { parts.join(" AND ") };
            writeln!(f, "  node {}: {}", n.key, filter)?;
        }
        match &self.step {
            PlanStep::Object { key } => writeln!(f, "  step OBJECT {key}")?,
            PlanStep::Spatial {
                relation,
                subject,
                reference,
            } => writeln!(f, "  step SPATIAL {relation}({subject}, reference {reference})")?,
            PlanStep::Temporal { op, keys } => {
                let keys: Vec<&str> = keys.iter().map(|k| &**k).collect();
                writeln!(f, "  step TEMPORAL {op}({})", keys.join(", "))?
            }
            PlanStep::Count {
                key,
                cmp,
                value,
                per_frame,
            } => writeln!(
                f,
                "  step COUNT({key}) {cmp} {value} {}",
                if *per_frame { "in every frame" } else { "in some frame" }
            )?,
        }
        if let Some(c) = &self.composite {
            writeln!(f, "  composite {c}")?;
        }
        let slide = self.window.slide_ms();
        writeln!(
            f,
            "  window {} ms, slide {} ms{}",
            self.window.length_ms(),
            slide,
            if slide == self.window.length_ms() { " (tumbling)" } else { "" }
        )?;
        writeln!(f, "  confidence {} {}", self.confidence.cmp, self.confidence.value)?;
        for w in &self.warnings {
            writeln!(f, "  warning: {w}")?;
        }
        Ok(())
    }
}

fn semantic(msg: impl Into<String>) -> VeqlError {
    VeqlError::Semantic(msg.into())
}

fn conjuncts(c: &Condition) -> Vec<&Condition> {
    match c {
        Condition::And(cs) => cs.iter().flat_map(conjuncts).collect(),
        other => vec![other],
    }
}

fn check_literals(c: &Condition) -> Result<(), VeqlError> {
    match c {
        Condition::Predicate(Predicate::Field {
            var,
            field: Field::Label,
            value: Literal::Num(n),
            ..
        }) => Err(semantic(format!("{var}.label compared with number {n}; labels are strings"))),
        Condition::Predicate(_) => Ok(()),
        Condition::And(cs) | Condition::Or(cs) => cs.iter().try_for_each(check_literals),
    }
}

pub(super) fn compile(
    query_id: &str,
    q: &Query,
    registry: &CompositeRegistry,
) -> Result<QueryPlan, VeqlError> {
    let mut warnings = Vec::new();

    let vars = q.pattern.variables();
    for (i, v) in vars.iter().enumerate() {
        if vars[..i].contains(v) {
            return Err(semantic(format!("variable `{v}` appears twice in the pattern")));
        }
    }
    for v in q.condition.variables() {
        if !vars.contains(&v) {
            return Err(semantic(format!("undeclared variable `{v}` in WHERE clause")));
        }
    }
    check_literals(&q.condition)?;

    let mut filters: Vec<Vec<Condition>> = vec![Vec::new(); vars.len()];
    let mut count: Option<(String, Comparator, f64, bool)> = None;
    for c in conjuncts(&q.condition) {
        if let Condition::Predicate(Predicate::Count {
            var,
            cmp,
            value,
            per_frame,
        }) = c
        {
            if count.is_some() {
                return Err(semantic("at most one COUNT predicate is supported"));
            }
            count = Some((var.clone(), *cmp, *value, *per_frame));
            continue;
        }
        if c.contains_count() {
            return Err(semantic("COUNT may only appear as a top-level AND term"));
        }
        let cv = c.variables();
        if cv.len() != 1 {
            return Err(semantic(format!(
                "an OR group may only constrain one variable, found {}",
                cv.join(", ")
            )));
        }
        let slot = vars.iter().position(|v| *v == cv[0]).expect("checked above");
        filters[slot].push(c.clone());
    }

    let object_nodes: Vec<ObjectQueryNode> = vars
        .iter()
        .zip(filters)
        .map(|(v, filter)| {
            let key: Arc<str> = match pinned_label(&filter) {
                Some(label) => format!("{v}:{label}").into(),
                None => (*v).into(),
            };
            ObjectQueryNode {
                variable: v.to_string(),
                key,
                filter,
            }
        })
        .collect();
    let key_of = |var: &str| -> Arc<str> {
        let n = object_nodes
            .iter()
            .find(|n| n.variable == var)
            .expect("pattern variable");
        Arc::clone(&n.key)
    };

    let mut composite = None;
    let step = match &q.pattern {
        Pattern::Object(v) => match count.take() {
            Some((cvar, cmp, value, per_frame)) => PlanStep::Count {
                key: key_of(&cvar),
                cmp,
                value,
                per_frame,
            },
            None => PlanStep::Object { key: key_of(v) },
        },
        Pattern::Call {
            function, args, ..
        } => match function {
            PatternFunction::Spatial(rel) => {
                if args.len() != 2 {
                    return Err(semantic(format!(
                        "spatial relation {rel} takes 2 objects, got {}",
                        args.len()
                    )));
                }
                if *rel == SpatialRelation::Topology(TopologyRelation::Crosses) {
                    warnings.push("CROSSES never holds between two boxes; this query cannot match".to_string());
                }
                PlanStep::Spatial {
                    relation: *rel,
                    subject: key_of(&args[0]),
                    reference: key_of(&args[1]),
                }
            }
            PatternFunction::Temporal(op) => {
                let min = if *op == TemporalOperator::Disj { 1 } else { 2 };
                if args.len() < min {
                    return Err(semantic(format!(
                        "{op} needs at least {min} objects, got {}",
                        args.len()
                    )));
                }
                PlanStep::Temporal {
                    op: *op,
                    keys: args.iter().map(|a| key_of(a)).collect(),
                }
            }
            PatternFunction::Composite(name) => {
                let def = registry
                    .get(name)
                    .ok_or_else(|| semantic(format!("unknown composite `{name}`")))?;
                if args.len() != def.arity {
                    return Err(semantic(format!(
                        "{} takes {} object(s), got {}",
                        def.name,
                        def.arity,
                        args.len()
                    )));
                }
                composite = Some(def.name.clone());
                let (cvar, cmp, value, per_frame) = count.take().unwrap_or_else(|| {
                    let (cmp, value, per_frame) = def.default_count;
                    (args[0].clone(), cmp, value, per_frame)
                });
                PlanStep::Count {
                    key: key_of(&cvar),
                    cmp,
                    value,
                    per_frame,
                }
            }
        },
    };
    if count.is_some() {
        return Err(semantic("COUNT is only supported with object or composite patterns"));
    }

    let w = q.window;
    if !(w.length_s.is_finite() && w.length_s > 0.0) || w.length_ms() == 0 {
        return Err(semantic(format!("window length must be positive, got {}", w.length_s)));
    }
    if let Some(s) = w.slide_s {
        if !(s.is_finite() && s > 0.0) || w.slide_ms() == 0 || s > w.length_s {
            return Err(semantic(format!(
                "window slide must be in (0, {}], got {s}",
                w.length_s
            )));
        }
    }
    if !(0.0..=1.0).contains(&q.confidence.value) {
        return Err(semantic(format!(
            "confidence threshold must be in [0, 1], got {}",
            q.confidence.value
        )));
    }

    Ok(QueryPlan {
        query_id: query_id.to_string(),
        producer: q.producer.clone(),
        object_nodes,
        step,
        window: w,
        confidence: q.confidence,
        composite,
        warnings,
    })
}
