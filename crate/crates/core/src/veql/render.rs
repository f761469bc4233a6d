use std::fmt::Write as _;

use super::ast::*;

/// Canonical text for a query; compound sub-conditions are always
/// parenthesized so the tree shape survives a reparse.
pub fn render(q: &Query) -> String {
    let mut out = String::new();
    out.push_str("SELECT ");
    match &q.pattern {
        Pattern::Object(v) => out.push_str(v),
        Pattern::Call { name, args, .. } => {
            let _ = write!(out, "{name}({})", args.join(", "));
        }
    }
    let _ = write!(out, " FROM {} WHERE ", q.producer);
    condition(&q.condition, &mut out);
    let _ = write!(out, " WITHIN TIMEFRAME_WINDOW({}", q.window.length_s);
    if let Some(slide) = q.window.slide_s {
        let _ = write!(out, ", {slide}");
    }
    let _ = write!(out, ") WITH_CONFIDENCE {} {}", q.confidence.cmp, q.confidence.value);
    out
}

fn condition(c: &Condition, out: &mut String) {
    match c {
        Condition::Predicate(p) => predicate(p, out),
        Condition::And(cs) => join(cs, " AND ", out),
        Condition::Or(cs) => join(cs, " OR ", out),
    }
}

fn join(children: &[Condition], sep: &str, out: &mut String) {
    for (i, child) in children.iter().enumerate() {
        if i > 0 {
            out.push_str(sep);
        }
        match child {
            Condition::Predicate(p) => predicate(p, out),
            compound => {
                out.push('(');
                condition(compound, out);
                out.push(')');
            }
        }
    }
}

fn predicate(p: &Predicate, out: &mut String) {
    match p {
        Predicate::Field {
            var,
            field,
            cmp,
            value,
        } => {
            let field = match field {
                Field::Label => "label".to_string(),
                Field::Attr(name) => format!("attr{name}"),
            };
            let _ = write!(out, "{var}.{field} {cmp} ");
            literal(value, out);
        }
        Predicate::Count {
            var,
            cmp,
            value,
            per_frame,
        } => {
            let _ = write!(out, "COUNT({var}) {cmp} {value}");
            if *per_frame {
                out.push_str(" FOR EACH FRAME");
            }
        }
    }
}

fn literal(l: &Literal, out: &mut String) {
    match l {
        Literal::Str(s) => {
            let _ = write!(out, "'{}'", s.replace('\'', "''"));
        }
        Literal::Num(n) => {
            let _ = write!(out, "{n}");
        }
    }
}

pub fn render_condition(c: &Condition) -> String {
    let mut out = String::new();
    condition(c, &mut out);
    out
}
