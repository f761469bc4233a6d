use super::ast::*;
use super::lexer::{tokenize, Token, TokenKind};
use super::{CompositeRegistry, VeqlError};
use crate::spatial::SpatialRelation;
use crate::temporal::TemporalOperator;

const KEYWORDS: &[&str] = &[
    "SELECT",
    "FROM",
    "WHERE",
    "WITHIN",
    "WITH_CONFIDENCE",
    "AND",
    "OR",
    "COUNT",
    "FOR",
    "EACH",
    "FRAME",
    "TIMEFRAME_WINDOW",
];

fn is_keyword(s: &str) -> bool {
    KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(s))
}

pub fn parse(text: &str, registry: &CompositeRegistry) -> Result<Query, VeqlError> {
    let tokens = tokenize(text)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        registry,
    };
    let q = p.query()?;
    p.expect_eof()?;
    Ok(q)
}

struct Parser<'r> {
    tokens: Vec<Token>,
    pos: usize,
    registry: &'r CompositeRegistry,
}

impl Parser<'_> {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn peek_kind_at(&self, offset: usize) -> &TokenKind {
        let i = (self.pos + offset).min(self.tokens.len() - 1);
        &self.tokens[i].kind
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> VeqlError {
        let t = self.peek();
        VeqlError::Syntax {
            line: t.line,
            column: t.column,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: t.kind.describe(),
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().kind, TokenKind::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn keyword(&mut self, kw: &str) -> Result<(), VeqlError> {
        if self.at_keyword(kw) {
            self.advance();
            Ok(())
        } else {
            Err(self.error(&[kw]))
        }
    }

    fn ident(&mut self) -> Result<String, VeqlError> {
        match &self.peek().kind {
            TokenKind::Ident(s) if !is_keyword(s) => {
                let s = s.clone();
                self.advance();
                Ok(s)
            }
            _ => Err(self.error(&["identifier"])),
        }
    }

    fn punct(&mut self, kind: TokenKind, shown: &str) -> Result<(), VeqlError> {
        if self.peek().kind == kind {
            self.advance();
            Ok(())
        } else {
            Err(self.error(&[shown]))
        }
    }

    fn number(&mut self) -> Result<f64, VeqlError> {
        match self.peek().kind {
            TokenKind::Num(n) => {
                self.advance();
                Ok(n)
            }
            _ => Err(self.error(&["number"])),
        }
    }

    fn comparator(&mut self) -> Result<Comparator, VeqlError> {
        match self.peek().kind {
            TokenKind::Cmp(c) => {
                self.advance();
                Ok(c)
            }
            _ => Err(self.error(&["=", "!=", "<", ">", "<=", ">="])),
        }
    }

    fn expect_eof(&mut self) -> Result<(), VeqlError> {
        if self.peek().kind == TokenKind::Eof {
            Ok(())
        } else {
            Err(self.error(&["end of input"]))
        }
    }

    fn query(&mut self) -> Result<Query, VeqlError> {
        self.keyword("SELECT")?;
        let pattern = self.pattern()?;
        self.keyword("FROM")?;
        let producer = self.ident()?;
        self.keyword("WHERE")?;
        let condition = self.condition()?;
        self.keyword("WITHIN")?;
        let window = self.window()?;
        let confidence = if self.at_keyword("WITH_CONFIDENCE") {
            self.advance();
            let cmp = match self.peek().kind {
                TokenKind::Cmp(c @ (Comparator::Gt | Comparator::Ge)) => {
                    self.advance();
                    c
                }
                _ => return Err(self.error(&[">", ">="])),
            };
            ConfidenceClause {
                cmp,
                value: self.number()?,
            }
        } else {
            ConfidenceClause::default()
        };
        Ok(Query {
            pattern,
            producer,
            condition,
            window,
            confidence,
        })
    }

    fn pattern(&mut self) -> Result<Pattern, VeqlError> {
        let start = self.peek().clone();
        let name = self.ident()?;
        if self.peek().kind != TokenKind::LParen {
            return Ok(Pattern::Object(name));
        }
        self.advance();
        let mut args = vec![self.ident()?];
        while self.peek().kind == TokenKind::Comma {
            self.advance();
            args.push(self.ident()?);
        }
        self.punct(TokenKind::RParen, ")")?;
        let function = if let Ok(rel) = name.parse::<SpatialRelation>() {
            PatternFunction::Spatial(rel)
        } else if let Ok(op) = name.parse::<TemporalOperator>() {
            PatternFunction::Temporal(op)
        } else if let Some(def) = self.registry.get(&name) {
            PatternFunction::Composite(def.name.clone())
        } else {
            return Err(VeqlError::Semantic(format!(
                "{}:{}: unknown pattern function `{name}`",
                start.line, start.column
            )));
        };
        Ok(Pattern::Call {
            name,
            function,
            args,
        })
    }

    fn condition(&mut self) -> Result<Condition, VeqlError> {
        let mut terms = vec![self.term()?];
        while self.at_keyword("OR") {
            self.advance();
            terms.push(self.term()?);
        }
        Ok(if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            Condition::Or(terms)
        })
    }

    fn term(&mut self) -> Result<Condition, VeqlError> {
        let mut preds = vec![self.predicate()?];
        while self.at_keyword("AND") {
            self.advance();
            preds.push(self.predicate()?);
        }
        Ok(if preds.len() == 1 {
            preds.pop().unwrap()
        } else {
            Condition::And(preds)
        })
    }

    fn predicate(&mut self) -> Result<Condition, VeqlError> {
        if self.peek().kind == TokenKind::LParen {
            self.advance();
            let inner = self.condition()?;
            self.punct(TokenKind::RParen, ")")?;
            return Ok(inner);
        }
        if self.at_keyword("COUNT") {
            self.advance();
            self.punct(TokenKind::LParen, "(")?;
            let var = self.ident()?;
            self.punct(TokenKind::RParen, ")")?;
            let cmp = self.comparator()?;
            let value = self.number()?;
            let per_frame = if self.at_keyword("FOR") {
                self.advance();
                self.keyword("EACH")?;
                self.keyword("FRAME")?;
                true
            } else {
                false
            };
            return Ok(Condition::Predicate(Predicate::Count {
                var,
                cmp,
                value,
                per_frame,
            }));
        }
        if !matches!(self.peek().kind, TokenKind::Ident(_)) || self.peek_kind_at(1) != &TokenKind::Dot {
            return Err(self.error(&["identifier", "COUNT", "("]));
        }
        let var = self.ident()?;
        self.punct(TokenKind::Dot, ".")?;
        let field = self.field()?;
        let cmp = self.comparator()?;
        let value = match self.peek().kind.clone() {
            TokenKind::Str(s) => Literal::Str(s),
            TokenKind::Num(n) => Literal::Num(n),
            _ => return Err(self.error(&["string", "number"])),
        };
        self.advance();
        let (cmp, value) = negation_sugar(cmp, value);
        Ok(Condition::Predicate(Predicate::Field {
            var,
            field,
            cmp,
            value,
        }))
    }

    fn field(&mut self) -> Result<Field, VeqlError> {
        let TokenKind::Ident(name) = self.peek().kind.clone() else {
            return Err(self.error(&["label", "attr<name>"]));
        };
        if name.eq_ignore_ascii_case("label") {
            self.advance();
            return Ok(Field::Label);
        }
        if name.get(..4).is_some_and(|p| p.eq_ignore_ascii_case("attr")) {
            self.advance();
            let rest = &name[4..];
            if !rest.is_empty() {
                return Ok(Field::Attr(rest.to_string()));
            }
            return Ok(Field::Attr(self.ident()?));
        }
        Err(self.error(&["label", "attr<name>"]))
    }

    fn window(&mut self) -> Result<WindowSpec, VeqlError> {
        self.keyword("TIMEFRAME_WINDOW")?;
        self.punct(TokenKind::LParen, "(")?;
        let length_s = self.number()?;
        let slide_s = if self.peek().kind == TokenKind::Comma {
            self.advance();
            Some(self.number()?)
        } else {
            None
        };
        self.punct(TokenKind::RParen, ")")?;
        Ok(WindowSpec { length_s, slide_s })
    }
}

/// `= 'Not X'` reads as `!= 'X'` and `!= 'Not X'` as `= 'X'`.
fn negation_sugar(cmp: Comparator, value: Literal) -> (Comparator, Literal) {
    if let Literal::Str(s) = &value {
        let negated = s.len() > 4 && s.get(..4).is_some_and(|p| p.eq_ignore_ascii_case("not "));
        if negated {
            let rest = s[4..].trim_start().to_string();
            match cmp {
                Comparator::Eq => return (Comparator::Ne, Literal::Str(rest)),
                Comparator::Ne => return (Comparator::Eq, Literal::Str(rest)),
                _ => {}
            }
        }
    }
    (cmp, value)
}
