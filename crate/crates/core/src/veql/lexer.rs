use super::ast::Comparator;
use super::VeqlError;

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    Ident(String),
    Str(String),
    Num(f64),
    Cmp(Comparator),
    LParen,
    RParen,
    Comma,
    Dot,
    Eof,
}

impl TokenKind {
    pub fn describe(&self) -> String {
        match self {
            TokenKind::Ident(s) => format!("`{s}`"),
            TokenKind::Str(s) => format!("string '{s}'"),
            TokenKind::Num(n) => format!("number {n}"),
            TokenKind::Cmp(c) => format!("`{c}`"),
            TokenKind::LParen => "`(`".into(),
            TokenKind::RParen => "`)`".into(),
            TokenKind::Comma => "`,`".into(),
            TokenKind::Dot => "`.`".into(),
            TokenKind::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub line: usize,
    pub column: usize,
}

pub fn tokenize(text: &str) -> Result<Vec<Token>, VeqlError> {
    let mut lexer = Lexer {
        chars: text.chars().collect(),
        pos: 0,
        line: 1,
        column: 1,
    };
    let mut tokens = Vec::new();
    loop {
        let tok = lexer.next_token()?;
        let done = tok.kind == TokenKind::Eof;
        tokens.push(tok);
        if done {
            return Ok(tokens);
        }
    }
}

struct Lexer {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    column: usize,
}

impl Lexer {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn peek_at(&self, offset: usize) -> Option<char> {
        self.chars.get(self.pos + offset).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn error(&self, line: usize, column: usize, expected: &[&str], found: String) -> VeqlError {
        VeqlError::Syntax {
            line,
            column,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found,
        }
    }

    fn next_token(&mut self) -> Result<Token, VeqlError> {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
        let (line, column) = (self.line, self.column);
        let tok = |kind| Token { kind, line, column };
        let Some(c) = self.peek() else {
            return Ok(tok(TokenKind::Eof));
        };
        let kind = match c {
            '(' => {
                self.bump();
                TokenKind::LParen
            }
            ')' => {
                self.bump();
                TokenKind::RParen
            }
            ',' => {
                self.bump();
                TokenKind::Comma
            }
            '.' if !self.peek_at(1).is_some_and(|d| d.is_ascii_digit()) => {
                self.bump();
                TokenKind::Dot
            }
            '=' => {
                self.bump();
                TokenKind::Cmp(Comparator::Eq)
            }
            '≤' => {
                self.bump();
                TokenKind::Cmp(Comparator::Le)
            }
            '≥' => {
                self.bump();
                TokenKind::Cmp(Comparator::Ge)
            }
            '!' => {
                self.bump();
                if self.peek() == Some('=') {
                    self.bump();
                    TokenKind::Cmp(Comparator::Ne)
                } else {
                    return Err(self.error(line, column, &["`!=`"], "`!`".into()));
                }
            }
            '<' | '>' => {
                self.bump();
                let or_equal = self.peek() == Some('=');
                if or_equal {
                    self.bump();
                }
                TokenKind::Cmp(match (c, or_equal) {
                    ('<', false) => Comparator::Lt,
                    ('<', true) => Comparator::Le,
                    (_, false) => Comparator::Gt,
                    (_, true) => Comparator::Ge,
                })
            }
            '\'' => TokenKind::Str(self.string(line, column)?),
            c if c.is_ascii_digit() || c == '.' || (c == '-' && self.peek_at(1).is_some_and(|d| d.is_ascii_digit() || d == '.')) => {
                TokenKind::Num(self.number(line, column)?)
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut s = String::new();
                while let Some(c) = self.peek().filter(|c| c.is_alphanumeric() || *c == '_') {
                    s.push(c);
                    self.bump();
                }
                TokenKind::Ident(s)
            }
            other => {
                return Err(self.error(line, column, &["token"], format!("`{other}`")));
            }
        };
        Ok(tok(kind))
    }

    /// Single-quoted; a doubled quote `''` stands for one quote.
    fn string(&mut self, line: usize, column: usize) -> Result<String, VeqlError> {
        self.bump();
        let mut s = String::new();
        loop {
            match self.bump() {
                None => return Err(self.error(line, column, &["closing `'`"], "end of input".into())),
                Some('\'') => {
                    if self.peek() == Some('\'') {
                        self.bump();
                        s.push('\'');
                    } else {
                        return Ok(s);
                    }
                }
                Some(c) => s.push(c),
            }
        }
    }

    fn number(&mut self, line: usize, column: usize) -> Result<f64, VeqlError> {
        let mut s = String::new();
        if self.peek() == Some('-') {
            s.push('-');
            self.bump();
        }
        let mut seen_dot = false;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() {
                s.push(c);
            } else if c == '.' && !seen_dot && self.peek_at(1).is_some_and(|d| d.is_ascii_digit()) {
                seen_dot = true;
                s.push(c);
            } else {
                break;
            }
            self.bump();
        }
        s.parse::<f64>()
            .map_err(|_| self.error(line, column, &["number"], format!("`{s}`")))
    }
}
