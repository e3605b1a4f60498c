//! Comparison expressions used by rule predicates and cause detectors.
//!
//! ```text
//! condition := sum CMP sum
//! CMP       := "<" | "<=" | ">" | ">=" | "==" | "!="
//! sum       := product (("+" | "-") product)*
//! product   := factor (("*" | "/") factor)*
//! factor    := NUMBER | NAME | "(" sum ")" | "-" factor
//! ```
//!
//! `NAME` is a context field (see [`Field`]) or a parameter of the owning
//! rule; parameters are folded to constants at compile time. Division by zero
//! yields 0 so every expression evaluates to a finite number.

use std::collections::BTreeMap;
use std::fmt;

/// Quantities an expression can read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Field {
    BalanceLimit,
    Sex,
    Education,
    Marriage,
    Age,
    TotalBill,
    TotalPayment,
    Repayment,
    /// Previous month's bill.
    PrevBill,
    /// Month-to-date sum of `exp` amounts, current transaction included.
    MtdBill,
    /// Month-to-date sum of `pay` amounts, current transaction included.
    MtdPayment,
    /// Month-to-date transaction count, current transaction included.
    MtdCount,
    /// Amount of the transaction being tested.
    Amount,
}

impl Field {
    pub const ALL: [Field; 13] = [
        Field::BalanceLimit,
        Field::Sex,
        Field::Education,
        Field::Marriage,
        Field::Age,
        Field::TotalBill,
        Field::TotalPayment,
        Field::Repayment,
        Field::PrevBill,
        Field::MtdBill,
        Field::MtdPayment,
        Field::MtdCount,
        Field::Amount,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Field::BalanceLimit => "balance_limit",
            Field::Sex => "sex",
            Field::Education => "education",
            Field::Marriage => "marriage",
            Field::Age => "age",
            Field::TotalBill => "total_bill",
            Field::TotalPayment => "total_payment",
            Field::Repayment => "repayment",
            Field::PrevBill => "prev_bill",
            Field::MtdBill => "mtd_bill",
            Field::MtdPayment => "mtd_payment",
            Field::MtdCount => "mtd_count",
            Field::Amount => "amount",
        }
    }

    pub fn from_name(name: &str) -> Option<Field> {
        Field::ALL.into_iter().find(|f| f.name() == name)
    }

    /// Fields that describe the transaction rather than the account.
    pub fn is_transactional(self) -> bool {
        self == Field::Amount
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    fn apply(self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Term {
    Const(f64),
    Field(Field),
    Neg(Box<Term>),
    Add(Box<Term>, Box<Term>),
    Sub(Box<Term>, Box<Term>),
    Mul(Box<Term>, Box<Term>),
    Div(Box<Term>, Box<Term>),
}

impl Term {
    fn eval(&self, get: &impl Fn(Field) -> f64) -> f64 {
        match self {
            Term::Const(v) => *v,
            Term::Field(f) => get(*f),
            Term::Neg(t) => -t.eval(get),
            Term::Add(a, b) => a.eval(get) + b.eval(get),
            Term::Sub(a, b) => a.eval(get) - b.eval(get),
            Term::Mul(a, b) => a.eval(get) * b.eval(get),
            Term::Div(a, b) => {
                let d = b.eval(get);
                if d == 0.0 {
                    0.0
                } else {
                    a.eval(get) / d
                }
            }
        }
    }

    fn visit_fields(&self, out: &mut Vec<Field>) {
        match self {
            Term::Const(_) => {}
            Term::Field(f) => out.push(*f),
            Term::Neg(t) => t.visit_fields(out),
            Term::Add(a, b) | Term::Sub(a, b) | Term::Mul(a, b) | Term::Div(a, b) => {
                a.visit_fields(out);
                b.visit_fields(out);
            }
        }
    }
}

/// A compiled `lhs CMP rhs` condition.
#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    pub lhs: Term,
    pub op: CmpOp,
    pub rhs: Term,
    source: String,
}

impl Condition {
    pub fn holds(&self, get: impl Fn(Field) -> f64) -> bool {
        self.op.apply(self.lhs.eval(&get), self.rhs.eval(&get))
    }

    pub fn fields(&self) -> Vec<Field> {
        let mut out = Vec::new();
        self.lhs.visit_fields(&mut out);
        self.rhs.visit_fields(&mut out);
        out
    }

    pub fn source(&self) -> &str {
        &self.source
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

/// Parse failure at a 1-based character column of the expression.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExprError {
    pub column: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Name(String),
    Cmp(CmpOp),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ExprError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.' || chars[i] == '_') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let text: String = chars[start..i].iter().filter(|&&c| c != '_').collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| ExprError { column: col, message: format!("bad number `{text}`") })?;
            out.push((col, Tok::Num(v)));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((col, Tok::Name(chars[start..i].iter().collect())));
            continue;
        }
        let next = chars.get(i + 1).copied();
        let (tok, width) = match (c, next) {
            ('<', Some('=')) => (Tok::Cmp(CmpOp::Le), 2),
            ('>', Some('=')) => (Tok::Cmp(CmpOp::Ge), 2),
            ('=', Some('=')) => (Tok::Cmp(CmpOp::Eq), 2),
            ('!', Some('=')) => (Tok::Cmp(CmpOp::Ne), 2),
            ('<', _) => (Tok::Cmp(CmpOp::Lt), 1),
            ('>', _) => (Tok::Cmp(CmpOp::Gt), 1),
            ('+', _) => (Tok::Plus, 1),
            ('-', _) => (Tok::Minus, 1),
            ('*', _) => (Tok::Star, 1),
            ('/', _) => (Tok::Slash, 1),
            ('(', _) => (Tok::LParen, 1),
            (')', _) => (Tok::RParen, 1),
            _ => return Err(ExprError { column: col, message: format!("unexpected character `{c}`") }),
        };
        out.push((col, tok));
        i += width;
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end_col: usize,
    params: &'a BTreeMap<String, f64>,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map(|(c, _)| *c).unwrap_or(self.end_col)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError { column: self.col(), message: message.into() })
    }

    fn sum(&mut self) -> Result<Term, ExprError> {
        let mut t = self.product()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    t = Term::Add(Box::new(t), Box::new(self.product()?));
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    t = Term::Sub(Box::new(t), Box::new(self.product()?));
                }
                _ => return Ok(t),
            }
        }
    }

    fn product(&mut self) -> Result<Term, ExprError> {
        let mut t = self.factor()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.pos += 1;
                    t = Term::Mul(Box::new(t), Box::new(self.factor()?));
                }
                Some(Tok::Slash) => {
                    self.pos += 1;
                    t = Term::Div(Box::new(t), Box::new(self.factor()?));
                }
                _ => return Ok(t),
            }
        }
    }

    fn factor(&mut self) -> Result<Term, ExprError> {
        let col = self.col();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Term::Const(v))
            }
            Some(Tok::Name(name)) => {
                self.pos += 1;
                if let Some(v) = self.params.get(&name) {
                    Ok(Term::Const(*v))
                } else if let Some(f) = Field::from_name(&name) {
                    Ok(Term::Field(f))
                } else {
                    Err(ExprError { column: col, message: format!("unknown name `{name}`") })
                }
            }
            Some(Tok::Minus) => {
                self.pos += 1;
                Ok(Term::Neg(Box::new(self.factor()?)))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let t = self.sum()?;
                if self.peek() != Some(&Tok::RParen) {
                    return self.err("expected `)`");
                }
                self.pos += 1;
                Ok(t)
            }
            Some(_) => self.err("expected a number, name or `(`"),
            None => self.err("unexpected end of expression"),
        }
    }
}

/// Compiles `src`, resolving names against `params` first and then fields.
pub fn parse_condition(src: &str, params: &BTreeMap<String, f64>) -> Result<Condition, ExprError> {
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0, end_col: src.chars().count() + 1, params };
    let lhs = p.sum()?;
    let op = match p.peek() {
        Some(Tok::Cmp(op)) => *op,
        _ => return p.err("expected a comparison operator"),
    };
    p.pos += 1;
    let rhs = p.sum()?;
    if p.peek().is_some() {
        return p.err("unexpected trailing input");
    }
    Ok(Condition { lhs, op, rhs, source: src.trim().to_string() })
}
