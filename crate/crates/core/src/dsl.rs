//! Textual model language (`.tan`): parser and printer.
//!
//! Parsing runs in two stages. The surface parser builds an AST that keeps
//! identifiers unresolved and carries source spans; lowering then resolves
//! names against the declarations (which may appear in any order), desugars
//! clock syntax and produces a [`SystemModel`]. Semantic checks beyond what
//! lowering needs are left to [`crate::model::validate_model`].

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraint::{CmpOp, Constraint, Formula, Term, VarRef};
use crate::model::{
    ErrorRole, GuardedTransition, LocalDecl, Multiplicity, PortDecl, ProcessTemplate, SystemModel, TimeModel,
    TransitionKind, DENOMINATOR_VAR, TIME_VAR,
};

/// Words that cannot be used as names because they start expressions.
pub const RESERVED_WORDS: &[&str] = &["true", "false", "self", "id", "val", "dist"];

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSpan {
    pub file: Option<String>,
    pub start_line: usize,
    pub start_col: usize,
    pub end_line: usize,
    pub end_col: usize,
}

impl SourceSpan {
    fn point(line: usize, col: usize) -> Self {
        SourceSpan { file: None, start_line: line, start_col: col, end_line: line, end_col: col }
    }

    fn to(&self, other: &SourceSpan) -> SourceSpan {
        SourceSpan {
            file: self.file.clone(),
            start_line: self.start_line,
            start_col: self.start_col,
            end_line: other.end_line,
            end_col: other.end_col,
        }
    }
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(file) = &self.file {
            write!(f, "{file}:")?;
        }
        write!(f, "{}:{}", self.start_line, self.start_col)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{span}: {message}")]
pub struct ParseError {
    pub message: String,
    pub span: SourceSpan,
}

impl ParseError {
    fn new(message: impl Into<String>, span: &SourceSpan) -> Self {
        ParseError { message: message.into(), span: span.clone() }
    }
}

// ---------------------------------------------------------------------------
// Lexer

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(String),
    Sym(&'static str),
    Eof,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    span: SourceSpan,
}

const SYMBOLS: &[&str] = &[
    ":=", "==", "!=", "<=", ">=", "||", "&&", "->", "{", "}", "(", ")", ";", ",", ":", "=", "<", ">", "+",
    "-", "*", "|", "!", "'", ".",
];

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut toks = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let advance = |i: &mut usize, line: &mut usize, col: &mut usize, n: usize| {
        for _ in 0..n {
            if chars[*i] == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            *i += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col, 1);
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                advance(&mut i, &mut line, &mut col, 1);
            }
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'*') {
            let start = SourceSpan::point(line, col);
            advance(&mut i, &mut line, &mut col, 2);
            loop {
                if i >= chars.len() {
                    return Err(ParseError::new("unterminated block comment", &start));
                }
                if chars[i] == '*' && chars.get(i + 1) == Some(&'/') {
                    advance(&mut i, &mut line, &mut col, 2);
                    break;
                }
                advance(&mut i, &mut line, &mut col, 1);
            }
            continue;
        }
        let start = SourceSpan::point(line, col);
        if c.is_ascii_alphabetic() || c == '_' {
            let mut s = String::new();
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                s.push(chars[i]);
                advance(&mut i, &mut line, &mut col, 1);
            }
            toks.push(Token { tok: Tok::Ident(s), span: start.to(&SourceSpan::point(line, col)) });
            continue;
        }
        if c.is_ascii_digit() {
            let mut s = String::new();
            while i < chars.len() && chars[i].is_ascii_digit() {
                s.push(chars[i]);
                advance(&mut i, &mut line, &mut col, 1);
            }
            toks.push(Token { tok: Tok::Int(s), span: start.to(&SourceSpan::point(line, col)) });
            continue;
        }
        let sym = SYMBOLS.iter().find(|s| {
            let sc: Vec<char> = s.chars().collect();
            chars[i..].starts_with(&sc)
        });
        match sym {
            Some(s) => {
                advance(&mut i, &mut line, &mut col, s.len());
                toks.push(Token { tok: Tok::Sym(s), span: start.to(&SourceSpan::point(line, col)) });
            }
            None => return Err(ParseError::new(format!("unexpected character `{c}`"), &start)),
        }
    }
    toks.push(Token { tok: Tok::Eof, span: SourceSpan::point(line, col) });
    Ok(toks)
}

// ---------------------------------------------------------------------------
// Surface syntax

#[derive(Clone, Debug)]
enum STerm {
    Int(i64),
    Name(String),
    Primed(String),
    SelfId,
    Id(String),
    Val(String, SourceSpan),
    Add(Box<STerm>, Box<STerm>),
    Sub(Box<STerm>, Box<STerm>),
    Neg(Box<STerm>),
    Mul(Box<STerm>, Box<STerm>, SourceSpan),
}

#[derive(Clone, Debug)]
enum SFormula {
    True,
    False,
    Cmp(CmpOp, STerm, STerm),
    Divides(i64, STerm),
    Dist(Vec<STerm>),
    Not(Box<SFormula>),
    And(Vec<SFormula>),
    Or(Vec<SFormula>),
    Implies(Box<SFormula>, Box<SFormula>),
}

#[derive(Clone, Debug)]
enum SUpdate {
    Skip,
    Reset(String, SourceSpan),
    Assign(String, STerm),
    Constraint(SFormula),
}

#[derive(Debug)]
struct STransition {
    kind: TransitionKind,
    guard: SFormula,
    updates: Vec<SUpdate>,
}

#[derive(Debug)]
struct STemplate {
    name: String,
    replicated: bool,
    locals: Vec<LocalDecl>,
    init: SFormula,
    tinv: SFormula,
    transitions: Vec<STransition>,
}

#[derive(Debug)]
struct SRole {
    name: String,
    template: String,
    constraint: SFormula,
}

#[derive(Debug, Default)]
struct SSystem {
    name: String,
    time: Option<TimeModel>,
    globals: Vec<String>,
    channels: Vec<String>,
    barriers: Vec<String>,
    ports: Vec<PortDecl>,
    interactions: Vec<Vec<String>>,
    templates: Vec<STemplate>,
    roles: Vec<SRole>,
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, ParseError>;

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Int(s) => format!("`{s}`"),
        Tok::Sym(s) => format!("`{s}`"),
        Tok::Eof => "end of input".to_string(),
    }
}

fn cmp_of(sym: &str) -> Option<CmpOp> {
    Some(match sym {
        "=" | "==" => CmpOp::Eq,
        "!=" => CmpOp::Ne,
        "<=" => CmpOp::Le,
        "<" => CmpOp::Lt,
        ">=" => CmpOp::Ge,
        ">" => CmpOp::Gt,
        _ => return None,
    })
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.toks[(self.pos + n).min(self.toks.len() - 1)].tok
    }

    fn span(&self) -> SourceSpan {
        self.toks[self.pos].span.clone()
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected<T>(&self, what: &str) -> PResult<T> {
        Err(ParseError::new(format!("expected {what}, found {}", describe(self.peek())), &self.span()))
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn is_kw(&self, k: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == k)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, k: &str) -> bool {
        if self.is_kw(k) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> PResult<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.unexpected(&format!("`{s}`"))
        }
    }

    fn expect_kw(&mut self, k: &str) -> PResult<()> {
        if self.eat_kw(k) {
            Ok(())
        } else {
            self.unexpected(&format!("`{k}`"))
        }
    }

    fn name(&mut self) -> PResult<(String, SourceSpan)> {
        match self.peek().clone() {
            Tok::Ident(s) if RESERVED_WORDS.contains(&s.as_str()) => Err(ParseError::new(
                format!("`{s}` is a reserved word and cannot be used as a name"),
                &self.span(),
            )),
            Tok::Ident(s) => {
                let sp = self.bump().span;
                Ok((s, sp))
            }
            _ => self.unexpected("a name"),
        }
    }

    fn name_list(&mut self) -> PResult<Vec<String>> {
        let mut out = vec![self.name()?.0];
        while self.eat_sym(",") {
            out.push(self.name()?.0);
        }
        Ok(out)
    }

    fn int(&mut self) -> PResult<i64> {
        let neg = self.eat_sym("-");
        let sp = self.span();
        match self.peek().clone() {
            Tok::Int(s) => {
                self.bump();
                let digits = if neg { format!("-{s}") } else { s };
                digits.parse::<i64>().map_err(|_| ParseError::new("integer literal out of range", &sp))
            }
            _ => self.unexpected("an integer"),
        }
    }

    // -- system level ------------------------------------------------------

    fn system(&mut self) -> PResult<SSystem> {
        self.expect_kw("system")?;
        let mut sys = SSystem { name: self.name()?.0, ..Default::default() };
        self.expect_sym("{")?;
        while !self.eat_sym("}") {
            let sp = self.span();
            let Tok::Ident(kw) = self.peek().clone() else {
                return self.unexpected("a declaration");
            };
            self.bump();
            match kw.as_str() {
                "time" => {
                    if sys.time.is_some() {
                        return Err(ParseError::new("duplicate time declaration", &sp));
                    }
                    let tm = if self.eat_kw("discrete") {
                        TimeModel::Discrete
                    } else if self.eat_kw("dense") {
                        TimeModel::DenseRational
                    } else if self.eat_kw("untimed") {
                        TimeModel::Untimed
                    } else {
                        return self.unexpected("`discrete`, `dense` or `untimed`");
                    };
                    sys.time = Some(tm);
                    self.expect_sym(";")?;
                }
                "globals" => {
                    sys.globals.extend(self.name_list()?);
                    self.expect_sym(";")?;
                }
                "channel" => {
                    sys.channels.extend(self.name_list()?);
                    self.expect_sym(";")?;
                }
                "barrier" => {
                    sys.barriers.extend(self.name_list()?);
                    self.expect_sym(";")?;
                }
                "port" => {
                    let name = self.name()?.0;
                    self.expect_kw("of")?;
                    let owner = self.name()?.0;
                    self.expect_sym(";")?;
                    sys.ports.push(PortDecl { name, owner });
                }
                "interaction" => {
                    self.expect_sym("{")?;
                    let mut ports = Vec::new();
                    if !self.is_sym("}") {
                        ports = self.name_list()?;
                    }
                    self.expect_sym("}")?;
                    self.expect_sym(";")?;
                    sys.interactions.push(ports);
                }
                "template" => sys.templates.push(self.template()?),
                "error" => {
                    self.expect_sym("{")?;
                    while !self.eat_sym("}") {
                        let name = self.name()?.0;
                        self.expect_sym(":")?;
                        let template = self.name()?.0;
                        let constraint = if self.eat_kw("when") { self.formula()? } else { SFormula::True };
                        self.expect_sym(";")?;
                        sys.roles.push(SRole { name, template, constraint });
                    }
                }
                other => return Err(ParseError::new(format!("unknown declaration `{other}`"), &sp)),
            }
        }
        if *self.peek() != Tok::Eof {
            return self.unexpected("end of input");
        }
        Ok(sys)
    }

    fn template(&mut self) -> PResult<STemplate> {
        let name = self.name()?.0;
        let replicated = self.eat_kw("replicated");
        self.expect_sym("{")?;
        let mut t = STemplate {
            name,
            replicated,
            locals: Vec::new(),
            init: SFormula::True,
            tinv: SFormula::True,
            transitions: Vec::new(),
        };
        let (mut seen_init, mut seen_tinv) = (false, false);
        while !self.eat_sym("}") {
            let sp = self.span();
            let Tok::Ident(kw) = self.peek().clone() else {
                return self.unexpected("a template item");
            };
            self.bump();
            match kw.as_str() {
                "locals" | "clock" => {
                    for n in self.name_list()? {
                        t.locals.push(LocalDecl { name: n, is_clock: kw == "clock" });
                    }
                    self.expect_sym(";")?;
                }
                "init" | "tinv" => {
                    let seen = if kw == "init" { &mut seen_init } else { &mut seen_tinv };
                    if *seen {
                        return Err(ParseError::new(format!("duplicate `{kw}`"), &sp));
                    }
                    *seen = true;
                    let f = self.formula()?;
                    self.expect_sym(";")?;
                    if kw == "init" {
                        t.init = f;
                    } else {
                        t.tinv = f;
                    }
                }
                "trans" => t.transitions.push(self.transition()?),
                other => return Err(ParseError::new(format!("unknown template item `{other}`"), &sp)),
            }
        }
        Ok(t)
    }

    fn transition(&mut self) -> PResult<STransition> {
        let kind = if self.eat_kw("local") {
            TransitionKind::Local
        } else if self.eat_kw("send") {
            TransitionKind::Send(self.name()?.0)
        } else if self.eat_kw("recv") {
            TransitionKind::Receive(self.name()?.0)
        } else if self.eat_kw("sync") {
            TransitionKind::Barrier(self.name()?.0)
        } else if self.eat_kw("port") {
            TransitionKind::Port(self.name()?.0)
        } else {
            return self.unexpected("`local`, `send`, `recv`, `sync` or `port`");
        };
        let guard = if self.eat_kw("when") { self.formula()? } else { SFormula::True };
        let mut updates = Vec::new();
        if self.eat_kw("do") {
            loop {
                updates.push(self.update()?);
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        self.expect_sym(";")?;
        Ok(STransition { kind, guard, updates })
    }

    fn update(&mut self) -> PResult<SUpdate> {
        if self.eat_kw("skip") {
            return Ok(SUpdate::Skip);
        }
        if self.is_kw("reset") && matches!(self.peek_at(1), Tok::Ident(_)) {
            self.bump();
            let (n, sp) = self.name()?;
            return Ok(SUpdate::Reset(n, sp));
        }
        if matches!(self.peek(), Tok::Ident(_)) && matches!(self.peek_at(1), Tok::Sym(":=")) {
            let n = self.name()?.0;
            self.bump();
            return Ok(SUpdate::Assign(n, self.term()?));
        }
        Ok(SUpdate::Constraint(self.formula()?))
    }

    // -- formulas ----------------------------------------------------------

    fn formula(&mut self) -> PResult<SFormula> {
        let lhs = self.disjunction()?;
        if self.eat_sym("->") {
            let rhs = self.formula()?;
            return Ok(SFormula::Implies(Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn disjunction(&mut self) -> PResult<SFormula> {
        let mut items = vec![self.conjunction()?];
        while self.eat_sym("||") {
            items.push(self.conjunction()?);
        }
        Ok(if items.len() == 1 { items.pop().unwrap() } else { SFormula::Or(items) })
    }

    fn conjunction(&mut self) -> PResult<SFormula> {
        let mut items = vec![self.negation()?];
        while self.eat_sym("&&") {
            items.push(self.negation()?);
        }
        Ok(if items.len() == 1 { items.pop().unwrap() } else { SFormula::And(items) })
    }

    fn negation(&mut self) -> PResult<SFormula> {
        if self.eat_sym("!") {
            return Ok(SFormula::Not(Box::new(self.negation()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> PResult<SFormula> {
        if self.eat_kw("true") {
            return Ok(SFormula::True);
        }
        if self.eat_kw("false") {
            return Ok(SFormula::False);
        }
        if self.is_kw("dist") && matches!(self.peek_at(1), Tok::Sym("(")) {
            self.bump();
            self.bump();
            let mut ts = vec![self.term()?];
            while self.eat_sym(",") {
                ts.push(self.term()?);
            }
            self.expect_sym(")")?;
            return Ok(SFormula::Dist(ts));
        }
        let save = self.pos;
        let as_cmp = self.comparison();
        match as_cmp {
            Ok(f) => Ok(f),
            Err(e1) => {
                let after_cmp = self.pos;
                self.pos = save;
                if self.eat_sym("(") {
                    let res = self.formula().and_then(|f| {
                        self.expect_sym(")")?;
                        Ok(f)
                    });
                    match res {
                        Ok(f) => Ok(f),
                        Err(e2) => {
                            if self.pos >= after_cmp {
                                Err(e2)
                            } else {
                                self.pos = after_cmp;
                                Err(e1)
                            }
                        }
                    }
                } else {
                    self.pos = after_cmp;
                    Err(e1)
                }
            }
        }
    }

    fn comparison(&mut self) -> PResult<SFormula> {
        let start = self.span();
        let lhs = self.term()?;
        if let Tok::Sym(s) = self.peek().clone() {
            if let Some(op) = cmp_of(s) {
                self.bump();
                let rhs = self.term()?;
                return Ok(SFormula::Cmp(op, lhs, rhs));
            }
            if s == "|" {
                let STerm::Int(k) = lhs else {
                    return Err(ParseError::new("divisor must be an integer literal", &start));
                };
                self.bump();
                let t = self.term()?;
                return Ok(SFormula::Divides(k, t));
            }
        }
        self.unexpected("a comparison operator")
    }

    // -- terms -------------------------------------------------------------

    fn term(&mut self) -> PResult<STerm> {
        let mut t = self.product()?;
        loop {
            if self.eat_sym("+") {
                t = STerm::Add(Box::new(t), Box::new(self.product()?));
            } else if self.eat_sym("-") {
                t = STerm::Sub(Box::new(t), Box::new(self.product()?));
            } else {
                return Ok(t);
            }
        }
    }

    fn product(&mut self) -> PResult<STerm> {
        let mut t = self.unary()?;
        loop {
            let sp = self.span();
            if self.eat_sym("*") {
                t = STerm::Mul(Box::new(t), Box::new(self.unary()?), sp);
            } else {
                return Ok(t);
            }
        }
    }

    fn unary(&mut self) -> PResult<STerm> {
        if self.is_sym("-") {
            if matches!(self.peek_at(1), Tok::Int(_)) {
                return Ok(STerm::Int(self.int()?));
            }
            self.bump();
            return Ok(STerm::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<STerm> {
        match self.peek().clone() {
            Tok::Int(_) => Ok(STerm::Int(self.int()?)),
            Tok::Sym("(") => {
                self.bump();
                let t = self.term()?;
                self.expect_sym(")")?;
                Ok(t)
            }
            Tok::Ident(k) if k == "self" => {
                self.bump();
                Ok(STerm::SelfId)
            }
            Tok::Ident(k) if (k == "id" || k == "val") && matches!(self.peek_at(1), Tok::Sym("(")) => {
                self.bump();
                self.bump();
                let (n, nsp) = self.name()?;
                self.expect_sym(")")?;
                Ok(if k == "id" { STerm::Id(n) } else { STerm::Val(n, nsp) })
            }
            Tok::Ident(_) => {
                let n = self.name()?.0;
                if self.eat_sym("'") {
                    Ok(STerm::Primed(n))
                } else {
                    Ok(STerm::Name(n))
                }
            }
            _ => self.unexpected("a term"),
        }
    }
}

// ---------------------------------------------------------------------------
// Lowering

struct Lower<'a> {
    time_model: TimeModel,
    locals: &'a [LocalDecl],
}

fn contains_val(t: &STerm) -> bool {
    match t {
        STerm::Val(..) => true,
        STerm::Add(a, b) | STerm::Sub(a, b) | STerm::Mul(a, b, _) => contains_val(a) || contains_val(b),
        STerm::Neg(a) => contains_val(a),
        _ => false,
    }
}

fn const_value(t: &Term<VarRef>) -> Option<i64> {
    t.eval(&|_: &VarRef| None).ok()
}

fn time_var() -> Term<VarRef> {
    Term::Var(VarRef::Global(TIME_VAR.into()))
}

impl Lower<'_> {
    fn is_local(&self, n: &str) -> bool {
        self.locals.iter().any(|l| l.name == n)
    }

    fn clock(&self, n: &str, sp: &SourceSpan, what: &str) -> PResult<()> {
        if self.time_model == TimeModel::Untimed {
            return Err(ParseError::new(format!("`{what}` requires a timed model"), sp));
        }
        if !self.locals.iter().any(|l| l.name == n && l.is_clock) {
            return Err(ParseError::new(format!("`{n}` is not a clock of this template"), sp));
        }
        Ok(())
    }

    fn term(&self, t: &STerm, scale: bool) -> PResult<Term<VarRef>> {
        Ok(match t {
            STerm::Int(k) => {
                if scale && *k != 0 {
                    Term::scale(*k, Term::Var(VarRef::Global(DENOMINATOR_VAR.into())))
                } else {
                    Term::Const(*k)
                }
            }
            STerm::Name(n) => {
                Term::Var(if self.is_local(n) { VarRef::Local(n.clone()) } else { VarRef::Global(n.clone()) })
            }
            STerm::Primed(n) => Term::Var(if self.is_local(n) {
                VarRef::LocalPrimed(n.clone())
            } else {
                VarRef::GlobalPrimed(n.clone())
            }),
            STerm::SelfId => Term::Var(VarRef::SelfId),
            STerm::Id(r) => Term::Var(VarRef::PeerId(r.clone())),
            STerm::Val(n, sp) => {
                self.clock(n, sp, "val")?;
                Term::sub(time_var(), Term::Var(VarRef::Local(n.clone())))
            }
            STerm::Add(a, b) => Term::add(self.term(a, scale)?, self.term(b, scale)?),
            STerm::Sub(a, b) => Term::sub(self.term(a, scale)?, self.term(b, scale)?),
            STerm::Neg(a) => Term::Neg(Box::new(self.term(a, scale)?)),
            STerm::Mul(a, b, sp) => {
                if let Some(k) = const_value(&self.term(a, false)?) {
                    Term::scale(k, self.term(b, scale)?)
                } else if let Some(k) = const_value(&self.term(b, false)?) {
                    Term::scale(k, self.term(a, scale)?)
                } else {
                    return Err(ParseError::new("non-linear product: one factor must be constant", sp));
                }
            }
        })
    }

    fn scaled(&self, ts: &[&STerm]) -> bool {
        self.time_model == TimeModel::DenseRational && ts.iter().any(|t| contains_val(t))
    }

    fn formula(&self, f: &SFormula) -> PResult<Constraint> {
        Ok(match f {
            SFormula::True => Formula::True,
            SFormula::False => Formula::False,
            SFormula::Cmp(op, a, b) => {
                let s = self.scaled(&[a, b]);
                Formula::Cmp(*op, self.term(a, s)?, self.term(b, s)?)
            }
            SFormula::Divides(k, t) => Formula::Divides(*k, self.term(t, false)?),
            SFormula::Dist(ts) => {
                Formula::Distinct(ts.iter().map(|t| self.term(t, false)).collect::<PResult<_>>()?)
            }
            SFormula::Not(a) => Formula::not(self.formula(a)?),
            SFormula::And(items) => {
                Formula::and(items.iter().map(|i| self.formula(i)).collect::<PResult<Vec<_>>>()?)
            }
            SFormula::Or(items) => {
                Formula::or(items.iter().map(|i| self.formula(i)).collect::<PResult<Vec<_>>>()?)
            }
            SFormula::Implies(a, b) => Formula::implies(self.formula(a)?, self.formula(b)?),
        })
    }

    fn update(&self, u: &SUpdate) -> PResult<Constraint> {
        Ok(match u {
            SUpdate::Skip => Formula::True,
            SUpdate::Reset(n, sp) => {
                self.clock(n, sp, "reset")?;
                Formula::eq(Term::Var(VarRef::LocalPrimed(n.clone())), time_var())
            }
            SUpdate::Assign(n, t) => {
                let lhs = if self.is_local(n) {
                    VarRef::LocalPrimed(n.clone())
                } else {
                    VarRef::GlobalPrimed(n.clone())
                };
                let s = self.scaled(&[t]);
                Formula::eq(Term::Var(lhs), self.term(t, s)?)
            }
            SUpdate::Constraint(f) => self.formula(f)?,
        })
    }
}

fn lower(sys: SSystem) -> PResult<SystemModel> {
    let time_model = sys.time.unwrap_or(TimeModel::Untimed);
    let mut model = SystemModel::new(sys.name, time_model);
    model.globals.extend(sys.globals);
    model.channels = sys.channels;
    model.barriers = sys.barriers;
    model.ports = sys.ports;
    model.interactions = sys.interactions;
    for st in &sys.templates {
        let lw = Lower { time_model, locals: &st.locals };
        let mut t = ProcessTemplate::new(
            st.name.clone(),
            if st.replicated { Multiplicity::Replicated } else { Multiplicity::Singleton },
        );
        t.locals = st.locals.clone();
        t.init = lw.formula(&st.init)?;
        t.time_invariant = lw.formula(&st.tinv)?;
        for tr in &st.transitions {
            let guard = lw.formula(&tr.guard)?;
            let update = Formula::and(tr.updates.iter().map(|u| lw.update(u)).collect::<PResult<Vec<_>>>()?);
            t.transitions.push(GuardedTransition::new(tr.kind.clone(), guard, update));
        }
        model.templates.push(t);
    }
    let empty = Vec::new();
    for r in &sys.roles {
        let locals = sys.templates.iter().find(|t| t.name == r.template).map(|t| &t.locals).unwrap_or(&empty);
        let lw = Lower { time_model, locals };
        model.error.roles.push(ErrorRole {
            name: r.name.clone(),
            template: r.template.clone(),
            constraint: lw.formula(&r.constraint)?,
        });
    }
    Ok(model)
}

/// Parses a model from source text.
pub fn parse_model(text: &str) -> Result<SystemModel, ParseError> {
    parse_model_named(text, None)
}

/// Parses a model, tagging error spans with `file`.
pub fn parse_model_named(text: &str, file: Option<&str>) -> Result<SystemModel, ParseError> {
    let res = lex(text).and_then(|toks| {
        let mut p = Parser { toks, pos: 0 };
        p.system()
    });
    res.and_then(lower).map_err(|mut e| {
        e.span.file = file.map(str::to_string);
        e
    })
}

// ---------------------------------------------------------------------------
// Printing

fn write_update(out: &mut String, update: &Constraint) {
    for (i, c) in update.conjuncts().into_iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        match c {
            Formula::Cmp(
                CmpOp::Eq,
                Term::Var(v @ (VarRef::LocalPrimed(n) | VarRef::GlobalPrimed(n))),
                rhs,
            ) if v.is_primed() && !rhs_has_primed(rhs) => {
                out.push_str(&format!("{n} := {rhs}"));
            }
            other => out.push_str(&other.to_string()),
        }
    }
}

fn rhs_has_primed(t: &Term<VarRef>) -> bool {
    let mut hit = false;
    t.for_each_var(&mut |v| hit |= v.is_primed());
    hit
}

fn kind_text(k: &TransitionKind) -> String {
    match k {
        TransitionKind::Local => "local".into(),
        TransitionKind::Send(c) => format!("send {c}"),
        TransitionKind::Receive(c) => format!("recv {c}"),
        TransitionKind::Barrier(b) => format!("sync {b}"),
        TransitionKind::Port(p) => format!("port {p}"),
    }
}

/// Prints a model in the surface syntax; [`parse_model`] reads it back to
/// an equal model.
pub fn print_model(model: &SystemModel) -> String {
    let mut out = String::new();
    out.push_str(&format!("system {} {{\n", model.name));
    match model.time_model {
        TimeModel::Untimed => {}
        TimeModel::Discrete => out.push_str("  time discrete;\n"),
        TimeModel::DenseRational => out.push_str("  time dense;\n"),
    }
    let user_globals: Vec<&str> =
        model.globals.iter().filter(|g| !model.is_reserved_global(g)).map(String::as_str).collect();
    if !user_globals.is_empty() {
        out.push_str(&format!("  globals {};\n", user_globals.join(", ")));
    }
    if !model.channels.is_empty() {
        out.push_str(&format!("  channel {};\n", model.channels.join(", ")));
    }
    if !model.barriers.is_empty() {
        out.push_str(&format!("  barrier {};\n", model.barriers.join(", ")));
    }
    for p in &model.ports {
        out.push_str(&format!("  port {} of {};\n", p.name, p.owner));
    }
    for i in &model.interactions {
        out.push_str(&format!("  interaction {{ {} }};\n", i.join(", ")));
    }
    for t in &model.templates {
        out.push('\n');
        let rep = if t.is_replicated() { " replicated" } else { "" };
        out.push_str(&format!("  template {}{} {{\n", t.name, rep));
        let mut i = 0;
        while i < t.locals.len() {
            let clock = t.locals[i].is_clock;
            let mut names = Vec::new();
            while i < t.locals.len() && t.locals[i].is_clock == clock {
                names.push(t.locals[i].name.as_str());
                i += 1;
            }
            let kw = if clock { "clock" } else { "locals" };
            out.push_str(&format!("    {kw} {};\n", names.join(", ")));
        }
        if t.init != Formula::True {
            out.push_str(&format!("    init {};\n", t.init));
        }
        if t.time_invariant != Formula::True {
            out.push_str(&format!("    tinv {};\n", t.time_invariant));
        }
        for tr in &t.transitions {
            out.push_str(&format!("    trans {}", kind_text(&tr.kind)));
            if tr.guard != Formula::True {
                out.push_str(&format!(" when {}", tr.guard));
            }
            if tr.update != Formula::True {
                out.push_str(" do ");
                write_update(&mut out, &tr.update);
            }
            out.push_str(";\n");
        }
        out.push_str("  }\n");
    }
    if !model.error.is_empty() {
        out.push_str("\n  error {\n");
        for r in &model.error.roles {
            out.push_str(&format!("    {}: {}", r.name, r.template));
            if r.constraint != Formula::True {
                out.push_str(&format!(" when {}", r.constraint));
            }
            out.push_str(";\n");
        }
        out.push_str("  }\n");
    }
    out.push_str("}\n");
    out
}

/// Names used anywhere in a model, for generators that must avoid clashes.
pub fn declared_names(model: &SystemModel) -> BTreeSet<String> {
    let mut out: BTreeSet<String> = model.globals.iter().cloned().collect();
    out.extend(model.channels.iter().cloned());
    out.extend(model.barriers.iter().cloned());
    out.extend(model.ports.iter().map(|p| p.name.clone()));
    for t in &model.templates {
        out.insert(t.name.clone());
        out.extend(t.locals.iter().map(|l| l.name.clone()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = r#"
        // two processes sharing a flag
        system toy {
          globals flag;
          template a { locals s; init s = 0 && flag = 0;
            trans local when s = 0 && flag = 0 do s := 1, flag := 1; }
          template b { locals s; init s = 0;
            trans local when s = 0 && flag = 0 do s := 1, flag := 1; /* same */ }
          error { x: a when s = 1; y: b when s = 1; }
        }
    "#;

    #[test]
    fn parses_toy() {
        let m = parse_model(TOY).unwrap();
        assert_eq!(m.templates.len(), 2);
        assert_eq!(m.globals, vec!["flag".to_string()]);
        let u = &m.templates[0].transitions[0].update;
        assert_eq!(u.to_string(), "s' = 1 && flag' = 1");
        assert_eq!(m.error.roles[1].constraint.to_string(), "s = 1");
    }

    #[test]
    fn empty_input_fails_at_origin() {
        let e = parse_model("").unwrap_err();
        assert_eq!((e.span.start_line, e.span.start_col), (1, 1));
    }

    #[test]
    fn round_trip_toy() {
        let m = parse_model(TOY).unwrap();
        let printed = print_model(&m);
        assert_eq!(parse_model(&printed).unwrap(), m, "{printed}");
    }

    #[test]
    fn clock_desugaring() {
        let m = parse_model(
            "system c { time discrete; template t { clock x; tinv val(x) <= 5; \
             trans local when val(x) >= 3 do reset x; } }",
        )
        .unwrap();
        let t = &m.templates[0];
        assert_eq!(t.time_invariant.to_string(), "C - x <= 5");
        assert_eq!(t.transitions[0].update.to_string(), "x' = C");
    }

    #[test]
    fn dense_time_scales_clock_constants() {
        let m = parse_model(
            "system c { time dense; template t { clock x; locals k; \
             trans local when val(x) >= 3 && k = 3 do k := 2 * k; } }",
        )
        .unwrap();
        assert_eq!(m.templates[0].transitions[0].guard.to_string(), "C - x >= 3 * U && k = 3");
        assert_eq!(m.globals, vec!["C".to_string(), "U".to_string()]);
    }

    #[test]
    fn val_outside_timed_model_is_rejected() {
        let e = parse_model("system c { template t { clock x; tinv val(x) <= 1; } }").unwrap_err();
        assert!(e.message.contains("timed"), "{e}");
    }

    #[test]
    fn nonlinear_product_is_rejected() {
        let e = parse_model("system c { globals a, b; template t { init a * b = 1; } }").unwrap_err();
        assert!(e.message.contains("non-linear"));
        assert_eq!(e.span.start_line, 1);
    }

    #[test]
    fn parenthesized_formula_and_term() {
        let m = parse_model(
            "system c { globals a, b; template t { init (a + 1) * 2 <= b && (a = 0 || !(b = 1)) && 3 | a - b; } }",
        )
        .unwrap();
        assert_eq!(m.templates[0].init.to_string(), "2 * (a + 1) <= b && (a = 0 || !(b = 1)) && 3 | (a - b)");
    }

    #[test]
    fn literal_out_of_range() {
        let e =
            parse_model("system c { globals a; template t { init a = 99999999999999999999; } }").unwrap_err();
        assert!(e.message.contains("out of range"));
    }

    #[test]
    fn reserved_names() {
        assert!(parse_model("system c { globals self; }").is_err());
    }
}
