use crate::ast::*;
use crate::diag::{Code, Diagnostic};
use crate::value::Value;

use super::lexer::{Tok, Token};

/// Words that can never be used as identifiers.
pub const KEYWORDS: &[&str] = &[
    "if", "or", "true", "false", "not", "in", "avg", "sum", "min", "max", "median", "limit",
    "order", "top", "type", "card", "deg", "unique", "and", "pkey", "fdep", "sin", "cos", "relu",
    "softmax", "match", "case", "while", "UID", "round",
];

/// Reserved keywords with no production.
const UNIMPLEMENTED: &[&str] = &["while", "limit", "top", "UID", "round", "and"];

const MAX_DEPTH: usize = 200;

type PResult<T> = Result<T, Diagnostic>;

pub struct Parser<'s> {
    toks: Vec<Token>,
    pos: usize,
    depth: usize,
    src: &'s str,
}

impl<'s> Parser<'s> {
    pub fn new(toks: Vec<Token>, src: &'s str) -> Self {
        Parser {
            toks,
            pos: 0,
            depth: 0,
            src,
        }
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == t {
            self.bump();
            true
        } else {
            false
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn loc(&self) -> Loc {
        let t = &self.toks[self.pos];
        Loc::new(t.line, t.col)
    }

    fn error(&self, msg: impl Into<String>) -> Diagnostic {
        self.error_code(Code::Syntax, msg)
    }

    fn error_code(&self, code: Code, msg: impl Into<String>) -> Diagnostic {
        let t = &self.toks[self.pos];
        let excerpt = self
            .src
            .lines()
            .nth(t.line.saturating_sub(1) as usize)
            .unwrap_or("")
            .to_string();
        Diagnostic::error(code, msg)
            .at(t.line, t.col)
            .with_excerpt(excerpt)
    }

    fn unexpected(&self, wanted: &str) -> Diagnostic {
        if let Tok::Ident(s) = self.peek() {
            if UNIMPLEMENTED.contains(&s.as_str()) {
                return self.error_code(
                    Code::Unimplemented,
                    format!("keyword `{s}` is reserved but not implemented"),
                );
            }
        }
        self.error(format!("expected {wanted}, found {}", self.peek().describe()))
    }

    fn expect(&mut self, t: Tok) -> PResult<()> {
        if self.eat(&t) {
            Ok(())
        } else {
            Err(self.unexpected(&t.describe()))
        }
    }

    fn enter(&mut self) -> PResult<()> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            Err(self.error("nesting too deep"))
        } else {
            Ok(())
        }
    }

    fn leave(&mut self) {
        self.depth -= 1;
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                self.bump();
                Ok(s)
            }
            _ => Err(self.unexpected("an identifier")),
        }
    }

    // ---- statements ----

    pub fn program(&mut self) -> PResult<Program> {
        let mut prog = Program::default();
        while *self.peek() != Tok::Eof {
            let loc = self.loc();
            if let Some(mut rule) = self.try_rule(false)? {
                rule.loc = loc;
                prog.rules.push(rule);
            } else {
                let constraint = self.constraint()?;
                prog.declarations.push(Declaration { constraint, loc });
            }
        }
        Ok(prog)
    }

    fn action(&self) -> Option<Action> {
        Some(match self.peek() {
            Tok::Define => Action::Assign,
            Tok::Append => Action::Append,
            Tok::Remove => Action::Remove,
            Tok::Replace => Action::Replace,
            _ => return None,
        })
    }

    /// Parse `head action body` if the input starts with one; otherwise
    /// restore the position and return `None`.
    fn try_rule(&mut self, nested: bool) -> PResult<Option<Rule>> {
        let start = self.pos;
        let depth = self.depth;
        let loc = self.loc();
        let head = match self.peek() {
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => match self.access_tail() {
                Ok(a) => a,
                Err(_) => {
                    self.pos = start;
                    self.depth = depth;
                    return Ok(None);
                }
            },
            _ => return Ok(None),
        };
        let Some(action) = self.action() else {
            self.pos = start;
            return Ok(None);
        };
        if head.args.is_empty() && !nested {
            self.pos = start;
            return Err(self.error("a rule head needs at least one argument list"));
        }
        self.bump();
        let body_start = self.pos;
        if let Ok(e) = self.expr() {
            if self.is_kw("if") {
                self.bump();
                let constraint = self.constraint()?;
                let mut r = Rule::new(head, Some(e), constraint, action);
                r.loc = loc;
                return Ok(Some(r));
            }
        }
        self.pos = body_start;
        self.depth = depth;
        let constraint = self.constraint()?;
        let mut r = Rule::new(head, None, constraint, action);
        r.loc = loc;
        Ok(Some(r))
    }

    /// `X(args)...(args)` after checking the identifier is not a keyword.
    fn access_tail(&mut self) -> PResult<Access> {
        let name = self.ident()?;
        let mut args = Vec::new();
        while *self.peek() == Tok::LParen {
            args.push(self.arg_list()?);
        }
        Ok(Access::new(name, args))
    }

    fn arg_list(&mut self) -> PResult<Vec<Expr>> {
        self.expect(Tok::LParen)?;
        let mut out = Vec::new();
        if self.eat(&Tok::RParen) {
            return Ok(out);
        }
        loop {
            out.push(self.expr()?);
            if self.eat(&Tok::RParen) {
                return Ok(out);
            }
            self.expect(Tok::Comma)?;
        }
    }

    // ---- constraints ----

    pub fn constraint(&mut self) -> PResult<Constraint> {
        self.enter()?;
        let first = self.conjunction()?;
        let mut parts = vec![first];
        while self.is_kw("or") {
            self.bump();
            parts.push(self.conjunction()?);
        }
        self.leave();
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Constraint::Or(parts)
        })
    }

    fn conjunction(&mut self) -> PResult<Constraint> {
        let mut parts = vec![self.unary_constraint()?];
        while *self.peek() == Tok::Comma {
            self.bump();
            parts.push(self.unary_constraint()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Constraint::And(parts)
        })
    }

    fn unary_constraint(&mut self) -> PResult<Constraint> {
        if self.is_kw("not") {
            self.bump();
            self.expect(Tok::LParen)?;
            let inner = self.constraint()?;
            self.expect(Tok::RParen)?;
            return Ok(Constraint::not(inner));
        }
        self.primary_constraint()
    }

    /// Index of the token after the parenthesis matching the one at `pos`.
    fn after_matching_paren(&self) -> usize {
        let mut depth = 0usize;
        let mut i = self.pos;
        while i < self.toks.len() {
            match self.toks[i].tok {
                Tok::LParen => depth += 1,
                Tok::RParen => {
                    depth -= 1;
                    if depth == 0 {
                        return i + 1;
                    }
                }
                Tok::Eof => return i,
                _ => {}
            }
            i += 1;
        }
        self.toks.len() - 1
    }

    fn primary_constraint(&mut self) -> PResult<Constraint> {
        match self.peek().clone() {
            Tok::LParen => {
                let after = self.after_matching_paren();
                let follows_expr = matches!(
                    self.toks[after.min(self.toks.len() - 1)].tok,
                    Tok::Eq | Tok::Ne | Tok::Lt | Tok::Le | Tok::Gt | Tok::Ge
                        | Tok::Plus | Tok::Minus | Tok::Star | Tok::Slash
                ) || matches!(&self.toks[after.min(self.toks.len() - 1)].tok, Tok::Ident(s) if s == "in");
                if follows_expr {
                    return self.expr_constraint();
                }
                self.enter()?;
                self.bump();
                let c = if let Some(rule) = self.try_rule(true)? {
                    Constraint::Nested(Box::new(rule))
                } else {
                    Constraint::group(self.constraint()?)
                };
                self.expect(Tok::RParen)?;
                self.leave();
                Ok(c)
            }
            Tok::Ident(s) if s == "match" => self.match_constraint(),
            Tok::Ident(s) if CEI_NAMES.contains(&s.as_str()) => {
                self.bump();
                if *self.peek() != Tok::LParen {
                    return Err(self.unexpected("`(`"));
                }
                let mut args = Vec::new();
                while *self.peek() == Tok::LParen {
                    args.push(self.arg_list()?);
                }
                Ok(Constraint::Cei(CeiCall::new(s, args)))
            }
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) && *self.peek_at(1) == Tok::Colon => {
                self.bump();
                self.bump();
                let ty = match self.peek().clone() {
                    Tok::Ident(t) => {
                        self.bump();
                        t
                    }
                    _ => return Err(self.unexpected("a type name")),
                };
                Ok(Constraint::Typed(s, ty))
            }
            _ => self.expr_constraint(),
        }
    }

    /// An atom, comparison, chain or `in`-list starting with an expression.
    fn expr_constraint(&mut self) -> PResult<Constraint> {
        let lhs = self.expr()?;
        if self.is_kw("in") {
            self.bump();
            self.expect(Tok::LBrack)?;
            let mut items = Vec::new();
            if !self.eat(&Tok::RBrack) {
                loop {
                    items.push(self.expr()?);
                    if self.eat(&Tok::RBrack) {
                        break;
                    }
                    self.expect(Tok::Comma)?;
                }
            }
            return Ok(Constraint::In(lhs, items));
        }
        let mut rest = Vec::new();
        while let Some(op) = self.cmp_op() {
            self.bump();
            rest.push((op, self.expr()?));
        }
        match (rest.len(), lhs) {
            (0, Expr::Access(a)) => Ok(Constraint::Atom(a)),
            (0, _) => Err(self.unexpected("a comparison operator")),
            (1, lhs) => {
                let (op, rhs) = rest.pop().unwrap();
                Ok(Constraint::Cmp(lhs, op, rhs))
            }
            (_, lhs) => Ok(Constraint::Chain(lhs, rest)),
        }
    }

    fn cmp_op(&self) -> Option<CmpOp> {
        Some(match self.peek() {
            Tok::Eq => CmpOp::Eq,
            Tok::Ne => CmpOp::Ne,
            Tok::Lt => CmpOp::Lt,
            Tok::Le => CmpOp::Le,
            Tok::Gt => CmpOp::Gt,
            Tok::Ge => CmpOp::Ge,
            _ => return None,
        })
    }

    fn match_constraint(&mut self) -> PResult<Constraint> {
        self.enter()?;
        self.bump();
        let scrutinee = self.expr()?;
        let mut cases = Vec::new();
        while self.is_kw("case") {
            self.bump();
            let pat = self.expr()?;
            self.expect(Tok::Arrow)?;
            let body = self.conjunction()?;
            cases.push((pat, body));
            if self.eat(&Tok::Semi) && !self.is_kw("case") {
                break;
            }
        }
        if cases.is_empty() {
            return Err(self.unexpected("`case`"));
        }
        self.leave();
        Ok(Constraint::Match(scrutinee, cases))
    }

    // ---- expressions ----

    pub fn expr(&mut self) -> PResult<Expr> {
        self.enter()?;
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::binary(lhs, op, rhs);
        }
        self.leave();
        Ok(lhs)
    }

    fn term(&mut self) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => break,
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::binary(lhs, op, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Expr> {
        if *self.peek() == Tok::Minus {
            self.bump();
            match self.peek().clone() {
                Tok::Int(digits) => {
                    self.bump();
                    let v: i64 = format!("-{digits}")
                        .parse()
                        .map_err(|_| self.error(format!("integer literal -{digits} out of range")))?;
                    return Ok(Expr::Lit(Value::Int(v)));
                }
                Tok::Float(f) => {
                    self.bump();
                    return Ok(Expr::Lit(Value::Float(-f)));
                }
                _ => {}
            }
            self.enter()?;
            let inner = self.unary()?;
            self.leave();
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.primary_expr()
    }

    fn primary_expr(&mut self) -> PResult<Expr> {
        match self.peek().clone() {
            Tok::Int(digits) => {
                let v: i64 = digits
                    .parse()
                    .map_err(|_| self.error(format!("integer literal {digits} out of range")))?;
                self.bump();
                Ok(Expr::Lit(Value::Int(v)))
            }
            Tok::Float(f) => {
                self.bump();
                Ok(Expr::Lit(Value::Float(f)))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::Lit(Value::Str(s)))
            }
            Tok::Underscore => {
                self.bump();
                Ok(Expr::Wildcard)
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(s) if s == "true" || s == "false" => {
                self.bump();
                Ok(Expr::Lit(Value::Bool(s == "true")))
            }
            Tok::Ident(s) if EEI_NAMES.contains(&s.as_str()) => {
                self.bump();
                let args = self.arg_list()?;
                Ok(Expr::Call(s, args))
            }
            Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) => {
                let a = self.access_tail()?;
                Ok(if a.args.is_empty() {
                    Expr::Var(a.relation)
                } else {
                    Expr::Access(a)
                })
            }
            _ => Err(self.unexpected("an expression")),
        }
    }
}
