//! A small SQL subset: select-project-join queries with grouping,
//! ordering and limits, translated to and from single Hojabr rules.

use std::collections::BTreeMap;
use std::fmt;

use crate::ast::*;
use crate::diag::{Code, Diagnostic};
use crate::slang::require;
use crate::value::Value;

/// Table name -> column names.
pub type SqlSchema = BTreeMap<String, Vec<String>>;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ColumnRef {
    /// Table name or alias.
    pub table: Option<String>,
    pub column: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SelectItem {
    Column(ColumnRef),
    Aggregate(String, ColumnRef),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRef {
    pub table: String,
    pub alias: Option<String>,
}

impl TableRef {
    pub fn name(&self) -> &str {
        self.alias.as_deref().unwrap_or(&self.table)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Column(ColumnRef),
    Lit(Value),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub lhs: Operand,
    pub op: CmpOp,
    pub rhs: Operand,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SqlQuery {
    pub select: Vec<SelectItem>,
    pub from: Vec<TableRef>,
    pub filter: Vec<Predicate>,
    pub group_by: Vec<ColumnRef>,
    pub order_by: Vec<ColumnRef>,
    pub limit: Option<u64>,
}

/// The SQL side and the Hojabr side of each construct. Both translation
/// directions read these tables.
pub const AGGREGATES: &[(&str, &str)] = &[("SUM", "sum"), ("AVG", "avg"), ("MIN", "min"), ("MAX", "max")];
pub const COMPARISONS: &[(&str, CmpOp)] = &[
    ("=", CmpOp::Eq),
    ("<>", CmpOp::Ne),
    ("<=", CmpOp::Le),
    (">=", CmpOp::Ge),
    ("<", CmpOp::Lt),
    (">", CmpOp::Gt),
];

fn outside(msg: impl fmt::Display) -> Diagnostic {
    Diagnostic::error(Code::OutsideSqlCore, format!("outside sql-core: {msg}"))
}

// ---------------------------------------------------------------- text

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Num(Value),
    Str(String),
    Sym(&'static str),
}

fn lex(src: &str) -> Result<Vec<Tok>, Diagnostic> {
    let mut out = Vec::new();
    let cs: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < cs.len() {
        let c = cs[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_alphabetic() || c == '_' {
            let s = i;
            while i < cs.len() && (cs[i].is_alphanumeric() || cs[i] == '_') {
                i += 1;
            }
            out.push(Tok::Word(cs[s..i].iter().collect()));
        } else if c.is_ascii_digit() || (c == '-' && cs.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let s = i;
            i += 1;
            while i < cs.len() && (cs[i].is_ascii_digit() || cs[i] == '.') {
                i += 1;
            }
            let text: String = cs[s..i].iter().collect();
            let v = if text.contains('.') {
                Value::Float(text.parse().map_err(|_| outside(format!("bad number {text}")))?)
            } else {
                Value::Int(text.parse().map_err(|_| outside(format!("bad number {text}")))?)
            };
            out.push(Tok::Num(v));
        } else if c == '\'' {
            let mut s = String::new();
            i += 1;
            loop {
                match cs.get(i) {
                    None => return Err(outside("unterminated string")),
                    Some('\'') if cs.get(i + 1) == Some(&'\'') => {
                        s.push('\'');
                        i += 2;
                    }
                    Some('\'') => {
                        i += 1;
                        break;
                    }
                    Some(ch) => {
                        s.push(*ch);
                        i += 1;
                    }
                }
            }
            out.push(Tok::Str(s));
        } else {
            let two: String = cs[i..(i + 2).min(cs.len())].iter().collect();
            let sym = ["<>", "!=", "<=", ">="]
                .into_iter()
                .find(|s| *s == two)
                .or_else(|| ["=", "<", ">", ",", ".", "(", ")", ";", "*"].into_iter().find(|s| s.starts_with(c)));
            let Some(sym) = sym else {
                return Err(outside(format!("unexpected character `{c}`")));
            };
            out.push(Tok::Sym(if sym == "!=" { "<>" } else { sym }));
            i += sym.len();
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

const KEYWORDS: &[&str] = &["SELECT", "FROM", "WHERE", "GROUP", "BY", "ORDER", "LIMIT", "AND", "AS"];

impl Parser {
    fn peek_kw(&self, kw: &str) -> bool {
        matches!(self.toks.get(self.pos), Some(Tok::Word(w)) if w.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        let hit = self.peek_kw(kw);
        self.pos += hit as usize;
        hit
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), Diagnostic> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(outside(format!("expected {kw} near {}", self.here())))
        }
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        let hit = matches!(self.toks.get(self.pos), Some(Tok::Sym(x)) if *x == s);
        self.pos += hit as usize;
        hit
    }

    fn here(&self) -> String {
        match self.toks.get(self.pos) {
            None => "end of input".into(),
            Some(Tok::Word(w)) => format!("`{w}`"),
            Some(Tok::Num(v)) => format!("`{v}`"),
            Some(Tok::Str(s)) => format!("'{s}'"),
            Some(Tok::Sym(s)) => format!("`{s}`"),
        }
    }

    fn ident(&mut self) -> Result<String, Diagnostic> {
        match self.toks.get(self.pos) {
            Some(Tok::Word(w)) if !KEYWORDS.iter().any(|k| w.eq_ignore_ascii_case(k)) => {
                self.pos += 1;
                Ok(w.clone())
            }
            _ => Err(outside(format!("expected a name near {}", self.here()))),
        }
    }

    fn column(&mut self) -> Result<ColumnRef, Diagnostic> {
        let first = self.ident()?;
        if self.eat_sym(".") {
            Ok(ColumnRef {
                table: Some(first),
                column: self.ident()?,
            })
        } else {
            Ok(ColumnRef {
                table: None,
                column: first,
            })
        }
    }

    fn item(&mut self) -> Result<SelectItem, Diagnostic> {
        if let Some(Tok::Word(w)) = self.toks.get(self.pos) {
            if matches!(self.toks.get(self.pos + 1), Some(Tok::Sym("("))) {
                let Some((sql, _)) = AGGREGATES.iter().find(|(s, _)| w.eq_ignore_ascii_case(s)) else {
                    return Err(outside(format!("function {w}")));
                };
                self.pos += 2;
                let col = self.column()?;
                if !self.eat_sym(")") {
                    return Err(outside(format!("aggregate over an expression near {}", self.here())));
                }
                return Ok(SelectItem::Aggregate(sql.to_string(), col));
            }
        }
        if self.eat_sym("*") {
            return Err(outside("SELECT *"));
        }
        Ok(SelectItem::Column(self.column()?))
    }

    fn operand(&mut self) -> Result<Operand, Diagnostic> {
        match self.toks.get(self.pos).cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Operand::Lit(v))
            }
            Some(Tok::Str(s)) => {
                self.pos += 1;
                Ok(Operand::Lit(Value::Str(s)))
            }
            _ => Ok(Operand::Column(self.column()?)),
        }
    }

    fn predicate(&mut self) -> Result<Predicate, Diagnostic> {
        let lhs = self.operand()?;
        let op = match self.toks.get(self.pos) {
            Some(Tok::Sym(s)) => COMPARISONS.iter().find(|(t, _)| t == s).map(|(_, op)| *op),
            _ => None,
        }
        .ok_or_else(|| outside(format!("expected a comparison near {}", self.here())))?;
        self.pos += 1;
        let rhs = self.operand()?;
        Ok(Predicate { lhs, op, rhs })
    }

    fn list<T>(&mut self, mut f: impl FnMut(&mut Self) -> Result<T, Diagnostic>) -> Result<Vec<T>, Diagnostic> {
        let mut out = vec![f(self)?];
        while self.eat_sym(",") {
            out.push(f(self)?);
        }
        Ok(out)
    }

    fn query(&mut self) -> Result<SqlQuery, Diagnostic> {
        self.expect_kw("SELECT")?;
        if self.peek_kw("DISTINCT") {
            return Err(outside("DISTINCT"));
        }
        let select = self.list(Self::item)?;
        self.expect_kw("FROM")?;
        let from = self.list(|p| {
            let table = p.ident()?;
            let bare = |p: &Self| matches!(p.toks.get(p.pos), Some(Tok::Word(w)) if !KEYWORDS.iter().any(|k| w.eq_ignore_ascii_case(k)));
            let alias = if p.eat_kw("AS") || bare(p) {
                Some(p.ident()?)
            } else {
                None
            };
            Ok(TableRef { table, alias })
        })?;
        let mut q = SqlQuery {
            select,
            from,
            ..SqlQuery::default()
        };
        if self.eat_kw("WHERE") {
            q.filter.push(self.predicate()?);
            while self.eat_kw("AND") {
                q.filter.push(self.predicate()?);
            }
        }
        if self.eat_kw("GROUP") {
            self.expect_kw("BY")?;
            q.group_by = self.list(Self::column)?;
        }
        if self.eat_kw("ORDER") {
            self.expect_kw("BY")?;
            q.order_by = self.list(Self::column)?;
        }
        if self.eat_kw("LIMIT") {
            match self.toks.get(self.pos) {
                Some(Tok::Num(Value::Int(n))) if *n >= 0 => {
                    q.limit = Some(*n as u64);
                    self.pos += 1;
                }
                _ => return Err(outside(format!("LIMIT needs a count near {}", self.here()))),
            }
        }
        self.eat_sym(";");
        if self.pos < self.toks.len() {
            return Err(outside(format!("unsupported clause near {}", self.here())));
        }
        Ok(q)
    }
}

pub fn parse_sql(src: &str) -> Result<SqlQuery, Diagnostic> {
    Parser {
        toks: lex(src)?,
        pos: 0,
    }
    .query()
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.table {
            Some(t) => write!(f, "{t}.{}", self.column),
            None => f.write_str(&self.column),
        }
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Column(c) => c.fmt(f),
            Operand::Lit(Value::Str(s)) => write!(f, "'{}'", s.replace('\'', "''")),
            Operand::Lit(v) => v.fmt(f),
        }
    }
}

impl fmt::Display for SqlQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |xs: Vec<String>| xs.join(", ");
        let items = self
            .select
            .iter()
            .map(|s| match s {
                SelectItem::Column(c) => c.to_string(),
                SelectItem::Aggregate(a, c) => format!("{}({c})", a.to_lowercase()),
            })
            .collect();
        write!(f, "SELECT {} FROM ", join(items))?;
        let tables = self
            .from
            .iter()
            .map(|t| match &t.alias {
                Some(a) => format!("{} {a}", t.table),
                None => t.table.clone(),
            })
            .collect();
        f.write_str(&join(tables))?;
        if !self.filter.is_empty() {
            let preds: Vec<String> = self
                .filter
                .iter()
                .map(|p| {
                    let sym = COMPARISONS.iter().find(|(_, op)| *op == p.op).unwrap().0;
                    format!("{} {sym} {}", p.lhs, p.rhs)
                })
                .collect();
            write!(f, " WHERE {}", preds.join(" AND "))?;
        }
        if !self.group_by.is_empty() {
            write!(f, " GROUP BY {}", join(self.group_by.iter().map(|c| c.to_string()).collect()))?;
        }
        if !self.order_by.is_empty() {
            write!(f, " ORDER BY {}", join(self.order_by.iter().map(|c| c.to_string()).collect()))?;
        }
        if let Some(n) = self.limit {
            write!(f, " LIMIT {n}")?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------- to Hojabr

/// Translate `q` into the single rule `head(...) := ...`.
pub fn sql_to_hojabr(q: &SqlQuery, schema: &SqlSchema, head: &str) -> Result<Program, Diagnostic> {
    // Column variables: the column name, primed on collision.
    let mut taken: Vec<String> = Vec::new();
    let mut var_of: BTreeMap<(String, String), String> = BTreeMap::new();
    let mut atoms = Vec::new();
    for (k, t) in q.from.iter().enumerate() {
        if q.from[..k].iter().any(|o| o.name() == t.name()) {
            return Err(outside(format!("table name {} used twice without an alias", t.name())));
        }
        let cols = schema
            .get(&t.table)
            .ok_or_else(|| Diagnostic::error(Code::UndeclaredRelation, format!("unknown table {}", t.table)))?;
        let mut args = Vec::new();
        for c in cols {
            let mut v = c.clone();
            while taken.contains(&v) {
                v.push('\'');
            }
            taken.push(v.clone());
            var_of.insert((t.name().to_string(), c.clone()), v.clone());
            args.push(Expr::var(v));
        }
        atoms.push(Constraint::Atom(Access::new(t.table.clone(), vec![args])));
    }
    let resolve = |c: &ColumnRef| -> Result<String, Diagnostic> {
        let hits: Vec<&String> = var_of
            .iter()
            .filter(|((t, col), _)| *col == c.column && c.table.as_ref().is_none_or(|want| want == t))
            .map(|(_, v)| v)
            .collect();
        match hits.as_slice() {
            [v] => Ok((*v).clone()),
            [] => Err(Diagnostic::error(Code::UndeclaredRelation, format!("unknown column {c}"))),
            _ => Err(outside(format!("ambiguous column {c}"))),
        }
    };
    let operand = |o: &Operand| -> Result<Expr, Diagnostic> {
        match o {
            Operand::Column(c) => Ok(Expr::Var(resolve(c)?)),
            Operand::Lit(v) => Ok(Expr::Lit(v.clone())),
        }
    };

    let mut keys = Vec::new();
    let mut value = None;
    for (k, item) in q.select.iter().enumerate() {
        match item {
            SelectItem::Column(c) => {
                if value.is_some() {
                    return Err(outside("columns after the aggregate"));
                }
                keys.push(Expr::Var(resolve(c)?));
            }
            SelectItem::Aggregate(a, c) => {
                if k + 1 != q.select.len() {
                    return Err(outside("more than one aggregate, or an aggregate before a column"));
                }
                let eei = AGGREGATES.iter().find(|(s, _)| s.eq_ignore_ascii_case(a)).unwrap().1;
                value = Some(Expr::Call(eei.into(), vec![Expr::Var(resolve(c)?)]));
            }
        }
    }
    let grouped: Vec<String> = q.group_by.iter().map(resolve).collect::<Result<_, _>>()?;
    let selected: Vec<String> = keys.iter().filter_map(|k| k.as_var().map(str::to_string)).collect();
    if value.is_some() {
        let mut g = grouped.clone();
        let mut s = selected.clone();
        g.sort();
        s.sort();
        if g != s {
            return Err(outside("GROUP BY must list exactly the selected columns"));
        }
    } else if !grouped.is_empty() {
        return Err(outside("GROUP BY without an aggregate"));
    }

    let mut body = atoms;
    for p in &q.filter {
        body.push(Constraint::group(Constraint::cmp(operand(&p.lhs)?, p.op, operand(&p.rhs)?)));
    }
    if !q.order_by.is_empty() {
        let cols: Vec<Expr> = q.order_by.iter().map(|c| resolve(c).map(Expr::Var)).collect::<Result<_, _>>()?;
        if cols.iter().any(|c| !keys.contains(c)) {
            return Err(outside("ORDER BY a column that is not selected"));
        }
        body.push(Constraint::cei("order", vec![cols]));
    }
    if let Some(n) = q.limit {
        body.push(Constraint::cei(
            "card",
            vec![vec![Expr::var(head), Expr::Lit(Value::Int(n as i64))]],
        ));
    }
    let rule = Rule::new(Access::new(head, vec![keys]), value, Constraint::and(body), Action::Assign);
    Ok(Program::new(vec![rule]))
}

// -------------------------------------------------------- from Hojabr

/// Translate a single sql-core rule back into a query.
pub fn hojabr_to_sql(p: &Program, schema: &SqlSchema) -> Result<SqlQuery, Vec<Diagnostic>> {
    let p = desugar(p).map_err(|d| vec![d])?;
    require(&p, "sql-core").map_err(|ds| {
        ds.into_iter()
            .map(|d| Diagnostic {
                code: Code::OutsideSqlCore,
                message: format!("outside sql-core: {}", d.message),
                ..d
            })
            .collect::<Vec<_>>()
    })?;
    let [rule] = p.rules.as_slice() else {
        return Err(vec![outside(format!("expected one rule, found {}", p.rules.len()))]);
    };
    let one = |d: Diagnostic| vec![d];
    let mut atoms = Vec::new();
    let mut preds = Vec::new();
    let mut order = Vec::new();
    let mut limit = None;
    for c in rule.constraint.conjuncts() {
        match c.ungroup() {
            Constraint::Atom(a) => atoms.push(a.clone()),
            Constraint::Cmp(l, op, r) => preds.push((l.clone(), *op, r.clone())),
            Constraint::Cei(call) if call.name == "order" => order.extend(call.args.iter().flatten().cloned()),
            Constraint::Cei(call) if call.name == "card" => {
                if let [Expr::Lit(Value::Int(n))] = call.value_args().as_slice() {
                    limit = Some(*n as u64);
                }
            }
            other => return Err(one(outside(other))),
        }
    }
    // Table references, aliased when a table occurs more than once.
    let mut from = Vec::new();
    for (k, a) in atoms.iter().enumerate() {
        let repeated = atoms.iter().filter(|b| b.relation == a.relation).count() > 1;
        let nth = atoms[..k].iter().filter(|b| b.relation == a.relation).count() + 1;
        from.push(TableRef {
            table: a.relation.clone(),
            alias: repeated.then(|| format!("{}_{nth}", a.relation)),
        });
    }
    let qualify = from.len() > 1;
    let mut home: BTreeMap<String, ColumnRef> = BTreeMap::new();
    let mut filter = Vec::new();
    for (a, t) in atoms.iter().zip(&from) {
        let cols = schema
            .get(&a.relation)
            .ok_or_else(|| one(Diagnostic::error(Code::UndeclaredRelation, format!("unknown table {}", a.relation))))?;
        if cols.len() != a.arity() {
            return Err(one(Diagnostic::error(
                Code::ArityMismatch,
                format!("{} has {} columns, atom has {}", a.relation, cols.len(), a.arity()),
            )));
        }
        for (e, col) in a.flat_args().zip(cols) {
            let cref = ColumnRef {
                table: qualify.then(|| t.name().to_string()),
                column: col.clone(),
            };
            match e {
                Expr::Var(v) => match home.get(v) {
                    Some(first) => filter.push(Predicate {
                        lhs: Operand::Column(first.clone()),
                        op: CmpOp::Eq,
                        rhs: Operand::Column(cref),
                    }),
                    None => {
                        home.insert(v.clone(), cref);
                    }
                },
                Expr::Lit(v) => filter.push(Predicate {
                    lhs: Operand::Column(cref),
                    op: CmpOp::Eq,
                    rhs: Operand::Lit(v.clone()),
                }),
                Expr::Wildcard => {}
                other => return Err(one(outside(other))),
            }
        }
    }
    let col = |e: &Expr| -> Result<ColumnRef, Vec<Diagnostic>> {
        e.as_var()
            .and_then(|v| home.get(v).cloned())
            .ok_or_else(|| one(outside(format!("{e} is not a column"))))
    };
    let operand = |e: &Expr| -> Result<Operand, Vec<Diagnostic>> {
        match e {
            Expr::Lit(v) => Ok(Operand::Lit(v.clone())),
            other => col(other).map(Operand::Column),
        }
    };
    for (l, op, r) in &preds {
        filter.push(Predicate {
            lhs: operand(l)?,
            op: *op,
            rhs: operand(r)?,
        });
    }
    let mut select: Vec<SelectItem> = rule.head.flat_args().map(|e| col(e).map(SelectItem::Column)).collect::<Result<_, _>>()?;
    let mut group_by = Vec::new();
    if let Some(Expr::Call(name, args)) = &rule.expr {
        let sql = AGGREGATES.iter().find(|(_, h)| h == name).unwrap().0;
        group_by = rule.head.flat_args().map(col).collect::<Result<_, _>>()?;
        select.push(SelectItem::Aggregate(sql.to_string(), col(&args[0])?));
    } else if let Some(e) = &rule.expr {
        return Err(one(outside(format!("head value {e}"))));
    }
    Ok(SqlQuery {
        select,
        from,
        filter,
        group_by,
        order_by: order.iter().map(col).collect::<Result<_, _>>()?,
        limit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slang::canonical;
    use crate::syntax::parse;

    fn schema() -> SqlSchema {
        [("R", vec!["a", "b"]), ("S", vec!["b", "c"])]
            .into_iter()
            .map(|(t, cs)| (t.to_string(), cs.into_iter().map(String::from).collect()))
            .collect()
    }

    fn to_h(sql: &str, s: &SqlSchema) -> Program {
        sql_to_hojabr(&parse_sql(sql).unwrap(), s, "Q").unwrap()
    }

    fn same(p: &Program, src: &str) {
        let want = desugar(&parse(src).unwrap()).unwrap();
        assert_eq!(canonical(&desugar(p).unwrap()), canonical(&want), "\n{p}");
    }

    #[test]
    fn join_query() {
        let p = to_h("SELECT R.a, S.c FROM R, S WHERE R.b = S.b", &schema());
        same(&p, "Q(a,c) := R(a,b), S(b',c), (b=b')");
    }

    #[test]
    fn grouped_sum() {
        let s: SqlSchema = [("R".to_string(), vec!["a".to_string(), "v".to_string()])].into();
        same(&to_h("SELECT a, sum(v) FROM R GROUP BY a", &s), "Q(a) := sum(v) if R(a,v)");
    }

    #[test]
    fn order_and_limit() {
        let p = to_h("select a, b from R order by a limit 2", &schema());
        same(&p, "Q(a,b) := R(a,b), order(a), card(Q,2)");
    }

    #[test]
    fn reverse_direction() {
        let p = parse("Q(a,b) := R(a,b)").unwrap();
        assert_eq!(hojabr_to_sql(&p, &schema()).unwrap().to_string(), "SELECT a, b FROM R");
        let neg = parse("Q(a) := R(a,b), not(S(b,b))").unwrap();
        assert_eq!(hojabr_to_sql(&neg, &schema()).unwrap_err()[0].code, Code::OutsideSqlCore);
    }

    #[test]
    fn round_trips() {
        let s: SqlSchema = [
            ("R".to_string(), vec!["a".to_string(), "b".to_string()]),
            ("S".to_string(), vec!["b".to_string(), "c".to_string()]),
            ("T".to_string(), vec!["a".to_string(), "v".to_string()]),
        ]
        .into();
        for sql in [
            "SELECT R.a, S.c FROM R, S WHERE R.b = S.b",
            "SELECT a, sum(v) FROM T GROUP BY a",
            "SELECT a, b FROM R ORDER BY a LIMIT 2",
        ] {
            let q = parse_sql(sql).unwrap();
            let back = hojabr_to_sql(&sql_to_hojabr(&q, &s, "Q").unwrap(), &s).unwrap();
            assert_eq!(back, q, "{sql}");
        }
    }

    #[test]
    fn unsupported_features() {
        for sql in ["SELECT * FROM R", "SELECT a FROM R UNION SELECT b FROM S", "SELECT count(a) FROM R"] {
            let e = parse_sql(sql).unwrap_err();
            assert!(e.message.contains("outside sql-core"), "{}", e.message);
        }
    }
}
