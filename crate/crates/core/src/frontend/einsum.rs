//! Einsum-style tensor expressions: sums of products of indexed tensors,
//! with every index ranging over a declared shape.
//!
//! Text form, one expression per line:
//!
//! ```text
//! A[i] = B[ij] * C[j] ; B:2x2 C:2
//! ```

use std::collections::BTreeMap;
use std::fmt;

use crate::ast::*;
use crate::diag::{Code, Diagnostic};
use crate::slang::{require, Names};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Operand {
    pub tensor: String,
    pub indices: Vec<char>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EinsumExpr {
    pub output: String,
    pub out_indices: Vec<char>,
    /// Sum of products.
    pub terms: Vec<Vec<Operand>>,
    /// Tensor -> dimension sizes, in order of first mention.
    pub shapes: Vec<(String, Vec<usize>)>,
}

/// How each einsum piece is spelled in Hojabr. Both directions use it.
const PRODUCT: BinOp = BinOp::Mul;
const SUM: BinOp = BinOp::Add;
const LOWER: CmpOp = CmpOp::Le;
const UPPER: CmpOp = CmpOp::Lt;
const SHAPE_CEI: &str = "card";

fn err(msg: impl Into<String>) -> Diagnostic {
    Diagnostic::error(Code::Einsum, msg)
}

impl EinsumExpr {
    /// Build from a numpy-style spec such as `"ij,j->i"`. Operands are
    /// named `B`, `C`, ... and the output `A`.
    pub fn from_numpy(spec: &str, shapes: &[&[usize]]) -> Result<EinsumExpr, Diagnostic> {
        let (ins, out) = spec
            .split_once("->")
            .ok_or_else(|| err(format!("`{spec}` needs an explicit `->` output")))?;
        let ins: Vec<&str> = ins.split(',').map(str::trim).collect();
        if ins.len() != shapes.len() {
            return Err(err(format!("{} operands but {} shapes", ins.len(), shapes.len())));
        }
        if ins.len() > 25 {
            return Err(err("too many operands"));
        }
        let name = |k: usize| ((b'B' + k as u8) as char).to_string();
        let operands = ins
            .iter()
            .enumerate()
            .map(|(k, s)| {
                Ok(Operand {
                    tensor: name(k),
                    indices: indices(s)?,
                })
            })
            .collect::<Result<Vec<_>, Diagnostic>>()?;
        let e = EinsumExpr {
            output: "A".into(),
            out_indices: indices(out.trim())?,
            terms: vec![operands],
            shapes: shapes.iter().enumerate().map(|(k, s)| (name(k), s.to_vec())).collect(),
        };
        e.index_sizes()?;
        Ok(e)
    }

    pub fn operands(&self) -> impl Iterator<Item = &Operand> {
        self.terms.iter().flatten()
    }

    pub fn shape(&self, tensor: &str) -> Option<&[usize]> {
        self.shapes.iter().find(|(t, _)| t == tensor).map(|(_, s)| s.as_slice())
    }

    /// Size of every index in order of first mention, checked against
    /// each operand's shape.
    pub fn index_sizes(&self) -> Result<Vec<(char, usize)>, Diagnostic> {
        let mut sizes: Vec<(char, usize)> = Vec::new();
        for op in self.operands() {
            let shape = self
                .shape(&op.tensor)
                .ok_or_else(|| err(format!("no shape bound for tensor {}", op.tensor)))?;
            if shape.len() != op.indices.len() {
                return Err(err(format!(
                    "{} has {} dimensions but is indexed by `{}`",
                    op.tensor,
                    shape.len(),
                    op.indices.iter().collect::<String>()
                )));
            }
            for (&ix, &n) in op.indices.iter().zip(shape) {
                match sizes.iter().find(|(c, _)| *c == ix) {
                    Some((_, m)) if *m != n => {
                        return Err(err(format!("index {ix} ranges over both {m} and {n}")));
                    }
                    Some(_) => {}
                    None => sizes.push((ix, n)),
                }
            }
        }
        for ix in &self.out_indices {
            if !sizes.iter().any(|(c, _)| c == ix) {
                return Err(err(format!("output index {ix} has no bound shape")));
            }
        }
        Ok(sizes)
    }
}

fn indices(s: &str) -> Result<Vec<char>, Diagnostic> {
    let out: Vec<char> = s.chars().collect();
    if let Some(c) = out.iter().find(|c| !c.is_ascii_lowercase()) {
        return Err(err(format!("index `{c}` is not a lowercase letter")));
    }
    Ok(out)
}

pub fn parse_einsum(line: &str) -> Result<EinsumExpr, Diagnostic> {
    let (expr, shapes) = line.split_once(';').unwrap_or((line, ""));
    let (lhs, rhs) = expr.split_once('=').ok_or_else(|| err("expected `Out[..] = ...`"))?;
    let access = |s: &str| -> Result<Operand, Diagnostic> {
        let s = s.trim();
        let (name, rest) = s.split_once('[').ok_or_else(|| err(format!("expected `T[..]`, found `{s}`")))?;
        let ixs = rest.strip_suffix(']').ok_or_else(|| err(format!("unclosed `[` in `{s}`")))?;
        let name = name.trim();
        if name.is_empty() || !name.chars().all(|c| c.is_alphanumeric() || c == '_') {
            return Err(err(format!("bad tensor name `{name}`")));
        }
        Ok(Operand {
            tensor: name.into(),
            indices: indices(ixs.trim())?,
        })
    };
    let out = access(lhs)?;
    let terms = rhs
        .split('+')
        .map(|t| t.split('*').map(access).collect())
        .collect::<Result<Vec<Vec<Operand>>, _>>()?;
    let mut bound = Vec::new();
    for b in shapes.split_whitespace() {
        let (t, dims) = b.split_once(':').ok_or_else(|| err(format!("bad shape binding `{b}`")))?;
        let dims = if dims == "()" {
            Vec::new()
        } else {
            dims.split('x')
                .map(|d| d.parse::<usize>().map_err(|_| err(format!("bad dimension in `{b}`"))))
                .collect::<Result<_, _>>()?
        };
        bound.push((t.to_string(), dims));
    }
    let e = EinsumExpr {
        output: out.tensor,
        out_indices: out.indices,
        terms,
        shapes: bound,
    };
    e.index_sizes()?;
    Ok(e)
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.tensor, self.indices.iter().collect::<String>())
    }
}

impl fmt::Display for EinsumExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}] = ", self.output, self.out_indices.iter().collect::<String>())?;
        let terms: Vec<String> = self
            .terms
            .iter()
            .map(|t| t.iter().map(Operand::to_string).collect::<Vec<_>>().join(" * "))
            .collect();
        f.write_str(&terms.join(" + "))?;
        if !self.shapes.is_empty() {
            f.write_str(" ;")?;
            for (t, dims) in &self.shapes {
                let d: Vec<String> = dims.iter().map(usize::to_string).collect();
                let d = if d.is_empty() { "()".to_string() } else { d.join("x") };
                write!(f, " {t}:{d}")?;
            }
        }
        Ok(())
    }
}

/// `T(i)(j)`, or `T()` for a scalar.
fn curried(name: &str, ixs: &[char]) -> Access {
    if ixs.is_empty() {
        return Access::new(name, vec![vec![]]);
    }
    Access::new(name, ixs.iter().map(|c| vec![Expr::var(c.to_string())]).collect())
}

fn fold(parts: Vec<Expr>, op: BinOp) -> Expr {
    parts.into_iter().reduce(|a, b| Expr::binary(a, op, b)).expect("non-empty")
}

/// Translate into a single dense-tensor rule. Non-output indices are
/// summed by the real semiring.
pub fn einsum_to_hojabr(e: &EinsumExpr) -> Result<Program, Diagnostic> {
    let sizes = e.index_sizes()?;
    let mut names = Names {
        taken: sizes.iter().map(|(c, _)| c.to_string()).collect(),
    };
    let mut bound: Vec<(&Operand, String)> = Vec::new();
    let mut body = Vec::new();
    let mut terms = Vec::new();
    for term in &e.terms {
        let mut factors = Vec::new();
        for op in term {
            let v = match bound.iter().find(|(o, _)| *o == op) {
                Some((_, v)) => v.clone(),
                None => {
                    let v = names.fresh_var(&op.tensor.to_lowercase());
                    body.push(Constraint::cmp(
                        Expr::var(&v),
                        CmpOp::Eq,
                        Expr::Access(curried(&op.tensor, &op.indices)),
                    ));
                    bound.push((op, v.clone()));
                    v
                }
            };
            factors.push(Expr::var(v));
        }
        terms.push(fold(factors, PRODUCT));
    }
    let mut seen: Vec<&str> = Vec::new();
    for op in e.operands() {
        if seen.contains(&op.tensor.as_str()) {
            continue;
        }
        seen.push(&op.tensor);
        let shape = e.shape(&op.tensor).unwrap();
        if shape.is_empty() {
            continue;
        }
        let mut args = vec![Expr::var(&op.tensor)];
        args.extend(shape.iter().map(|n| Expr::int(*n as i64)));
        body.push(Constraint::cei(SHAPE_CEI, vec![args]));
    }
    for (c, n) in &sizes {
        body.push(Constraint::Chain(
            Expr::int(0),
            vec![(LOWER, Expr::var(c.to_string())), (UPPER, Expr::int(*n as i64))],
        ));
    }
    let rule = Rule::new(
        curried(&e.output, &e.out_indices),
        Some(fold(terms, SUM)),
        Constraint::and(body),
        Action::Assign,
    );
    Ok(Program::new(vec![rule]))
}

fn index_of(e: &Expr) -> Result<char, Diagnostic> {
    match e.as_var().map(|v| v.chars().collect::<Vec<_>>()).as_deref() {
        Some([c]) if c.is_ascii_lowercase() => Ok(*c),
        _ => Err(err(format!("`{e}` is not a single-letter index"))),
    }
}

fn operand_of(a: &Access) -> Result<Operand, Diagnostic> {
    Ok(Operand {
        tensor: a.relation.clone(),
        indices: a.flat_args().map(index_of).collect::<Result<_, _>>()?,
    })
}

/// Inverse of [`einsum_to_hojabr`] on einsum-core programs.
pub fn hojabr_to_einsum(p: &Program) -> Result<EinsumExpr, Vec<Diagnostic>> {
    let one = |d: Diagnostic| vec![d];
    let p = desugar(p).map_err(one)?;
    require(&p, "einsum-core")?;
    let [rule] = p.rules.as_slice() else {
        return Err(one(err(format!("expected one rule, found {}", p.rules.len()))));
    };
    let mut bindings: BTreeMap<String, Operand> = BTreeMap::new();
    let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
    let mut ranges: BTreeMap<char, (bool, Option<i64>)> = BTreeMap::new();
    for c in rule.constraint.conjuncts() {
        match c.ungroup() {
            Constraint::Cmp(Expr::Var(v), CmpOp::Eq, Expr::Access(a))
            | Constraint::Cmp(Expr::Access(a), CmpOp::Eq, Expr::Var(v)) => {
                bindings.insert(v.clone(), operand_of(a).map_err(one)?);
            }
            Constraint::Cei(call) if call.name == SHAPE_CEI => {
                let t = call.relation_arg().ok_or_else(|| one(err(format!("{c} names no tensor"))))?;
                let dims = call
                    .value_args()
                    .into_iter()
                    .map(|d| match d {
                        Expr::Lit(Value::Int(n)) if *n >= 0 => Ok(*n as usize),
                        other => Err(one(err(format!("shape of {t} needs literal sizes, found {other}")))),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                shapes.push((t.to_string(), dims));
            }
            Constraint::Cmp(Expr::Lit(Value::Int(0)), LOWER, ix) => {
                ranges.entry(index_of(ix).map_err(one)?).or_default().0 = true;
            }
            Constraint::Cmp(ix, UPPER, Expr::Lit(Value::Int(n))) => {
                ranges.entry(index_of(ix).map_err(one)?).or_default().1 = Some(*n);
            }
            other => return Err(one(err(format!("`{other}` has no einsum counterpart")))),
        }
    }
    let value = rule.expr.as_ref().ok_or_else(|| one(err("head carries no tensor expression")))?;
    let factor = |e: &Expr| -> Result<Operand, Diagnostic> {
        match e {
            Expr::Var(v) => bindings.get(v).cloned().ok_or_else(|| err(format!("{v} is not bound to a tensor"))),
            Expr::Access(a) => operand_of(a),
            other => Err(err(format!("`{other}` is not a tensor access"))),
        }
    };
    let mut terms = Vec::new();
    for t in split(value, SUM) {
        terms.push(split(t, PRODUCT).into_iter().map(factor).collect::<Result<Vec<_>, _>>().map_err(one)?);
    }
    // Order shapes by first mention, which is how they are printed.
    let mut ordered = Vec::new();
    for op in terms.iter().flatten() {
        if ordered.iter().any(|(t, _): &(String, Vec<usize>)| *t == op.tensor) {
            continue;
        }
        let dims = match shapes.iter().find(|(t, _)| *t == op.tensor) {
            Some((_, d)) => d.clone(),
            None if op.indices.is_empty() => Vec::new(),
            None => return Err(one(err(format!("no shape bound for tensor {}", op.tensor)))),
        };
        ordered.push((op.tensor.clone(), dims));
    }
    let e = EinsumExpr {
        output: rule.head.relation.clone(),
        out_indices: rule.head.flat_args().map(index_of).collect::<Result<_, _>>().map_err(one)?,
        terms,
        shapes: ordered,
    };
    let sizes = e.index_sizes().map_err(one)?;
    for (c, n) in &sizes {
        match ranges.get(c) {
            Some((true, Some(m))) if *m == *n as i64 => {}
            _ => return Err(one(err(format!("index {c} lacks the range 0<={c}<{n}")))),
        }
    }
    Ok(e)
}

fn split(e: &Expr, op: BinOp) -> Vec<&Expr> {
    match e {
        Expr::Binary(l, o, r) if *o == op => {
            let mut out = split(l, op);
            out.extend(split(r, op));
            out
        }
        other => vec![other],
    }
}
