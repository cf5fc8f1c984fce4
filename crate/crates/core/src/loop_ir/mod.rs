// SPDX-License-Identifier: Apache-2.0

//! Low-level loop-nest IR over named buffers.
//!
//! Loop bounds are affine in enclosing loop variables; value expressions may
//! additionally use division/modulus (flat index decomposition) and the
//! `fma` intrinsic. Annotations are semantically inert for the sequential
//! interpreter; the low-level passes give them structural meaning.

pub mod interp;
pub mod text;

use std::collections::BTreeSet;
use std::fmt;

use crate::tensor::{DType, Scalar};
use crate::util::fnv1a64;

/// A named dense buffer. Empty `extents` denotes a rank-0 scalar buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer {
    pub name: String,
    pub dtype: DType,
    pub extents: Vec<usize>,
}

impl Buffer {
    pub fn new(name: &str, dtype: DType, extents: Vec<usize>) -> Self {
        Self {
            name: name.to_string(),
            dtype,
            extents,
        }
    }

    pub fn element_count(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![0usize; self.extents.len()];
        let mut acc = 1usize;
        for d in (0..self.extents.len()).rev() {
            strides[d] = acc;
            acc = acc.saturating_mul(self.extents[d]);
        }
        strides
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopAnnotation {
    Serial,
    Parallel,
    Vectorize(u8),
    Unroll(u8),
    Pipelined(u8),
}

impl LoopAnnotation {
    pub fn is_serial(self) -> bool {
        matches!(self, LoopAnnotation::Serial)
    }

    /// Parameter-domain check: lanes/factors in {2,4,8}, depth in {2,3}.
    pub fn in_domain(self) -> bool {
        match self {
            LoopAnnotation::Serial | LoopAnnotation::Parallel => true,
            LoopAnnotation::Vectorize(l) | LoopAnnotation::Unroll(l) => {
                matches!(l, 2 | 4 | 8)
            }
            LoopAnnotation::Pipelined(d) => matches!(d, 2 | 3),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Neg,
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

/// Scalar expression. `IntLit` is the polymorphic integer used for index
/// arithmetic; typed literals (`Const`) are restricted to F32 and Bool so
/// the text format stays unambiguous.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(Scalar),
    IntLit(i64),
    Var(String),
    Load(String, Vec<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Un(UnOp, Box<Expr>),
    Fma(Box<Expr>, Box<Expr>, Box<Expr>),
    Cast(DType, Box<Expr>),
}

#[allow(clippy::should_implement_trait)] // builders take owned operands, not self
impl Expr {
    pub fn var(name: &str) -> Expr {
        Expr::Var(name.to_string())
    }

    pub fn load(buffer: &str, indices: Vec<Expr>) -> Expr {
        Expr::Load(buffer.to_string(), indices)
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Bin(BinOp::Add, Box::new(a), Box::new(b))
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::Bin(BinOp::Sub, Box::new(a), Box::new(b))
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::Bin(BinOp::Mul, Box::new(a), Box::new(b))
    }

    /// Substitutes every occurrence of loop variable `var`.
    pub fn subst(&self, var: &str, replacement: &Expr) -> Expr {
        match self {
            Expr::Var(v) if v == var => replacement.clone(),
            Expr::Const(_) | Expr::IntLit(_) | Expr::Var(_) => self.clone(),
            Expr::Load(b, idx) => Expr::Load(
                b.clone(),
                idx.iter().map(|e| e.subst(var, replacement)).collect(),
            ),
            Expr::Bin(op, a, b) => Expr::Bin(
                *op,
                Box::new(a.subst(var, replacement)),
                Box::new(b.subst(var, replacement)),
            ),
            Expr::Un(op, a) => Expr::Un(*op, Box::new(a.subst(var, replacement))),
            Expr::Fma(a, b, c) => Expr::Fma(
                Box::new(a.subst(var, replacement)),
                Box::new(b.subst(var, replacement)),
                Box::new(c.subst(var, replacement)),
            ),
            Expr::Cast(d, a) => Expr::Cast(*d, Box::new(a.subst(var, replacement))),
        }
    }

    /// Constant-folds integer-literal arithmetic; `None` when not constant.
    pub fn const_int(&self) -> Option<i64> {
        match self {
            Expr::IntLit(v) => Some(*v),
            Expr::Bin(op, a, b) => {
                let (a, b) = (a.const_int()?, b.const_int()?);
                Some(match op {
                    BinOp::Add => a.checked_add(b)?,
                    BinOp::Sub => a.checked_sub(b)?,
                    BinOp::Mul => a.checked_mul(b)?,
                    BinOp::Div => a.checked_div(b)?,
                    BinOp::Mod => a.checked_rem(b)?,
                })
            }
            _ => None,
        }
    }

    /// True when the expression is affine in the given variables: sums of
    /// integer literals and variables scaled by literal coefficients.
    pub fn is_affine(&self, vars: &BTreeSet<String>) -> bool {
        match self {
            Expr::IntLit(_) => true,
            Expr::Var(v) => vars.contains(v),
            Expr::Bin(BinOp::Add | BinOp::Sub, a, b) => a.is_affine(vars) && b.is_affine(vars),
            Expr::Bin(BinOp::Mul, a, b) => {
                (a.const_int().is_some() && b.is_affine(vars))
                    || (b.const_int().is_some() && a.is_affine(vars))
            }
            _ => false,
        }
    }

    /// Decomposes an affine-in-`var` expression into `(coefficient, rest)`,
    /// where `rest` does not mention `var`. `None` when not affine in `var`.
    pub fn affine_in(&self, var: &str) -> Option<(i64, Expr)> {
        match self {
            Expr::Var(v) if v == var => Some((1, Expr::IntLit(0))),
            Expr::Const(_) | Expr::IntLit(_) | Expr::Var(_) => Some((0, self.clone())),
            Expr::Bin(BinOp::Add, a, b) => {
                let (ca, ra) = a.affine_in(var)?;
                let (cb, rb) = b.affine_in(var)?;
                Some((ca + cb, Expr::add(ra, rb)))
            }
            Expr::Bin(BinOp::Sub, a, b) => {
                let (ca, ra) = a.affine_in(var)?;
                let (cb, rb) = b.affine_in(var)?;
                Some((ca - cb, Expr::sub(ra, rb)))
            }
            Expr::Bin(BinOp::Mul, a, b) => {
                if let Some(k) = a.const_int() {
                    let (c, r) = b.affine_in(var)?;
                    return Some((k * c, Expr::mul(Expr::IntLit(k), r)));
                }
                if let Some(k) = b.const_int() {
                    let (c, r) = a.affine_in(var)?;
                    return Some((k * c, Expr::mul(r, Expr::IntLit(k))));
                }
                None
            }
            _ => {
                if self.mentions_var(var) {
                    None
                } else {
                    Some((0, self.clone()))
                }
            }
        }
    }

    pub fn mentions_var(&self, var: &str) -> bool {
        match self {
            Expr::Var(v) => v == var,
            Expr::Const(_) | Expr::IntLit(_) => false,
            Expr::Load(_, idx) => idx.iter().any(|e| e.mentions_var(var)),
            Expr::Bin(_, a, b) => a.mentions_var(var) || b.mentions_var(var),
            Expr::Un(_, a) => a.mentions_var(var),
            Expr::Fma(a, b, c) => {
                a.mentions_var(var) || b.mentions_var(var) || c.mentions_var(var)
            }
            Expr::Cast(_, a) => a.mentions_var(var),
        }
    }

    /// All `(buffer, indices)` loads in the expression, in evaluation order.
    pub fn loads(&self) -> Vec<(&str, &[Expr])> {
        let mut out = Vec::new();
        self.collect_loads(&mut out);
        out
    }

    fn collect_loads<'a>(&'a self, out: &mut Vec<(&'a str, &'a [Expr])>) {
        match self {
            Expr::Load(b, idx) => {
                out.push((b.as_str(), idx.as_slice()));
                for e in idx {
                    e.collect_loads(out);
                }
            }
            Expr::Bin(_, a, b) => {
                a.collect_loads(out);
                b.collect_loads(out);
            }
            Expr::Un(_, a) => a.collect_loads(out),
            Expr::Fma(a, b, c) => {
                a.collect_loads(out);
                b.collect_loads(out);
                c.collect_loads(out);
            }
            Expr::Cast(_, a) => a.collect_loads(out),
            _ => {}
        }
    }

    /// Rewrites loads of `buffer`, prepending `slot` to their index list.
    pub fn reslot_loads(&self, buffer: &str, slot: &Expr) -> Expr {
        match self {
            Expr::Load(b, idx) if b == buffer => {
                let mut indices = vec![slot.clone()];
                indices.extend(idx.iter().map(|e| e.reslot_loads(buffer, slot)));
                Expr::Load(b.clone(), indices)
            }
            Expr::Load(b, idx) => Expr::Load(
                b.clone(),
                idx.iter().map(|e| e.reslot_loads(buffer, slot)).collect(),
            ),
            Expr::Const(_) | Expr::IntLit(_) | Expr::Var(_) => self.clone(),
            Expr::Bin(op, a, b) => Expr::Bin(
                *op,
                Box::new(a.reslot_loads(buffer, slot)),
                Box::new(b.reslot_loads(buffer, slot)),
            ),
            Expr::Un(op, a) => Expr::Un(*op, Box::new(a.reslot_loads(buffer, slot))),
            Expr::Fma(a, b, c) => Expr::Fma(
                Box::new(a.reslot_loads(buffer, slot)),
                Box::new(b.reslot_loads(buffer, slot)),
                Box::new(c.reslot_loads(buffer, slot)),
            ),
            Expr::Cast(d, a) => Expr::Cast(*d, Box::new(a.reslot_loads(buffer, slot))),
        }
    }
}

/// Boolean guard expression.
#[derive(Debug, Clone, PartialEq)]
pub enum CondExpr {
    Cmp(CmpOp, Expr, Expr),
    And(Box<CondExpr>, Box<CondExpr>),
}

impl CondExpr {
    pub fn and(a: CondExpr, b: CondExpr) -> CondExpr {
        CondExpr::And(Box::new(a), Box::new(b))
    }

    pub fn subst(&self, var: &str, replacement: &Expr) -> CondExpr {
        match self {
            CondExpr::Cmp(op, a, b) => {
                CondExpr::Cmp(*op, a.subst(var, replacement), b.subst(var, replacement))
            }
            CondExpr::And(a, b) => {
                CondExpr::and(a.subst(var, replacement), b.subst(var, replacement))
            }
        }
    }

    fn reslot_loads(&self, buffer: &str, slot: &Expr) -> CondExpr {
        match self {
            CondExpr::Cmp(op, a, b) => CondExpr::Cmp(
                *op,
                a.reslot_loads(buffer, slot),
                b.reslot_loads(buffer, slot),
            ),
            CondExpr::And(a, b) => {
                CondExpr::and(a.reslot_loads(buffer, slot), b.reslot_loads(buffer, slot))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocScope {
    Global,
    Local,
    Cache,
}

impl AllocScope {
    pub fn name(self) -> &'static str {
        match self {
            AllocScope::Global => "global",
            AllocScope::Local => "local",
            AllocScope::Cache => "cache",
        }
    }
}

/// Statement tree. Canonical trees contain no singleton or nested `Seq`;
/// use [`seq`] to build them.
#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    For {
        var: String,
        lo: Expr,
        hi: Expr,
        annotation: LoopAnnotation,
        body: Box<Stmt>,
    },
    Store {
        buffer: String,
        indices: Vec<Expr>,
        value: Expr,
    },
    Alloc {
        buffer: Buffer,
        scope: AllocScope,
    },
    Seq(Vec<Stmt>),
    If {
        cond: CondExpr,
        body: Box<Stmt>,
    },
}

/// Builds a normalized sequence: nested `Seq`s are flattened and singleton
/// sequences collapse to their element.
pub fn seq(stmts: Vec<Stmt>) -> Stmt {
    let mut flat = Vec::with_capacity(stmts.len());
    for s in stmts {
        match s {
            Stmt::Seq(inner) => flat.extend(inner),
            other => flat.push(other),
        }
    }
    if flat.len() == 1 {
        flat.pop().unwrap()
    } else {
        Stmt::Seq(flat)
    }
}

pub fn for_loop(var: &str, lo: Expr, hi: Expr, annotation: LoopAnnotation, body: Stmt) -> Stmt {
    Stmt::For {
        var: var.to_string(),
        lo,
        hi,
        annotation,
        body: Box::new(body),
    }
}

impl Stmt {
    /// Children of this statement, in path order.
    pub fn children(&self) -> Vec<&Stmt> {
        match self {
            Stmt::For { body, .. } | Stmt::If { body, .. } => vec![body],
            Stmt::Seq(v) => v.iter().collect(),
            _ => Vec::new(),
        }
    }

    /// Substitutes a loop variable throughout the subtree. Shadowing is
    /// rejected by validation, so substitution recurses unconditionally.
    pub fn subst(&self, var: &str, replacement: &Expr) -> Stmt {
        match self {
            Stmt::For {
                var: v,
                lo,
                hi,
                annotation,
                body,
            } => Stmt::For {
                var: v.clone(),
                lo: lo.subst(var, replacement),
                hi: hi.subst(var, replacement),
                annotation: *annotation,
                body: Box::new(body.subst(var, replacement)),
            },
            Stmt::Store {
                buffer,
                indices,
                value,
            } => Stmt::Store {
                buffer: buffer.clone(),
                indices: indices.iter().map(|e| e.subst(var, replacement)).collect(),
                value: value.subst(var, replacement),
            },
            Stmt::Alloc { .. } => self.clone(),
            Stmt::Seq(v) => Stmt::Seq(v.iter().map(|s| s.subst(var, replacement)).collect()),
            Stmt::If { cond, body } => Stmt::If {
                cond: cond.subst(var, replacement),
                body: Box::new(body.subst(var, replacement)),
            },
        }
    }

    /// Rewrites accesses to `buffer` in the subtree, prepending `slot` to
    /// both load and store index vectors.
    pub fn reslot_buffer(&self, buffer: &str, slot: &Expr) -> Stmt {
        match self {
            Stmt::For {
                var,
                lo,
                hi,
                annotation,
                body,
            } => Stmt::For {
                var: var.clone(),
                lo: lo.reslot_loads(buffer, slot),
                hi: hi.reslot_loads(buffer, slot),
                annotation: *annotation,
                body: Box::new(body.reslot_buffer(buffer, slot)),
            },
            Stmt::Store {
                buffer: b,
                indices,
                value,
            } => {
                let mut indices: Vec<Expr> = indices
                    .iter()
                    .map(|e| e.reslot_loads(buffer, slot))
                    .collect();
                if b == buffer {
                    indices.insert(0, slot.clone());
                }
                Stmt::Store {
                    buffer: b.clone(),
                    indices,
                    value: value.reslot_loads(buffer, slot),
                }
            }
            Stmt::Alloc { .. } => self.clone(),
            Stmt::Seq(v) => Stmt::Seq(v.iter().map(|s| s.reslot_buffer(buffer, slot)).collect()),
            Stmt::If { cond, body } => Stmt::If {
                cond: cond.reslot_loads(buffer, slot),
                body: Box::new(body.reslot_buffer(buffer, slot)),
            },
        }
    }

    /// All `(buffer, indices)` store targets in the subtree.
    pub fn stores(&self) -> Vec<(&str, &[Expr])> {
        let mut out = Vec::new();
        self.collect_stores(&mut out);
        out
    }

    fn collect_stores<'a>(&'a self, out: &mut Vec<(&'a str, &'a [Expr])>) {
        match self {
            Stmt::Store {
                buffer, indices, ..
            } => out.push((buffer.as_str(), indices.as_slice())),
            Stmt::For { body, .. } | Stmt::If { body, .. } => body.collect_stores(out),
            Stmt::Seq(v) => {
                for s in v {
                    s.collect_stores(out);
                }
            }
            Stmt::Alloc { .. } => {}
        }
    }

    /// All loads appearing anywhere in the subtree.
    pub fn loads(&self) -> Vec<(&str, &[Expr])> {
        let mut out = Vec::new();
        self.collect_loads_rec(&mut out);
        out
    }

    /// Names allocated by `Alloc` statements in the subtree.
    pub fn alloc_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        fn walk(s: &Stmt, out: &mut Vec<String>) {
            match s {
                Stmt::Alloc { buffer, .. } => out.push(buffer.name.clone()),
                Stmt::Seq(v) => {
                    for s in v {
                        walk(s, out);
                    }
                }
                Stmt::For { body, .. } | Stmt::If { body, .. } => walk(body, out),
                Stmt::Store { .. } => {}
            }
        }
        walk(self, &mut out);
        out
    }

    /// Renames a buffer throughout the subtree: its alloc declaration and
    /// every load/store. Sound because buffer names are program-unique.
    pub fn rename_buffer(&self, from: &str, to: &str) -> Stmt {
        fn in_expr(e: &Expr, from: &str, to: &str) -> Expr {
            match e {
                Expr::Load(b, idx) => Expr::Load(
                    if b == from { to.to_string() } else { b.clone() },
                    idx.iter().map(|i| in_expr(i, from, to)).collect(),
                ),
                Expr::Bin(op, a, b) => Expr::Bin(
                    *op,
                    Box::new(in_expr(a, from, to)),
                    Box::new(in_expr(b, from, to)),
                ),
                Expr::Un(op, a) => Expr::Un(*op, Box::new(in_expr(a, from, to))),
                Expr::Fma(a, b, c) => Expr::Fma(
                    Box::new(in_expr(a, from, to)),
                    Box::new(in_expr(b, from, to)),
                    Box::new(in_expr(c, from, to)),
                ),
                Expr::Cast(d, a) => Expr::Cast(*d, Box::new(in_expr(a, from, to))),
                other => other.clone(),
            }
        }
        fn in_cond(c: &CondExpr, from: &str, to: &str) -> CondExpr {
            match c {
                CondExpr::Cmp(op, a, b) => {
                    CondExpr::Cmp(*op, in_expr(a, from, to), in_expr(b, from, to))
                }
                CondExpr::And(a, b) => {
                    CondExpr::and(in_cond(a, from, to), in_cond(b, from, to))
                }
            }
        }
        match self {
            Stmt::Alloc { buffer, scope } => Stmt::Alloc {
                buffer: Buffer {
                    name: if buffer.name == from {
                        to.to_string()
                    } else {
                        buffer.name.clone()
                    },
                    dtype: buffer.dtype,
                    extents: buffer.extents.clone(),
                },
                scope: *scope,
            },
            Stmt::Store {
                buffer,
                indices,
                value,
            } => Stmt::Store {
                buffer: if buffer == from {
                    to.to_string()
                } else {
                    buffer.clone()
                },
                indices: indices.iter().map(|i| in_expr(i, from, to)).collect(),
                value: in_expr(value, from, to),
            },
            Stmt::For {
                var,
                lo,
                hi,
                annotation,
                body,
            } => Stmt::For {
                var: var.clone(),
                lo: in_expr(lo, from, to),
                hi: in_expr(hi, from, to),
                annotation: *annotation,
                body: Box::new(body.rename_buffer(from, to)),
            },
            Stmt::If { cond, body } => Stmt::If {
                cond: in_cond(cond, from, to),
                body: Box::new(body.rename_buffer(from, to)),
            },
            Stmt::Seq(v) => Stmt::Seq(v.iter().map(|s| s.rename_buffer(from, to)).collect()),
        }
    }

    fn collect_loads_rec<'a>(&'a self, out: &mut Vec<(&'a str, &'a [Expr])>) {
        match self {
            Stmt::Store { indices, value, .. } => {
                for e in indices {
                    e.collect_loads(out);
                }
                value.collect_loads(out);
            }
            Stmt::For { lo, hi, body, .. } => {
                lo.collect_loads(out);
                hi.collect_loads(out);
                body.collect_loads_rec(out);
            }
            Stmt::If { cond, body } => {
                collect_cond_loads(cond, out);
                body.collect_loads_rec(out);
            }
            Stmt::Seq(v) => {
                for s in v {
                    s.collect_loads_rec(out);
                }
            }
            Stmt::Alloc { .. } => {}
        }
    }

    /// True when the subtree contains no `For` loop.
    pub fn is_loop_free(&self) -> bool {
        match self {
            Stmt::For { .. } => false,
            Stmt::Seq(v) => v.iter().all(|s| s.is_loop_free()),
            Stmt::If { body, .. } => body.is_loop_free(),
            _ => true,
        }
    }
}

fn collect_cond_loads<'a>(cond: &'a CondExpr, out: &mut Vec<(&'a str, &'a [Expr])>) {
    match cond {
        CondExpr::Cmp(_, a, b) => {
            a.collect_loads(out);
            b.collect_loads(out);
        }
        CondExpr::And(a, b) => {
            collect_cond_loads(a, out);
            collect_cond_loads(b, out);
        }
    }
}

/// Structural path from the program body to a statement: `Seq` children by
/// index, `For`/`If` bodies as child 0.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord)]
pub struct StmtPath(pub Vec<usize>);

impl fmt::Display for StmtPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "root");
        }
        let parts: Vec<String> = self.0.iter().map(|i| i.to_string()).collect();
        write!(f, "{}", parts.join("."))
    }
}

/// Resolves a path within a statement tree.
pub fn stmt_at<'a>(root: &'a Stmt, path: &StmtPath) -> Option<&'a Stmt> {
    let mut current = root;
    for &idx in &path.0 {
        let children = current.children();
        current = children.get(idx).copied()?;
    }
    Some(current)
}

/// A loop-nest program over named buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopProgram {
    pub name: String,
    pub inputs: Vec<Buffer>,
    pub outputs: Vec<Buffer>,
    pub body: Stmt,
    pub intrinsics_used: BTreeSet<String>,
}

impl LoopProgram {
    /// Stable content hash of the canonical text.
    pub fn canonical_hash(&self) -> u64 {
        fnv1a64(text::serialize_loop(self).as_bytes())
    }

    /// All `Alloc`ed buffers in the body.
    pub fn alloc_buffers(&self) -> Vec<&Buffer> {
        let mut out = Vec::new();
        fn walk<'a>(s: &'a Stmt, out: &mut Vec<&'a Buffer>) {
            match s {
                Stmt::Alloc { buffer, .. } => out.push(buffer),
                Stmt::Seq(v) => {
                    for s in v {
                        walk(s, out);
                    }
                }
                Stmt::For { body, .. } | Stmt::If { body, .. } => walk(body, out),
                Stmt::Store { .. } => {}
            }
        }
        walk(&self.body, &mut out);
        out
    }

    /// Declared buffer for `name`, searching inputs, outputs, then allocs.
    pub fn buffer(&self, name: &str) -> Option<Buffer> {
        self.inputs
            .iter()
            .chain(self.outputs.iter())
            .find(|b| b.name == name)
            .cloned()
            .or_else(|| {
                self.alloc_buffers()
                    .into_iter()
                    .find(|b| b.name == name)
                    .cloned()
            })
    }

    /// Every declared buffer name (inputs, outputs, allocs).
    pub fn buffer_names(&self) -> BTreeSet<String> {
        let mut names: BTreeSet<String> = self
            .inputs
            .iter()
            .chain(self.outputs.iter())
            .map(|b| b.name.clone())
            .collect();
        names.extend(self.alloc_buffers().into_iter().map(|b| b.name.clone()));
        names
    }

    /// Returns the program with every loop annotation reset to `Serial`.
    pub fn strip_annotations(&self) -> LoopProgram {
        fn strip(s: &Stmt) -> Stmt {
            match s {
                Stmt::For {
                    var, lo, hi, body, ..
                } => Stmt::For {
                    var: var.clone(),
                    lo: lo.clone(),
                    hi: hi.clone(),
                    annotation: LoopAnnotation::Serial,
                    body: Box::new(strip(body)),
                },
                Stmt::Seq(v) => Stmt::Seq(v.iter().map(strip).collect()),
                Stmt::If { cond, body } => Stmt::If {
                    cond: cond.clone(),
                    body: Box::new(strip(body)),
                },
                other => other.clone(),
            }
        }
        LoopProgram {
            name: self.name.clone(),
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
            body: strip(&self.body),
            intrinsics_used: self.intrinsics_used.clone(),
        }
    }
}

/// Validates structure: unique declarations, declared stores/loads with
/// matching arity, scoped variables without shadowing, affine bounds,
/// annotation domains, and typed-literal restrictions.
pub fn validate_loop(p: &LoopProgram) -> Vec<String> {
    let mut violations = Vec::new();
    let mut declared: std::collections::BTreeMap<String, Buffer> =
        std::collections::BTreeMap::new();

    for b in &p.inputs {
        if declared.insert(b.name.clone(), b.clone()).is_some() {
            violations.push(format!("duplicate input buffer `{}`", b.name));
        }
    }
    for b in &p.outputs {
        match declared.get(&b.name) {
            Some(existing) if existing == b => {} // in-place input/output
            Some(_) => violations.push(format!(
                "output `{}` conflicts with another declaration",
                b.name
            )),
            None => {
                declared.insert(b.name.clone(), b.clone());
            }
        }
    }
    for b in declared.values() {
        if b.extents.contains(&0) {
            violations.push(format!("buffer `{}` has a zero extent", b.name));
        }
    }

    fn check_expr(
        e: &Expr,
        vars: &BTreeSet<String>,
        bufs: &std::collections::BTreeMap<String, Buffer>,
        violations: &mut Vec<String>,
    ) {
        match e {
            Expr::Const(s) => {
                if !matches!(s, Scalar::F32(_) | Scalar::Bool(_)) {
                    violations.push(format!("typed literal {s:?} must be F32 or Bool"));
                }
            }
            Expr::IntLit(_) => {}
            Expr::Var(v) => {
                if !vars.contains(v) {
                    violations.push(format!("undeclared loop var `{v}`"));
                }
            }
            Expr::Load(b, idx) => {
                match bufs.get(b) {
                    Some(buf) if buf.extents.len() != idx.len() => violations.push(format!(
                        "load of `{b}` with {} indices, rank {}",
                        idx.len(),
                        buf.extents.len()
                    )),
                    Some(_) => {}
                    None => violations.push(format!("load of undeclared buffer `{b}`")),
                }
                for i in idx {
                    check_expr(i, vars, bufs, violations);
                }
            }
            Expr::Bin(_, a, b) => {
                check_expr(a, vars, bufs, violations);
                check_expr(b, vars, bufs, violations);
            }
            Expr::Un(_, a) => check_expr(a, vars, bufs, violations),
            Expr::Fma(a, b, c) => {
                check_expr(a, vars, bufs, violations);
                check_expr(b, vars, bufs, violations);
                check_expr(c, vars, bufs, violations);
            }
            Expr::Cast(_, a) => check_expr(a, vars, bufs, violations),
        }
    }

    fn check_cond(
        c: &CondExpr,
        vars: &BTreeSet<String>,
        bufs: &std::collections::BTreeMap<String, Buffer>,
        violations: &mut Vec<String>,
    ) {
        match c {
            CondExpr::Cmp(_, a, b) => {
                check_expr(a, vars, bufs, violations);
                check_expr(b, vars, bufs, violations);
            }
            CondExpr::And(a, b) => {
                check_cond(a, vars, bufs, violations);
                check_cond(b, vars, bufs, violations);
            }
        }
    }

    fn walk(
        s: &Stmt,
        vars: &mut BTreeSet<String>,
        bufs: &mut std::collections::BTreeMap<String, Buffer>,
        violations: &mut Vec<String>,
    ) {
        match s {
            Stmt::For {
                var,
                lo,
                hi,
                annotation,
                body,
            } => {
                if !annotation.in_domain() {
                    violations.push(format!("annotation {annotation:?} out of domain"));
                }
                if !lo.is_affine(vars) || !hi.is_affine(vars) {
                    violations.push(format!("non-affine bounds on loop `{var}`"));
                }
                if !vars.insert(var.clone()) {
                    violations.push(format!("loop var `{var}` shadows an enclosing loop"));
                    walk(body, vars, bufs, violations);
                } else {
                    walk(body, vars, bufs, violations);
                    vars.remove(var);
                }
            }
            Stmt::Store {
                buffer,
                indices,
                value,
            } => {
                match bufs.get(buffer) {
                    Some(buf) if buf.extents.len() != indices.len() => violations.push(format!(
                        "store to `{buffer}` with {} indices, rank {}",
                        indices.len(),
                        buf.extents.len()
                    )),
                    Some(_) => {}
                    None => violations.push(format!("store to undeclared buffer `{buffer}`")),
                }
                for i in indices {
                    check_expr(i, vars, bufs, violations);
                }
                check_expr(value, vars, bufs, violations);
            }
            Stmt::Alloc { buffer, scope: _ } => {
                if buffer.extents.contains(&0) {
                    violations.push(format!("alloc `{}` has a zero extent", buffer.name));
                }
                if bufs.insert(buffer.name.clone(), buffer.clone()).is_some() {
                    violations.push(format!("alloc `{}` redeclares a buffer", buffer.name));
                }
            }
            Stmt::Seq(v) => {
                for s in v {
                    walk(s, vars, bufs, violations);
                }
            }
            Stmt::If { cond, body } => {
                check_cond(cond, vars, bufs, violations);
                walk(body, vars, bufs, violations);
            }
        }
    }

    let mut vars = BTreeSet::new();
    let mut bufs = declared;
    walk(&p.body, &mut vars, &mut bufs, &mut violations);
    violations
}

/// All loops in the program with their structural paths, pre-order.
pub fn collect_loops(body: &Stmt) -> Vec<(StmtPath, &Stmt)> {
    let mut out = Vec::new();
    fn walk<'a>(s: &'a Stmt, path: &mut Vec<usize>, out: &mut Vec<(StmtPath, &'a Stmt)>) {
        if matches!(s, Stmt::For { .. }) {
            out.push((StmtPath(path.clone()), s));
        }
        for (i, child) in s.children().into_iter().enumerate() {
            path.push(i);
            walk(child, path, out);
            path.pop();
        }
    }
    walk(body, &mut Vec::new(), &mut out);
    out
}

/// Replaces the statement at `path` with the value produced by `f`.
pub fn replace_at(root: &Stmt, path: &StmtPath, f: &dyn Fn(&Stmt) -> Stmt) -> Stmt {
    fn go(s: &Stmt, path: &[usize], f: &dyn Fn(&Stmt) -> Stmt) -> Stmt {
        if path.is_empty() {
            return f(s);
        }
        let idx = path[0];
        match s {
            Stmt::For {
                var,
                lo,
                hi,
                annotation,
                body,
            } => Stmt::For {
                var: var.clone(),
                lo: lo.clone(),
                hi: hi.clone(),
                annotation: *annotation,
                body: Box::new(go(body, &path[1..], f)),
            },
            Stmt::If { cond, body } => Stmt::If {
                cond: cond.clone(),
                body: Box::new(go(body, &path[1..], f)),
            },
            Stmt::Seq(v) => {
                let mut v = v.clone();
                v[idx] = go(&v[idx], &path[1..], f);
                seq(v)
            }
            other => other.clone(),
        }
    }
    go(root, &path.0, f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple_program() -> LoopProgram {
        let body = for_loop(
            "i",
            Expr::IntLit(0),
            Expr::IntLit(4),
            LoopAnnotation::Serial,
            Stmt::Store {
                buffer: "c".into(),
                indices: vec![Expr::var("i")],
                value: Expr::add(
                    Expr::load("a", vec![Expr::var("i")]),
                    Expr::load("b", vec![Expr::var("i")]),
                ),
            },
        );
        LoopProgram {
            name: "add4".into(),
            inputs: vec![
                Buffer::new("a", DType::F32, vec![4]),
                Buffer::new("b", DType::F32, vec![4]),
            ],
            outputs: vec![Buffer::new("c", DType::F32, vec![4])],
            body,
            intrinsics_used: BTreeSet::new(),
        }
    }

    #[test]
    fn valid_program_has_no_violations() {
        assert!(validate_loop(&simple_program()).is_empty());
    }

    #[test]
    fn undeclared_buffer_flagged() {
        let mut p = simple_program();
        p.inputs.remove(0);
        let v = validate_loop(&p);
        assert!(v.iter().any(|m| m.contains("undeclared buffer `a`")));
    }

    #[test]
    fn shadowed_var_flagged() {
        let inner = for_loop(
            "i",
            Expr::IntLit(0),
            Expr::IntLit(2),
            LoopAnnotation::Serial,
            Stmt::Seq(vec![]),
        );
        let mut p = simple_program();
        p.body = for_loop(
            "i",
            Expr::IntLit(0),
            Expr::IntLit(2),
            LoopAnnotation::Serial,
            inner,
        );
        let v = validate_loop(&p);
        assert!(v.iter().any(|m| m.contains("shadows")));
    }

    #[test]
    fn affine_decomposition() {
        let e = Expr::add(Expr::mul(Expr::IntLit(2), Expr::var("i")), Expr::IntLit(3));
        let (c, rest) = e.affine_in("i").unwrap();
        assert_eq!(c, 2);
        assert_eq!(rest.const_int(), Some(3));
        let e2 = Expr::mul(Expr::var("i"), Expr::var("j"));
        assert!(e2.affine_in("i").is_none());
    }

    #[test]
    fn path_resolution() {
        let p = simple_program();
        let loops = collect_loops(&p.body);
        assert_eq!(loops.len(), 1);
        assert_eq!(loops[0].0, StmtPath(vec![]));
        assert!(stmt_at(&p.body, &loops[0].0).is_some());
    }

    #[test]
    fn seq_normalization() {
        let a = Stmt::Alloc {
            buffer: Buffer::new("t", DType::F32, vec![1]),
            scope: AllocScope::Local,
        };
        // Nested and empty sequences flatten; a singleton collapses fully.
        assert_eq!(seq(vec![seq(vec![a.clone()]), Stmt::Seq(vec![])]), a);
        match seq(vec![a.clone(), a.clone()]) {
            Stmt::Seq(v) => assert_eq!(v.len(), 2),
            other => panic!("expected seq, got {other:?}"),
        }
    }
}
