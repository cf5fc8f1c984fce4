// SPDX-License-Identifier: Apache-2.0

//! Canonical indentation-based loop-IR text format.
//!
//! ```text
//! program matmul_16
//! input a: F32[16,16]
//! input b: F32[16,16]
//! output c: F32[16,16]
//! body:
//!   for i in [0, 16):
//!     for j in [0, 16):
//!       c[i, j] = 0.0
//!       for k in [0, 16) @vectorize(4):
//!         c[i, j] = c[i, j] + a[i, k] * b[k, j]
//! ```
//!
//! Blocks indent by two spaces; annotations attach as a `@name(arg)` suffix
//! on the loop header. Bare integers are polymorphic index literals; typed
//! literals carry a decimal point (F32) or are `true`/`false` (BOOL).

use std::fmt::Write as _;
use std::str::FromStr;

use super::{
    seq, AllocScope, BinOp, Buffer, CmpOp, CondExpr, Expr, LoopAnnotation, LoopProgram, Stmt,
    UnOp,
};
pub use crate::graph::text::ParseError;
use crate::tensor::{DType, Scalar};

fn fmt_type(dtype: DType, extents: &[usize]) -> String {
    let dims: Vec<String> = extents.iter().map(|d| d.to_string()).collect();
    format!("{dtype}[{}]", dims.join(","))
}

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
        Expr::Bin(BinOp::Mul | BinOp::Div | BinOp::Mod, ..) => 2,
        Expr::Un(UnOp::Neg, _) => 3,
        _ => 4,
    }
}

fn bin_symbol(op: BinOp) -> &'static str {
    match op {
        BinOp::Add => "+",
        BinOp::Sub => "-",
        BinOp::Mul => "*",
        BinOp::Div => "/",
        BinOp::Mod => "%",
    }
}

fn cmp_symbol(op: CmpOp) -> &'static str {
    match op {
        CmpOp::Lt => "<",
        CmpOp::Le => "<=",
        CmpOp::Gt => ">",
        CmpOp::Ge => ">=",
        CmpOp::Eq => "==",
        CmpOp::Ne => "!=",
    }
}

fn fmt_expr(e: &Expr, min_prec: u8, out: &mut String) {
    let own = prec(e);
    let parens = own < min_prec;
    if parens {
        out.push('(');
    }
    match e {
        Expr::Const(s) => {
            let _ = write!(out, "{s}");
        }
        Expr::IntLit(v) => {
            let _ = write!(out, "{v}");
        }
        Expr::Var(v) => out.push_str(v),
        Expr::Load(b, idx) => {
            out.push_str(b);
            out.push('[');
            for (i, e) in idx.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                fmt_expr(e, 0, out);
            }
            out.push(']');
        }
        Expr::Bin(op, a, b) => {
            fmt_expr(a, own, out);
            let _ = write!(out, " {} ", bin_symbol(*op));
            fmt_expr(b, own + 1, out);
        }
        Expr::Un(UnOp::Neg, a) => {
            out.push('-');
            fmt_expr(a, 4, out);
        }
        Expr::Un(UnOp::Relu, a) => {
            out.push_str("relu(");
            fmt_expr(a, 0, out);
            out.push(')');
        }
        Expr::Un(UnOp::Sigmoid, a) => {
            out.push_str("sigmoid(");
            fmt_expr(a, 0, out);
            out.push(')');
        }
        Expr::Fma(a, b, c) => {
            out.push_str("fma(");
            fmt_expr(a, 0, out);
            out.push_str(", ");
            fmt_expr(b, 0, out);
            out.push_str(", ");
            fmt_expr(c, 0, out);
            out.push(')');
        }
        Expr::Cast(d, a) => {
            let _ = write!(out, "cast<{d}>(");
            fmt_expr(a, 0, out);
            out.push(')');
        }
    }
    if parens {
        out.push(')');
    }
}

fn expr_to_string(e: &Expr) -> String {
    let mut s = String::new();
    fmt_expr(e, 0, &mut s);
    s
}

fn fmt_cond(c: &CondExpr, out: &mut String) {
    match c {
        CondExpr::Cmp(op, a, b) => {
            fmt_expr(a, 0, out);
            let _ = write!(out, " {} ", cmp_symbol(*op));
            fmt_expr(b, 0, out);
        }
        CondExpr::And(a, b) => {
            fmt_cond(a, out);
            out.push_str(" && ");
            fmt_cond(b, out);
        }
    }
}

fn fmt_annotation(a: LoopAnnotation) -> String {
    match a {
        LoopAnnotation::Serial => String::new(),
        LoopAnnotation::Parallel => " @parallel".into(),
        LoopAnnotation::Vectorize(l) => format!(" @vectorize({l})"),
        LoopAnnotation::Unroll(f) => format!(" @unroll({f})"),
        LoopAnnotation::Pipelined(d) => format!(" @pipelined({d})"),
    }
}

fn fmt_stmt(s: &Stmt, depth: usize, out: &mut String) {
    let pad = "  ".repeat(depth);
    match s {
        Stmt::Seq(v) => {
            for s in v {
                fmt_stmt(s, depth, out);
            }
        }
        Stmt::For {
            var,
            lo,
            hi,
            annotation,
            body,
        } => {
            let _ = writeln!(
                out,
                "{pad}for {var} in [{}, {}){}:",
                expr_to_string(lo),
                expr_to_string(hi),
                fmt_annotation(*annotation)
            );
            fmt_stmt(body, depth + 1, out);
        }
        Stmt::If { cond, body } => {
            let mut c = String::new();
            fmt_cond(cond, &mut c);
            let _ = writeln!(out, "{pad}if {c}:");
            fmt_stmt(body, depth + 1, out);
        }
        Stmt::Alloc { buffer, scope } => {
            let _ = writeln!(
                out,
                "{pad}alloc {}: {} {}",
                buffer.name,
                fmt_type(buffer.dtype, &buffer.extents),
                scope.name()
            );
        }
        Stmt::Store {
            buffer,
            indices,
            value,
        } => {
            let idx: Vec<String> = indices.iter().map(expr_to_string).collect();
            let _ = writeln!(
                out,
                "{pad}{buffer}[{}] = {}",
                idx.join(", "),
                expr_to_string(value)
            );
        }
    }
}

/// Serializes a program to canonical text.
pub fn serialize_loop(p: &LoopProgram) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "program {}", p.name);
    for b in &p.inputs {
        let _ = writeln!(out, "input {}: {}", b.name, fmt_type(b.dtype, &b.extents));
    }
    for b in &p.outputs {
        let _ = writeln!(out, "output {}: {}", b.name, fmt_type(b.dtype, &b.extents));
    }
    if !p.intrinsics_used.is_empty() {
        let names: Vec<&str> = p.intrinsics_used.iter().map(|s| s.as_str()).collect();
        let _ = writeln!(out, "intrinsics {}", names.join(" "));
    }
    out.push_str("body:\n");
    fmt_stmt(&p.body, 1, &mut out);
    out
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Float(f32),
    Sym(&'static str),
}

struct Lexer {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    line: usize,
}

const SYMBOLS: [&str; 20] = [
    "&&", "<=", ">=", "==", "!=", "+", "-", "*", "/", "%", "(", ")", "[", "]", ",", "<", ">", "=",
    ":", "@",
];

fn lex(s: &str, line: usize) -> Result<Lexer, ParseError> {
    let bytes = s.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0usize;
    'outer: while i < bytes.len() {
        let c = bytes[i] as char;
        if c == ' ' {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            let mut is_float = false;
            while i < bytes.len() {
                let ch = bytes[i] as char;
                if ch.is_ascii_digit() {
                    i += 1;
                } else if ch == '.' && !is_float {
                    is_float = true;
                    i += 1;
                } else if (ch == 'e' || ch == 'E')
                    && i + 1 < bytes.len()
                    && ((bytes[i + 1] as char).is_ascii_digit() || bytes[i + 1] == b'-')
                {
                    is_float = true;
                    i += 2;
                } else {
                    break;
                }
            }
            let text = &s[start..i];
            let tok = if is_float {
                Tok::Float(text.parse().map_err(|_| ParseError {
                    line,
                    col: start + 1,
                    message: format!("bad float literal `{text}`"),
                })?)
            } else {
                Tok::Int(text.parse().map_err(|_| ParseError {
                    line,
                    col: start + 1,
                    message: format!("bad int literal `{text}`"),
                })?)
            };
            toks.push((tok, start + 1));
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() {
                let ch = bytes[i] as char;
                if ch.is_ascii_alphanumeric() || ch == '_' {
                    i += 1;
                } else {
                    break;
                }
            }
            toks.push((Tok::Ident(s[start..i].to_string()), start + 1));
            continue;
        }
        for sym in SYMBOLS {
            if s[i..].starts_with(sym) {
                toks.push((Tok::Sym(sym), i + 1));
                i += sym.len();
                continue 'outer;
            }
        }
        return Err(ParseError {
            line,
            col: i + 1,
            message: format!("unexpected character `{c}`"),
        });
    }
    Ok(Lexer {
        toks,
        pos: 0,
        line,
    })
}

impl Lexer {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn col(&self) -> usize {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map(|(_, c)| *c)
            .unwrap_or(1)
    }

    fn next(&mut self) -> Result<Tok, ParseError> {
        let item = self.toks.get(self.pos).cloned();
        self.pos += 1;
        item.map(|(t, _)| t).ok_or(ParseError {
            line: self.line,
            col: self.col(),
            message: "unexpected end of line".into(),
        })
    }

    fn expect_sym(&mut self, sym: &str) -> Result<(), ParseError> {
        let col = self.col();
        match self.next()? {
            Tok::Sym(s) if s == sym => Ok(()),
            t => Err(ParseError {
                line: self.line,
                col,
                message: format!("expected `{sym}`, got {t:?}"),
            }),
        }
    }

    fn expect_ident(&mut self) -> Result<String, ParseError> {
        let col = self.col();
        match self.next()? {
            Tok::Ident(s) => Ok(s),
            t => Err(ParseError {
                line: self.line,
                col,
                message: format!("expected identifier, got {t:?}"),
            }),
        }
    }

    fn eat_sym(&mut self, sym: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Sym(s)) if *s == sym) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            line: self.line,
            col: self.col(),
            message: message.into(),
        })
    }
}

/// Folds unary negation of literals so the canonical form round-trips.
fn neg_expr(e: Expr) -> Expr {
    match e {
        Expr::IntLit(v) => Expr::IntLit(-v),
        Expr::Const(Scalar::F32(v)) => Expr::Const(Scalar::F32(-v)),
        other => Expr::Un(UnOp::Neg, Box::new(other)),
    }
}

fn parse_expr(lx: &mut Lexer) -> Result<Expr, ParseError> {
    parse_addsub(lx)
}

fn parse_addsub(lx: &mut Lexer) -> Result<Expr, ParseError> {
    let mut left = parse_muldiv(lx)?;
    loop {
        if lx.eat_sym("+") {
            let right = parse_muldiv(lx)?;
            left = Expr::add(left, right);
        } else if lx.eat_sym("-") {
            let right = parse_muldiv(lx)?;
            left = Expr::sub(left, right);
        } else {
            return Ok(left);
        }
    }
}

fn parse_muldiv(lx: &mut Lexer) -> Result<Expr, ParseError> {
    let mut left = parse_unary(lx)?;
    loop {
        let op = if lx.eat_sym("*") {
            BinOp::Mul
        } else if lx.eat_sym("/") {
            BinOp::Div
        } else if lx.eat_sym("%") {
            BinOp::Mod
        } else {
            return Ok(left);
        };
        let right = parse_unary(lx)?;
        left = Expr::Bin(op, Box::new(left), Box::new(right));
    }
}

fn parse_unary(lx: &mut Lexer) -> Result<Expr, ParseError> {
    if lx.eat_sym("-") {
        return Ok(neg_expr(parse_unary(lx)?));
    }
    parse_atom(lx)
}

fn parse_atom(lx: &mut Lexer) -> Result<Expr, ParseError> {
    let col = lx.col();
    match lx.next()? {
        Tok::Int(v) => Ok(Expr::IntLit(v)),
        Tok::Float(v) => Ok(Expr::Const(Scalar::F32(v))),
        Tok::Sym("(") => {
            let e = parse_expr(lx)?;
            lx.expect_sym(")")?;
            Ok(e)
        }
        Tok::Ident(name) => match name.as_str() {
            "true" => Ok(Expr::Const(Scalar::Bool(true))),
            "false" => Ok(Expr::Const(Scalar::Bool(false))),
            "inf" => Ok(Expr::Const(Scalar::F32(f32::INFINITY))),
            "NaN" => Ok(Expr::Const(Scalar::F32(f32::NAN))),
            "relu" | "sigmoid" => {
                lx.expect_sym("(")?;
                let a = parse_expr(lx)?;
                lx.expect_sym(")")?;
                let op = if name == "relu" { UnOp::Relu } else { UnOp::Sigmoid };
                Ok(Expr::Un(op, Box::new(a)))
            }
            "fma" => {
                lx.expect_sym("(")?;
                let a = parse_expr(lx)?;
                lx.expect_sym(",")?;
                let b = parse_expr(lx)?;
                lx.expect_sym(",")?;
                let c = parse_expr(lx)?;
                lx.expect_sym(")")?;
                Ok(Expr::Fma(Box::new(a), Box::new(b), Box::new(c)))
            }
            "cast" => {
                lx.expect_sym("<")?;
                let d = lx.expect_ident()?;
                let dtype = DType::from_str(&d).map_err(|m| ParseError {
                    line: lx.line,
                    col,
                    message: m,
                })?;
                lx.expect_sym(">")?;
                lx.expect_sym("(")?;
                let a = parse_expr(lx)?;
                lx.expect_sym(")")?;
                Ok(Expr::Cast(dtype, Box::new(a)))
            }
            _ => {
                if lx.eat_sym("[") {
                    let mut indices = Vec::new();
                    if !lx.eat_sym("]") {
                        loop {
                            indices.push(parse_expr(lx)?);
                            if lx.eat_sym("]") {
                                break;
                            }
                            lx.expect_sym(",")?;
                        }
                    }
                    Ok(Expr::Load(name, indices))
                } else {
                    Ok(Expr::Var(name))
                }
            }
        },
        t => Err(ParseError {
            line: lx.line,
            col,
            message: format!("unexpected token {t:?}"),
        }),
    }
}

fn parse_cond(lx: &mut Lexer) -> Result<CondExpr, ParseError> {
    let mut left = parse_cmp(lx)?;
    while lx.eat_sym("&&") {
        let right = parse_cmp(lx)?;
        left = CondExpr::and(left, right);
    }
    Ok(left)
}

fn parse_cmp(lx: &mut Lexer) -> Result<CondExpr, ParseError> {
    let a = parse_expr(lx)?;
    let op = if lx.eat_sym("<=") {
        CmpOp::Le
    } else if lx.eat_sym(">=") {
        CmpOp::Ge
    } else if lx.eat_sym("==") {
        CmpOp::Eq
    } else if lx.eat_sym("!=") {
        CmpOp::Ne
    } else if lx.eat_sym("<") {
        CmpOp::Lt
    } else if lx.eat_sym(">") {
        CmpOp::Gt
    } else {
        return lx.err("expected comparison operator");
    };
    let b = parse_expr(lx)?;
    Ok(CondExpr::Cmp(op, a, b))
}

fn parse_buffer_type(lx: &mut Lexer, name: String) -> Result<Buffer, ParseError> {
    let col = lx.col();
    let dt = lx.expect_ident()?;
    let dtype = DType::from_str(&dt).map_err(|m| ParseError {
        line: lx.line,
        col,
        message: m,
    })?;
    lx.expect_sym("[")?;
    let mut extents = Vec::new();
    if !lx.eat_sym("]") {
        loop {
            let col = lx.col();
            match lx.next()? {
                Tok::Int(v) if v >= 1 => extents.push(v as usize),
                t => {
                    return Err(ParseError {
                        line: lx.line,
                        col,
                        message: format!("expected extent >= 1, got {t:?}"),
                    })
                }
            }
            if lx.eat_sym("]") {
                break;
            }
            lx.expect_sym(",")?;
        }
    }
    Ok(Buffer {
        name,
        dtype,
        extents,
    })
}

fn line_depth(line: &str, line_no: usize) -> Result<usize, ParseError> {
    let spaces = line.len() - line.trim_start_matches(' ').len();
    if line.trim_start().starts_with('\t') || line.as_bytes().first() == Some(&b'\t') {
        return Err(ParseError {
            line: line_no,
            col: 1,
            message: "tabs are not allowed; indent with 2 spaces".into(),
        });
    }
    if !spaces.is_multiple_of(2) {
        return Err(ParseError {
            line: line_no,
            col: spaces,
            message: "indentation must be a multiple of 2 spaces".into(),
        });
    }
    Ok(spaces / 2)
}

struct BlockParser<'a> {
    lines: &'a [(usize, String)], // (line number, content)
    idx: usize,
}

impl<'a> BlockParser<'a> {
    fn parse_block(&mut self, depth: usize) -> Result<Vec<Stmt>, ParseError> {
        let mut stmts = Vec::new();
        while self.idx < self.lines.len() {
            let (line_no, raw) = &self.lines[self.idx];
            let d = line_depth(raw, *line_no)?;
            if d < depth {
                break;
            }
            if d > depth {
                return Err(ParseError {
                    line: *line_no,
                    col: d * 2,
                    message: "unexpected indentation".into(),
                });
            }
            self.idx += 1;
            let trimmed = raw.trim();
            let mut lx = lex(trimmed, *line_no)?;
            let stmt = self.parse_stmt(&mut lx, *line_no, depth)?;
            stmts.push(stmt);
        }
        Ok(stmts)
    }

    fn parse_stmt(
        &mut self,
        lx: &mut Lexer,
        line_no: usize,
        depth: usize,
    ) -> Result<Stmt, ParseError> {
        let head = match lx.peek() {
            Some(Tok::Ident(s)) => s.clone(),
            _ => String::new(),
        };
        match head.as_str() {
            "for" => {
                lx.next()?;
                let var = lx.expect_ident()?;
                let kw = lx.expect_ident()?;
                if kw != "in" {
                    return lx.err("expected `in`");
                }
                lx.expect_sym("[")?;
                let lo = parse_expr(lx)?;
                lx.expect_sym(",")?;
                let hi = parse_expr(lx)?;
                lx.expect_sym(")")?;
                let annotation = self.parse_annotation(lx, line_no)?;
                lx.expect_sym(":").map_err(|_| ParseError {
                    line: line_no,
                    col: lx.col(),
                    message: "for header must end with `:`".into(),
                })?;
                if !lx.at_end() {
                    return lx.err("trailing content after `:`");
                }
                let body = seq(self.parse_block(depth + 1)?);
                Ok(Stmt::For {
                    var,
                    lo,
                    hi,
                    annotation,
                    body: Box::new(body),
                })
            }
            "if" => {
                lx.next()?;
                let cond = parse_cond(lx)?;
                lx.expect_sym(":")?;
                if !lx.at_end() {
                    return lx.err("trailing content after `:`");
                }
                let body = seq(self.parse_block(depth + 1)?);
                Ok(Stmt::If {
                    cond,
                    body: Box::new(body),
                })
            }
            "alloc" => {
                lx.next()?;
                let name = lx.expect_ident()?;
                lx.expect_sym(":")?;
                // Reuse `name: TYPE scope` form.
                let buffer = parse_buffer_type(lx, name)?;
                let scope_name = lx.expect_ident()?;
                let scope = match scope_name.as_str() {
                    "global" => AllocScope::Global,
                    "local" => AllocScope::Local,
                    "cache" => AllocScope::Cache,
                    other => return lx.err(format!("unknown alloc scope `{other}`")),
                };
                if !lx.at_end() {
                    return lx.err("trailing content after alloc");
                }
                Ok(Stmt::Alloc { buffer, scope })
            }
            _ => {
                // Store: `name[indices] = expr`
                let name = lx.expect_ident()?;
                lx.expect_sym("[")?;
                let mut indices = Vec::new();
                if !lx.eat_sym("]") {
                    loop {
                        indices.push(parse_expr(lx)?);
                        if lx.eat_sym("]") {
                            break;
                        }
                        lx.expect_sym(",")?;
                    }
                }
                lx.expect_sym("=")?;
                let value = parse_expr(lx)?;
                if !lx.at_end() {
                    return lx.err("trailing content after store");
                }
                Ok(Stmt::Store {
                    buffer: name,
                    indices,
                    value,
                })
            }
        }
    }

    fn parse_annotation(
        &mut self,
        lx: &mut Lexer,
        line_no: usize,
    ) -> Result<LoopAnnotation, ParseError> {
        if !lx.eat_sym("@") {
            return Ok(LoopAnnotation::Serial);
        }
        let name = lx.expect_ident()?;
        let mut arg = || -> Result<i64, ParseError> {
            lx.expect_sym("(")?;
            let col = lx.col();
            let v = match lx.next()? {
                Tok::Int(v) => v,
                t => {
                    return Err(ParseError {
                        line: line_no,
                        col,
                        message: format!("expected integer annotation arg, got {t:?}"),
                    })
                }
            };
            lx.expect_sym(")")?;
            Ok(v)
        };
        let annotation = match name.as_str() {
            "parallel" => LoopAnnotation::Parallel,
            "serial" => LoopAnnotation::Serial,
            "vectorize" => LoopAnnotation::Vectorize(arg()? as u8),
            "unroll" => LoopAnnotation::Unroll(arg()? as u8),
            "pipelined" => LoopAnnotation::Pipelined(arg()? as u8),
            other => {
                return Err(ParseError {
                    line: line_no,
                    col: 1,
                    message: format!("unknown annotation `@{other}`"),
                })
            }
        };
        if !annotation.in_domain() {
            return Err(ParseError {
                line: line_no,
                col: 1,
                message: format!("annotation {annotation:?} parameter out of domain"),
            });
        }
        Ok(annotation)
    }
}

/// Parses canonical loop-IR text.
pub fn parse_loop(text: &str) -> Result<LoopProgram, ParseError> {
    let mut name = None;
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    let mut intrinsics = std::collections::BTreeSet::new();
    let mut body_lines: Vec<(usize, String)> = Vec::new();
    let mut in_body = false;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
            continue;
        }
        if in_body {
            // Body statements are indented at least one level.
            let stripped = raw
                .strip_prefix("  ")
                .ok_or(ParseError {
                    line: line_no,
                    col: 1,
                    message: "body statements must be indented by 2 spaces".into(),
                })?
                .trim_end();
            body_lines.push((line_no, stripped.to_string()));
            continue;
        }
        let line = raw.trim_end();
        if let Some(rest) = line.strip_prefix("program ") {
            name = Some(rest.trim().to_string());
        } else if let Some(rest) = line.strip_prefix("input ") {
            inputs.push(parse_decl(rest, line_no)?);
        } else if let Some(rest) = line.strip_prefix("output ") {
            outputs.push(parse_decl(rest, line_no)?);
        } else if let Some(rest) = line.strip_prefix("intrinsics ") {
            intrinsics.extend(rest.split_whitespace().map(|s| s.to_string()));
        } else if line == "body:" {
            in_body = true;
        } else {
            return Err(ParseError {
                line: line_no,
                col: 1,
                message: format!("unexpected header line `{line}`"),
            });
        }
    }
    if !in_body {
        return Err(ParseError {
            line: text.lines().count().max(1),
            col: 1,
            message: "missing `body:` section".into(),
        });
    }
    let mut bp = BlockParser {
        lines: &body_lines,
        idx: 0,
    };
    let stmts = bp.parse_block(0)?;
    Ok(LoopProgram {
        name: name.unwrap_or_default(),
        inputs,
        outputs,
        body: seq(stmts),
        intrinsics_used: intrinsics,
    })
}

fn parse_decl(rest: &str, line_no: usize) -> Result<Buffer, ParseError> {
    let mut lx = lex(rest.trim(), line_no)?;
    let name = lx.expect_ident()?;
    lx.expect_sym(":")?;
    let buffer = parse_buffer_type(&mut lx, name)?;
    if !lx.at_end() {
        return lx.err("trailing content after declaration");
    }
    Ok(buffer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loop_ir::validate_loop;

    const MATMUL: &str = "program matmul\n\
                          input a: F32[2,3]\n\
                          input b: F32[3,2]\n\
                          output c: F32[2,2]\n\
                          body:\n\
                          \x20\x20for i in [0, 2):\n\
                          \x20\x20\x20\x20for j in [0, 2):\n\
                          \x20\x20\x20\x20\x20\x20c[i, j] = 0.0\n\
                          \x20\x20\x20\x20\x20\x20for k in [0, 3) @unroll(2):\n\
                          \x20\x20\x20\x20\x20\x20\x20\x20c[i, j] = c[i, j] + a[i, k] * b[k, j]\n";

    #[test]
    fn parse_and_reserialize_is_byte_stable() {
        let p = parse_loop(MATMUL).unwrap();
        assert!(validate_loop(&p).is_empty(), "{:?}", validate_loop(&p));
        let text = serialize_loop(&p);
        assert_eq!(text, MATMUL);
        let p2 = parse_loop(&text).unwrap();
        assert_eq!(p, p2);
    }

    #[test]
    fn unknown_annotation_is_parse_error() {
        let text = MATMUL.replace("@unroll(2)", "@hoist(2)");
        let err = parse_loop(&text).unwrap_err();
        assert!(err.message.contains("hoist"));
    }

    #[test]
    fn out_of_domain_annotation_is_parse_error() {
        let text = MATMUL.replace("@unroll(2)", "@unroll(3)");
        assert!(parse_loop(&text).is_err());
    }

    #[test]
    fn precedence_parens_roundtrip() {
        let text = "program p\n\
                    input a: F32[4]\n\
                    output c: F32[4]\n\
                    body:\n\
                    \x20\x20for i in [0, 4):\n\
                    \x20\x20\x20\x20c[i] = (a[i] + 1.0) * -a[i] - a[i] / 2.0\n";
        let p = parse_loop(text).unwrap();
        assert_eq!(serialize_loop(&p), text);
    }

    #[test]
    fn guards_and_allocs_roundtrip() {
        let text = "program g\n\
                    input a: F32[8]\n\
                    output c: F32[8]\n\
                    body:\n\
                    \x20\x20alloc t: F32[2] cache\n\
                    \x20\x20for i in [0, 8) @pipelined(2):\n\
                    \x20\x20\x20\x20if i + 1 < 8 && i % 2 == 0:\n\
                    \x20\x20\x20\x20\x20\x20t[(i + 1) % 2] = a[i]\n\
                    \x20\x20\x20\x20c[i] = a[i]\n";
        let p = parse_loop(text).unwrap();
        assert_eq!(serialize_loop(&p), text);
    }

    #[test]
    fn negative_literals_fold() {
        let text = "program n\n\
                    output c: I32[1]\n\
                    body:\n\
                    \x20\x20c[0] = -5\n";
        let p = parse_loop(text).unwrap();
        match &p.body {
            Stmt::Store { value, .. } => assert_eq!(value, &Expr::IntLit(-5)),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(serialize_loop(&p), text);
    }

    #[test]
    fn cast_and_fma_roundtrip() {
        let text = "program cf\n\
                    input a: F32[4]\n\
                    input b: F32[4]\n\
                    output c: I32[4]\n\
                    intrinsics fma32\n\
                    body:\n\
                    \x20\x20for i in [0, 4):\n\
                    \x20\x20\x20\x20c[i] = cast<I32>(fma(a[i], b[i], 1.0))\n";
        let p = parse_loop(text).unwrap();
        assert!(p.intrinsics_used.contains("fma32"));
        assert_eq!(serialize_loop(&p), text);
    }
}
