// SPDX-License-Identifier: Apache-2.0

//! Intrinsic mapping: rewrites F32 multiply-add expression trees
//! `a*b + c` (either addend order) into the single-rounding `fma(a, b, c)`
//! node. This is the one sanctioned semantic deviation in the pipeline; the
//! oracles widen tolerances when `intrinsics_used` is non-empty.

use std::collections::BTreeMap;

use crate::bugs::{BugId, BugSet};
use crate::loop_ir::{BinOp, Expr, LoopProgram, Stmt, StmtPath, UnOp};
use crate::tensor::DType;

use super::{LLPassId, LLTrace, LlPassError};

fn buffer_dtypes(p: &LoopProgram) -> BTreeMap<String, DType> {
    let mut map = BTreeMap::new();
    for b in p.inputs.iter().chain(p.outputs.iter()) {
        map.insert(b.name.clone(), b.dtype);
    }
    for b in p.alloc_buffers() {
        map.insert(b.name.clone(), b.dtype);
    }
    map
}

/// Static dtype of a value expression, when determinable.
fn expr_dtype(e: &Expr, dtypes: &BTreeMap<String, DType>) -> Option<DType> {
    match e {
        Expr::Const(s) => Some(s.dtype()),
        Expr::IntLit(_) | Expr::Var(_) => None,
        Expr::Load(b, _) => dtypes.get(b).copied(),
        Expr::Bin(_, a, b) => expr_dtype(a, dtypes).or_else(|| expr_dtype(b, dtypes)),
        Expr::Un(UnOp::Sigmoid, _) => Some(DType::F32),
        Expr::Un(_, a) => expr_dtype(a, dtypes),
        Expr::Fma(..) => Some(DType::F32),
        Expr::Cast(d, _) => Some(*d),
    }
}

fn map_expr(
    e: &Expr,
    dtypes: &BTreeMap<String, DType>,
    misassociate: bool,
    fired: &mut bool,
) -> Expr {
    let rebuilt = match e {
        Expr::Bin(op, a, b) => Expr::Bin(
            *op,
            Box::new(map_expr(a, dtypes, misassociate, fired)),
            Box::new(map_expr(b, dtypes, misassociate, fired)),
        ),
        Expr::Un(op, a) => Expr::Un(*op, Box::new(map_expr(a, dtypes, misassociate, fired))),
        Expr::Fma(a, b, c) => Expr::Fma(
            Box::new(map_expr(a, dtypes, misassociate, fired)),
            Box::new(map_expr(b, dtypes, misassociate, fired)),
            Box::new(map_expr(c, dtypes, misassociate, fired)),
        ),
        Expr::Cast(d, a) => Expr::Cast(*d, Box::new(map_expr(a, dtypes, misassociate, fired))),
        Expr::Load(b, idx) => Expr::Load(
            b.clone(),
            idx.iter()
                .map(|i| map_expr(i, dtypes, misassociate, fired))
                .collect(),
        ),
        other => other.clone(),
    };
    if expr_dtype(&rebuilt, dtypes) != Some(DType::F32) {
        return rebuilt;
    }
    if let Expr::Bin(BinOp::Add, a, b) = &rebuilt {
        if let Expr::Bin(BinOp::Mul, x, y) = a.as_ref() {
            *fired = true;
            return Expr::Fma(x.clone(), y.clone(), b.clone());
        }
        if let Expr::Bin(BinOp::Mul, x, y) = b.as_ref() {
            *fired = true;
            return Expr::Fma(x.clone(), y.clone(), a.clone());
        }
    }
    if misassociate {
        // Seeded bug B4: a*(b+c) misread as a multiply-add tree.
        if let Expr::Bin(BinOp::Mul, a, b) = &rebuilt {
            if let Expr::Bin(BinOp::Add, x, y) = b.as_ref() {
                *fired = true;
                return Expr::Fma(a.clone(), x.clone(), y.clone());
            }
            if let Expr::Bin(BinOp::Add, x, y) = a.as_ref() {
                *fired = true;
                return Expr::Fma(b.clone(), x.clone(), y.clone());
            }
        }
    }
    rebuilt
}

pub(super) fn run(p: &LoopProgram, bugs: &BugSet) -> Result<(LoopProgram, Vec<LLTrace>), LlPassError> {
    let dtypes = buffer_dtypes(p);
    let misassociate = bugs.has(BugId::B4);
    let mut traces = Vec::new();
    let body = rebuild(&p.body, &mut Vec::new(), &dtypes, misassociate, &mut traces);
    let mut out = p.clone();
    out.body = body;
    if !traces.is_empty() {
        out.intrinsics_used.insert("fma32".to_string());
    }
    Ok((out, traces))
}

fn rebuild(
    s: &Stmt,
    path: &mut Vec<usize>,
    dtypes: &BTreeMap<String, DType>,
    misassociate: bool,
    traces: &mut Vec<LLTrace>,
) -> Stmt {
    match s {
        Stmt::Store {
            buffer,
            indices,
            value,
        } => {
            let mut fired = false;
            let value = map_expr(value, dtypes, misassociate, &mut fired);
            if fired {
                traces.push(LLTrace::fired(
                    LLPassId::IntrinsicMap,
                    "intr.fma",
                    StmtPath(path.clone()),
                ));
            }
            Stmt::Store {
                buffer: buffer.clone(),
                indices: indices.clone(),
                value,
            }
        }
        Stmt::For {
            var,
            lo,
            hi,
            annotation,
            body,
        } => {
            path.push(0);
            let body = rebuild(body, path, dtypes, misassociate, traces);
            path.pop();
            Stmt::For {
                var: var.clone(),
                lo: lo.clone(),
                hi: hi.clone(),
                annotation: *annotation,
                body: Box::new(body),
            }
        }
        Stmt::If { cond, body } => {
            path.push(0);
            let body = rebuild(body, path, dtypes, misassociate, traces);
            path.pop();
            Stmt::If {
                cond: cond.clone(),
                body: Box::new(body),
            }
        }
        Stmt::Seq(v) => crate::loop_ir::seq(
            v.iter()
                .enumerate()
                .map(|(i, s)| {
                    path.push(i);
                    let r = rebuild(s, path, dtypes, misassociate, traces);
                    path.pop();
                    r
                })
                .collect(),
        ),
        other => other.clone(),
    }
}
