// SPDX-License-Identifier: Apache-2.0

//! Vectorize legalization. A `@vectorize(l)` loop keeps its annotation only
//! when it is innermost, its body is straight-line stores, the trip count is
//! a static multiple of `l`, and no dependence is carried across iterations;
//! otherwise it demotes to serial.
//!
//! Legal loops are rewritten into explicit lane-grouped form: per store, all
//! lane values are computed into a lane buffer before any lane is written
//! back. That gather-then-scatter order is exactly what loop-carried
//! dependences forbid, which is what makes the dependence check load-bearing.

use std::collections::BTreeMap;

use crate::bugs::{BugId, BugSet};
use crate::loop_ir::{
    for_loop, seq, AllocScope, Buffer, Expr, LoopAnnotation, LoopProgram, Stmt, StmtPath,
};
use crate::tensor::DType;

use super::deps::has_loop_carried_dependence;
use super::{LLPassId, LLTrace, LlPassError, NameGen};

fn straight_line_stores(body: &Stmt) -> Option<Vec<&Stmt>> {
    match body {
        Stmt::Store { .. } => Some(vec![body]),
        Stmt::Seq(v) => {
            if v.iter().all(|s| matches!(s, Stmt::Store { .. })) {
                Some(v.iter().collect())
            } else {
                None
            }
        }
        _ => None,
    }
}

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

struct Ctx<'a> {
    namer: NameGen,
    dtypes: BTreeMap<String, DType>,
    skip_dep_check: bool,
    lane_counter: usize,
    traces: &'a mut Vec<LLTrace>,
}

pub(super) fn run(p: &LoopProgram, bugs: &BugSet) -> Result<(LoopProgram, Vec<LLTrace>), LlPassError> {
    let mut traces = Vec::new();
    let mut ctx = Ctx {
        namer: NameGen::for_program(p),
        dtypes: buffer_dtypes(p),
        skip_dep_check: bugs.has(BugId::B3),
        lane_counter: 0,
        traces: &mut traces,
    };
    let body = rebuild(&p.body, &mut Vec::new(), &mut ctx);
    let mut out = p.clone();
    out.body = body;
    Ok((out, traces))
}

fn rebuild(s: &Stmt, path: &mut Vec<usize>, ctx: &mut Ctx) -> Stmt {
    let rebuilt = match s {
        Stmt::For {
            var,
            lo,
            hi,
            annotation,
            body,
        } => {
            path.push(0);
            let body = rebuild(body, path, ctx);
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
            let body = rebuild(body, path, ctx);
            path.pop();
            Stmt::If {
                cond: cond.clone(),
                body: Box::new(body),
            }
        }
        Stmt::Seq(v) => seq(v
            .iter()
            .enumerate()
            .map(|(i, s)| {
                path.push(i);
                let r = rebuild(s, path, ctx);
                path.pop();
                r
            })
            .collect()),
        other => other.clone(),
    };

    let Stmt::For {
        var,
        lo,
        hi,
        annotation: LoopAnnotation::Vectorize(lanes),
        body,
    } = &rebuilt
    else {
        return rebuilt;
    };
    let lanes = *lanes as i64;
    let legal = (|| {
        straight_line_stores(body)?;
        let (lo_c, hi_c) = (lo.const_int()?, hi.const_int()?);
        let trip = hi_c - lo_c;
        if trip <= 0 || trip % lanes != 0 {
            return None;
        }
        if !ctx.skip_dep_check && has_loop_carried_dependence(var, body) {
            return None;
        }
        Some((lo_c, trip))
    })();

    match legal {
        None => {
            ctx.traces.push(LLTrace::fired(
                LLPassId::VectorizeLegalize,
                "vec.demote",
                StmtPath(path.clone()),
            ));
            Stmt::For {
                var: var.clone(),
                lo: lo.clone(),
                hi: hi.clone(),
                annotation: LoopAnnotation::Serial,
                body: body.clone(),
            }
        }
        Some((lo_c, trip)) => {
            let stores = straight_line_stores(body).unwrap();
            let group_var = ctx.namer.fresh(&format!("{var}_g"));
            // var := lo + group*lanes + k, with k constant per lane copy.
            let lane_expr = |k: i64| {
                Expr::add(
                    Expr::add(
                        Expr::IntLit(lo_c),
                        Expr::mul(Expr::var(&group_var), Expr::IntLit(lanes)),
                    ),
                    Expr::IntLit(k),
                )
            };
            let mut stmts = Vec::new();
            for store in stores {
                let Stmt::Store {
                    buffer,
                    indices,
                    value,
                } = store
                else {
                    unreachable!();
                };
                let dtype = ctx.dtypes.get(buffer).copied().unwrap_or(DType::F32);
                let lane_buf = ctx.namer.fresh(&format!("vlane{}", ctx.lane_counter));
                ctx.lane_counter += 1;
                stmts.push(Stmt::Alloc {
                    buffer: Buffer::new(&lane_buf, dtype, vec![lanes as usize]),
                    scope: AllocScope::Local,
                });
                for k in 0..lanes {
                    stmts.push(Stmt::Store {
                        buffer: lane_buf.clone(),
                        indices: vec![Expr::IntLit(k)],
                        value: value.subst(var, &lane_expr(k)),
                    });
                }
                for k in 0..lanes {
                    stmts.push(Stmt::Store {
                        buffer: buffer.clone(),
                        indices: indices
                            .iter()
                            .map(|e| e.subst(var, &lane_expr(k)))
                            .collect(),
                        value: Expr::load(&lane_buf, vec![Expr::IntLit(k)]),
                    });
                }
            }
            ctx.traces.push(LLTrace::fired(
                LLPassId::VectorizeLegalize,
                "vec.keep",
                StmtPath(path.clone()),
            ));
            for_loop(
                &group_var,
                Expr::IntLit(0),
                Expr::IntLit(trip / lanes),
                LoopAnnotation::Vectorize(lanes as u8),
                seq(stmts),
            )
        }
    }
}
