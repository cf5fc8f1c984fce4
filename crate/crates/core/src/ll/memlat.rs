// SPDX-License-Identifier: Apache-2.0

//! Memory latency hiding: converts `@pipelined(d)` loops that stage data
//! through a cache-scope buffer into double-buffered form. The staging
//! buffer gains a leading slot dimension of 2; a prologue fills slot 0, the
//! steady state prefetches iteration `i+1` into the alternate slot while
//! computing from the current one, and the final iteration computes without
//! prefetching.

use crate::loop_ir::{
    seq, AllocScope, BinOp, Buffer, CmpOp, CondExpr, Expr, LoopAnnotation, LoopProgram, Stmt,
    StmtPath,
};

use super::{LLPassId, LLTrace, LlPassError, NameGen};

/// Splits a pipelined body into `(staging buffer, copy phase, rest)` when it
/// matches the canonical staging shape.
fn match_staged(body: &Stmt) -> Option<(&Buffer, &Stmt, &[Stmt])> {
    let Stmt::Seq(items) = body else {
        return None;
    };
    if items.len() < 3 {
        return None;
    }
    let Stmt::Alloc {
        buffer,
        scope: AllocScope::Cache,
    } = &items[0]
    else {
        return None;
    };
    let copy = &items[1];
    let rest = &items[2..];
    // The copy phase writes only the staging buffer, never reads it, and
    // declares nothing (it is duplicated into prologue and prefetch).
    let copy_stores = copy.stores();
    if copy_stores.is_empty() || copy_stores.iter().any(|(b, _)| *b != buffer.name) {
        return None;
    }
    if copy.loads().iter().any(|(b, _)| *b == buffer.name) {
        return None;
    }
    if !copy.alloc_names().is_empty() {
        return None;
    }
    // The rest never writes the staging buffer.
    if rest
        .iter()
        .any(|s| s.stores().iter().any(|(b, _)| *b == buffer.name))
    {
        return None;
    }
    Some((buffer, copy, rest))
}

fn slot_mod2(offset: Expr) -> Expr {
    Expr::Bin(BinOp::Mod, Box::new(offset), Box::new(Expr::IntLit(2)))
}

pub(super) fn run(p: &LoopProgram) -> Result<(LoopProgram, Vec<LLTrace>), LlPassError> {
    let mut namer = NameGen::for_program(p);
    let mut traces = Vec::new();
    let body = rebuild(&p.body, &mut Vec::new(), &mut namer, &mut traces);
    let mut out = p.clone();
    out.body = body;
    Ok((out, traces))
}

fn rebuild(
    s: &Stmt,
    path: &mut Vec<usize>,
    namer: &mut NameGen,
    traces: &mut Vec<LLTrace>,
) -> Stmt {
    let rebuilt = match s {
        Stmt::For {
            var,
            lo,
            hi,
            annotation,
            body,
        } => {
            path.push(0);
            let body = rebuild(body, path, namer, traces);
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
            let body = rebuild(body, path, namer, traces);
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
                let r = rebuild(s, path, namer, traces);
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
        annotation: LoopAnnotation::Pipelined(_),
        body,
    } = &rebuilt
    else {
        return rebuilt;
    };
    let Some((stage, copy, rest)) = match_staged(body) else {
        return rebuilt;
    };
    let _ = namer;

    // The staging buffer keeps its name but gains a leading slot dimension.
    let mut db_extents = vec![2usize];
    db_extents.extend(stage.extents.iter().copied());
    let db = Buffer::new(&stage.name, stage.dtype, db_extents);
    let stage_name = stage.name.clone();

    // Copy phases are substituted for their target iteration first, then
    // retargeted at the slotted buffer (the slot index may mention `var`).
    let retarget =
        |copy: &Stmt, iter_expr: &Expr, slot: Expr| -> Stmt {
            copy.subst(var, iter_expr).reslot_buffer(&stage_name, &slot)
        };

    let prologue = Stmt::If {
        cond: CondExpr::Cmp(CmpOp::Lt, lo.clone(), hi.clone()),
        body: Box::new(retarget(copy, lo, Expr::IntLit(0))),
    };
    let next_iter = Expr::add(Expr::var(var), Expr::IntLit(1));
    let prefetch = Stmt::If {
        cond: CondExpr::Cmp(CmpOp::Lt, next_iter.clone(), hi.clone()),
        body: Box::new(retarget(
            copy,
            &next_iter,
            slot_mod2(Expr::sub(next_iter.clone(), lo.clone())),
        )),
    };
    let current_slot = slot_mod2(Expr::sub(Expr::var(var), lo.clone()));
    let compute: Vec<Stmt> = rest
        .iter()
        .map(|s| s.reslot_buffer(&stage_name, &current_slot))
        .collect();

    let mut steady_body = vec![prefetch];
    steady_body.extend(compute);
    let steady = Stmt::For {
        var: var.clone(),
        lo: lo.clone(),
        hi: hi.clone(),
        annotation: LoopAnnotation::Serial,
        body: Box::new(seq(steady_body)),
    };

    traces.push(LLTrace::fired(
        LLPassId::MemLatencyHide,
        "mem.double_buffer",
        StmtPath(path.clone()),
    ));
    seq(vec![
        Stmt::Alloc {
            buffer: db,
            scope: AllocScope::Cache,
        },
        prologue,
        steady,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bugs::BugSet;
    use crate::loop_ir::interp::interpret_loop;
    use crate::loop_ir::text::parse_loop;
    use crate::loop_ir::validate_loop;
    use crate::tensor::TensorValue;
    use std::collections::BTreeMap;

    const STAGED: &str = "program staged\n\
                          input a: F32[6,4]\n\
                          output c: F32[6,4]\n\
                          body:\n\
                          \x20\x20for i in [0, 6) @pipelined(2):\n\
                          \x20\x20\x20\x20alloc row: F32[4] cache\n\
                          \x20\x20\x20\x20for j in [0, 4):\n\
                          \x20\x20\x20\x20\x20\x20row[j] = a[i, j]\n\
                          \x20\x20\x20\x20for j2 in [0, 4):\n\
                          \x20\x20\x20\x20\x20\x20c[i, j2] = row[j2] * 2.0\n";

    fn staged_inputs() -> BTreeMap<String, TensorValue> {
        [(
            "a".to_string(),
            TensorValue::from_f32(vec![6, 4], (0..24).map(|i| i as f32 * 0.25 - 3.0).collect()),
        )]
        .into_iter()
        .collect()
    }

    #[test]
    fn double_buffering_preserves_results() {
        let p = parse_loop(STAGED).unwrap();
        let (out, traces) = run(&p).unwrap();
        assert_eq!(traces.len(), 1);
        assert_eq!(traces[0].rule_id, "mem.double_buffer");
        assert!(validate_loop(&out).is_empty(), "{:?}", validate_loop(&out));
        let inputs = staged_inputs();
        assert_eq!(
            interpret_loop(&p, &inputs).unwrap(),
            interpret_loop(&out, &inputs).unwrap()
        );
        let _ = BugSet::empty();
    }

    #[test]
    fn unstaged_pipelined_loop_is_left_alone() {
        let text = "program u\ninput a: F32[4]\noutput c: F32[4]\nbody:\n  for i in [0, 4) @pipelined(2):\n    c[i] = a[i]\n";
        let p = parse_loop(text).unwrap();
        let (out, traces) = run(&p).unwrap();
        assert!(traces.is_empty());
        assert_eq!(out, p);
    }

    #[test]
    fn zero_trip_pipelined_loop_stays_safe() {
        let text = "program z\n\
                    input a: F32[1,2]\n\
                    output c: F32[1,2]\n\
                    body:\n\
                    \x20\x20for w in [0, 2):\n\
                    \x20\x20\x20\x20c[0, w] = a[0, w]\n\
                    \x20\x20for i in [1, 1) @pipelined(2):\n\
                    \x20\x20\x20\x20alloc row: F32[2] cache\n\
                    \x20\x20\x20\x20for j in [0, 2):\n\
                    \x20\x20\x20\x20\x20\x20row[j] = a[0, j]\n\
                    \x20\x20\x20\x20for j2 in [0, 2):\n\
                    \x20\x20\x20\x20\x20\x20c[0, j2] = row[j2]\n";
        let p = parse_loop(text).unwrap();
        let (out, _) = run(&p).unwrap();
        let inputs: BTreeMap<String, TensorValue> = [(
            "a".to_string(),
            TensorValue::from_f32(vec![1, 2], vec![5.0, 7.0]),
        )]
        .into_iter()
        .collect();
        assert_eq!(
            interpret_loop(&p, &inputs).unwrap(),
            interpret_loop(&out, &inputs).unwrap()
        );
    }
}
