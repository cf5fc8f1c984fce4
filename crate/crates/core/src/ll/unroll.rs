// SPDX-License-Identifier: Apache-2.0

//! Unroll expansion: replicates the body of `@unroll(f)` loops, emitting a
//! remainder loop when the trip count does not divide evenly. Loops with
//! non-static bounds are demoted to serial.

use crate::bugs::{BugId, BugSet};
use crate::loop_ir::{for_loop, seq, Expr, LoopAnnotation, LoopProgram, Stmt, StmtPath};

use super::{LLPassId, LLTrace, LlPassError, NameGen};

pub(super) fn run(p: &LoopProgram, bugs: &BugSet) -> Result<(LoopProgram, Vec<LLTrace>), LlPassError> {
    let mut namer = NameGen::for_program(p);
    let mut traces = Vec::new();
    let wrong_remainder = bugs.has(BugId::B1);
    let body = rebuild(&p.body, &mut Vec::new(), &mut namer, wrong_remainder, &mut traces);
    let mut out = p.clone();
    out.body = body;
    Ok((out, traces))
}

fn rebuild(
    s: &Stmt,
    path: &mut Vec<usize>,
    namer: &mut NameGen,
    wrong_remainder: bool,
    traces: &mut Vec<LLTrace>,
) -> Stmt {
    let rebuilt = rebuild_children(s, path, namer, wrong_remainder, traces);
    let Stmt::For {
        var,
        lo,
        hi,
        annotation: LoopAnnotation::Unroll(factor),
        body,
    } = &rebuilt
    else {
        return rebuilt;
    };
    let (Some(lo_c), Some(hi_c)) = (lo.const_int(), hi.const_int()) else {
        // Dynamic trip: strip the annotation rather than expand.
        traces.push(LLTrace::fired(
            LLPassId::UnrollExpand,
            "unroll.demote",
            StmtPath(path.clone()),
        ));
        return Stmt::For {
            var: var.clone(),
            lo: lo.clone(),
            hi: hi.clone(),
            annotation: LoopAnnotation::Serial,
            body: body.clone(),
        };
    };
    let f = *factor as i64;
    let trip = (hi_c - lo_c).max(0);
    let main_iters = trip / f;
    let remainder = trip % f;

    let mut pieces = Vec::new();
    if main_iters > 0 {
        let outer = namer.fresh(&format!("{var}_u"));
        let copies: Vec<Stmt> = (0..f)
            .map(|k| {
                // var := lo + outer*f + k
                let idx = Expr::add(
                    Expr::add(
                        Expr::IntLit(lo_c),
                        Expr::mul(Expr::var(&outer), Expr::IntLit(f)),
                    ),
                    Expr::IntLit(k),
                );
                let mut copy = body.subst(var, &idx);
                // Local allocations split per replicated copy so the body
                // of each lane declares its own buffers.
                for name in copy.alloc_names() {
                    let fresh = namer.fresh(&name);
                    copy = copy.rename_buffer(&name, &fresh);
                }
                copy
            })
            .collect();
        pieces.push(for_loop(
            &outer,
            Expr::IntLit(0),
            Expr::IntLit(main_iters),
            LoopAnnotation::Serial,
            seq(copies),
        ));
    }
    if remainder > 0 {
        // Seeded bug B1: the remainder loop starts one iteration late.
        let start = lo_c + main_iters * f + if wrong_remainder { 1 } else { 0 };
        pieces.push(for_loop(
            var,
            Expr::IntLit(start),
            Expr::IntLit(hi_c),
            LoopAnnotation::Serial,
            (**body).clone(),
        ));
    }
    traces.push(LLTrace::fired(
        LLPassId::UnrollExpand,
        "unroll.expand",
        StmtPath(path.clone()),
    ));
    seq(pieces)
}

fn rebuild_children(
    s: &Stmt,
    path: &mut Vec<usize>,
    namer: &mut NameGen,
    wrong_remainder: bool,
    traces: &mut Vec<LLTrace>,
) -> Stmt {
    match s {
        Stmt::For {
            var,
            lo,
            hi,
            annotation,
            body,
        } => {
            path.push(0);
            let body = rebuild(body, path, namer, wrong_remainder, traces);
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
            let body = rebuild(body, path, namer, wrong_remainder, traces);
            path.pop();
            Stmt::If {
                cond: cond.clone(),
                body: Box::new(body),
            }
        }
        Stmt::Seq(v) => {
            let rebuilt: Vec<Stmt> = v
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    path.push(i);
                    let r = rebuild(s, path, namer, wrong_remainder, traces);
                    path.pop();
                    r
                })
                .collect();
            seq(rebuilt)
        }
        other => other.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loop_ir::interp::interpret_loop;
    use crate::loop_ir::text::parse_loop;
    use crate::loop_ir::validate_loop;
    use crate::tensor::TensorValue;
    use std::collections::BTreeMap;

    fn program(trip: usize) -> LoopProgram {
        parse_loop(&format!(
            "program u\ninput a: F32[{trip}]\noutput c: F32[{trip}]\nbody:\n  for i in [0, {trip}) @unroll(4):\n    c[i] = a[i] + 1.0\n"
        ))
        .unwrap()
    }

    fn data(trip: usize) -> BTreeMap<String, TensorValue> {
        [(
            "a".to_string(),
            TensorValue::from_f32(vec![trip], (0..trip).map(|i| i as f32).collect()),
        )]
        .into_iter()
        .collect()
    }

    #[test]
    fn divisible_trip_expands_without_remainder() {
        let p = program(8);
        let (out, traces) = run(&p, &BugSet::empty()).unwrap();
        assert!(validate_loop(&out).is_empty(), "{:?}", validate_loop(&out));
        assert_eq!(traces.len(), 1);
        assert_eq!(traces[0].rule_id, "unroll.expand");
        // Main loop of 2 iterations, four replicated stores, no remainder.
        let loops = crate::loop_ir::collect_loops(&out.body);
        assert_eq!(loops.len(), 1);
        assert_eq!(out.body.stores().len(), 4);
        assert_eq!(
            interpret_loop(&p, &data(8)).unwrap(),
            interpret_loop(&out, &data(8)).unwrap()
        );
    }

    #[test]
    fn non_divisible_trip_keeps_remainder() {
        let p = program(10);
        let (out, _) = run(&p, &BugSet::empty()).unwrap();
        let loops = crate::loop_ir::collect_loops(&out.body);
        assert_eq!(loops.len(), 2, "main plus remainder loop");
        assert_eq!(
            interpret_loop(&p, &data(10)).unwrap(),
            interpret_loop(&out, &data(10)).unwrap()
        );
    }

    #[test]
    fn no_unroll_annotations_remain() {
        let p = program(10);
        let (out, _) = run(&p, &BugSet::empty()).unwrap();
        for (_, l) in crate::loop_ir::collect_loops(&out.body) {
            if let Stmt::For { annotation, .. } = l {
                assert!(!matches!(annotation, LoopAnnotation::Unroll(_)));
            }
        }
    }

    #[test]
    fn b1_skips_first_remainder_iteration() {
        let p = program(10);
        let (out, _) = run(&p, &BugSet::from_ids([BugId::B1])).unwrap();
        let err = interpret_loop(&out, &data(10));
        // Element 8 is never written.
        assert!(err.is_err());
    }
}
