// SPDX-License-Identifier: Apache-2.0

//! Loop tiling: splits serial loops with a static trip count of at least 16
//! into outer/inner loops with tile size 8, iteration order preserved.

use crate::bugs::{BugId, BugSet};
use crate::loop_ir::{for_loop, seq, Expr, LoopAnnotation, LoopProgram, Stmt, StmtPath};

use super::{LLPassId, LLTrace, LlPassError, NameGen};

pub const TILE: i64 = 8;
pub const MIN_TRIP: i64 = 16;

/// Same-order split of one `For` statement. Returns `None` when the
/// statement is not a splittable loop.
pub(super) fn split(
    stmt: &Stmt,
    tile: i64,
    namer: &mut NameGen,
    drop_remainder: bool,
) -> Option<Stmt> {
    let Stmt::For {
        var,
        lo,
        hi,
        annotation: LoopAnnotation::Serial,
        body,
    } = stmt
    else {
        return None;
    };
    let (lo_c, hi_c) = (lo.const_int()?, hi.const_int()?);
    let trip = (hi_c - lo_c).max(0);
    if trip < tile {
        return None;
    }
    let m = trip / tile;
    let remainder = trip % tile;
    let outer = namer.fresh(&format!("{var}_o"));
    let inner = namer.fresh(&format!("{var}_t"));
    // var := lo + outer*tile + inner
    let idx = Expr::add(
        Expr::add(
            Expr::IntLit(lo_c),
            Expr::mul(Expr::var(&outer), Expr::IntLit(tile)),
        ),
        Expr::var(&inner),
    );
    let mut tiled_body = body.subst(var, &idx);
    if remainder > 0 && !drop_remainder {
        // The remainder loop keeps the original body; local allocations in
        // the tiled copy split off so each copy declares its own buffers.
        for name in tiled_body.alloc_names() {
            let fresh = namer.fresh(&name);
            tiled_body = tiled_body.rename_buffer(&name, &fresh);
        }
    }
    let tiled = for_loop(
        &outer,
        Expr::IntLit(0),
        Expr::IntLit(m),
        LoopAnnotation::Serial,
        for_loop(
            &inner,
            Expr::IntLit(0),
            Expr::IntLit(tile),
            LoopAnnotation::Serial,
            tiled_body,
        ),
    );
    let mut pieces = vec![tiled];
    if remainder > 0 && !drop_remainder {
        pieces.push(for_loop(
            var,
            Expr::IntLit(lo_c + m * tile),
            Expr::IntLit(hi_c),
            LoopAnnotation::Serial,
            (**body).clone(),
        ));
    }
    Some(seq(pieces))
}

pub(super) fn run(p: &LoopProgram, bugs: &BugSet) -> Result<(LoopProgram, Vec<LLTrace>), LlPassError> {
    let mut namer = NameGen::for_program(p);
    let mut traces = Vec::new();
    let drop_remainder = bugs.has(BugId::B2);
    let body = rebuild(&p.body, &mut Vec::new(), &mut namer, drop_remainder, &mut traces);
    let mut out = p.clone();
    out.body = body;
    Ok((out, traces))
}

fn rebuild(
    s: &Stmt,
    path: &mut Vec<usize>,
    namer: &mut NameGen,
    drop_remainder: bool,
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
            let body = rebuild(body, path, namer, drop_remainder, traces);
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
            let body = rebuild(body, path, namer, drop_remainder, traces);
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
                let r = rebuild(s, path, namer, drop_remainder, traces);
                path.pop();
                r
            })
            .collect()),
        other => other.clone(),
    };
    let heuristic_match = matches!(
        &rebuilt,
        Stmt::For {
            lo,
            hi,
            annotation: LoopAnnotation::Serial,
            ..
        } if matches!((lo.const_int(), hi.const_int()), (Some(l), Some(h)) if h - l >= MIN_TRIP)
    );
    if heuristic_match {
        if let Some(split) = split(&rebuilt, TILE, namer, drop_remainder) {
            traces.push(LLTrace::fired(
                LLPassId::TileLoops,
                "tile.split",
                StmtPath(path.clone()),
            ));
            return split;
        }
    }
    rebuilt
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
            "program t\ninput a: F32[{trip}]\noutput c: F32[{trip}]\nbody:\n  for i in [0, {trip}):\n    c[i] = a[i] * 2.0\n"
        ))
        .unwrap()
    }

    fn data(trip: usize) -> BTreeMap<String, TensorValue> {
        [(
            "a".to_string(),
            TensorValue::from_f32(vec![trip], (0..trip).map(|i| i as f32 * 0.5).collect()),
        )]
        .into_iter()
        .collect()
    }

    #[test]
    fn small_trips_are_left_alone() {
        let p = program(8);
        let (out, traces) = run(&p, &BugSet::empty()).unwrap();
        assert!(traces.is_empty());
        assert_eq!(out, p);
    }

    #[test]
    fn big_trip_splits_with_remainder() {
        let p = program(18);
        let (out, traces) = run(&p, &BugSet::empty()).unwrap();
        assert_eq!(traces.len(), 1);
        assert!(validate_loop(&out).is_empty());
        // outer, inner, remainder
        assert_eq!(crate::loop_ir::collect_loops(&out.body).len(), 3);
        assert_eq!(
            interpret_loop(&p, &data(18)).unwrap(),
            interpret_loop(&out, &data(18)).unwrap()
        );
    }

    #[test]
    fn divisible_trip_has_no_remainder_loop() {
        let p = program(16);
        let (out, _) = run(&p, &BugSet::empty()).unwrap();
        assert_eq!(crate::loop_ir::collect_loops(&out.body).len(), 2);
        assert_eq!(
            interpret_loop(&p, &data(16)).unwrap(),
            interpret_loop(&out, &data(16)).unwrap()
        );
    }

    #[test]
    fn b2_drops_remainder_iterations() {
        let p = program(18);
        let (out, _) = run(&p, &BugSet::from_ids([BugId::B2])).unwrap();
        assert!(interpret_loop(&out, &data(18)).is_err());
    }

    #[test]
    fn annotated_loops_are_not_tiled() {
        let text = "program t\ninput a: F32[32]\noutput c: F32[32]\nbody:\n  for i in [0, 32) @unroll(4):\n    c[i] = a[i]\n";
        let p = parse_loop(text).unwrap();
        let (out, traces) = run(&p, &BugSet::empty()).unwrap();
        assert!(traces.is_empty());
        assert_eq!(out, p);
    }
}
