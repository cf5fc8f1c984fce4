// SPDX-License-Identifier: Apache-2.0

//! Loop interchange: swaps perfectly nested loop pairs when the stored
//! buffers are accessed uniformly and each interchanged variable strides its
//! own dimension. One swap per nest, outermost-first, and no descent into a
//! swapped subtree, which keeps single-sweep runs deterministic and free of
//! swap-back oscillation.

use crate::loop_ir::{LoopProgram, Stmt, StmtPath};

use super::deps::interchange_legal;
use super::{LLPassId, LLTrace, LlPassError};

/// Swaps the loop headers of a perfect `For { body: For }` pair.
pub(super) fn swap(stmt: &Stmt) -> Option<Stmt> {
    let Stmt::For {
        var: outer_var,
        lo: outer_lo,
        hi: outer_hi,
        annotation: outer_ann,
        body,
    } = stmt
    else {
        return None;
    };
    let Stmt::For {
        var: inner_var,
        lo: inner_lo,
        hi: inner_hi,
        annotation: inner_ann,
        body: inner_body,
    } = body.as_ref()
    else {
        return None;
    };
    // Rectangular nests only: inner bounds independent of the outer var.
    if inner_lo.mentions_var(outer_var) || inner_hi.mentions_var(outer_var) {
        return None;
    }
    if !interchange_legal(outer_var, inner_var, inner_body) {
        return None;
    }
    Some(Stmt::For {
        var: inner_var.clone(),
        lo: inner_lo.clone(),
        hi: inner_hi.clone(),
        annotation: *inner_ann,
        body: Box::new(Stmt::For {
            var: outer_var.clone(),
            lo: outer_lo.clone(),
            hi: outer_hi.clone(),
            annotation: *outer_ann,
            body: inner_body.clone(),
        }),
    })
}

pub(super) fn run(p: &LoopProgram) -> Result<(LoopProgram, Vec<LLTrace>), LlPassError> {
    let mut traces = Vec::new();
    let body = rebuild(&p.body, &mut Vec::new(), &mut traces);
    let mut out = p.clone();
    out.body = body;
    Ok((out, traces))
}

fn rebuild(s: &Stmt, path: &mut Vec<usize>, traces: &mut Vec<LLTrace>) -> Stmt {
    if let Some(swapped) = swap(s) {
        traces.push(LLTrace::fired(
            LLPassId::ReorderLoops,
            "reorder.swap",
            StmtPath(path.clone()),
        ));
        return swapped;
    }
    match s {
        Stmt::For {
            var,
            lo,
            hi,
            annotation,
            body,
        } => {
            path.push(0);
            let body = rebuild(body, path, traces);
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
            let body = rebuild(body, path, traces);
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
                    let r = rebuild(s, path, traces);
                    path.pop();
                    r
                })
                .collect(),
        ),
        other => other.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loop_ir::interp::interpret_loop;
    use crate::loop_ir::text::parse_loop;
    use crate::tensor::TensorValue;
    use std::collections::BTreeMap;

    const MATMUL: &str = "program mm\n\
                          input a: F32[3,4]\n\
                          input b: F32[4,3]\n\
                          output c: F32[3,3]\n\
                          body:\n\
                          \x20\x20for i in [0, 3):\n\
                          \x20\x20\x20\x20for j in [0, 3):\n\
                          \x20\x20\x20\x20\x20\x20c[i, j] = 0.0\n\
                          \x20\x20\x20\x20\x20\x20for k in [0, 4):\n\
                          \x20\x20\x20\x20\x20\x20\x20\x20c[i, j] = c[i, j] + a[i, k] * b[k, j]\n";

    fn matmul_inputs() -> BTreeMap<String, TensorValue> {
        [
            (
                "a".to_string(),
                TensorValue::from_f32(vec![3, 4], (0..12).map(|i| i as f32 * 0.5 - 3.0).collect()),
            ),
            (
                "b".to_string(),
                TensorValue::from_f32(vec![4, 3], (0..12).map(|i| ((i * 3) % 7) as f32).collect()),
            ),
        ]
        .into_iter()
        .collect()
    }

    #[test]
    fn matmul_ij_swap_preserves_results() {
        let p = parse_loop(MATMUL).unwrap();
        let (out, traces) = run(&p).unwrap();
        assert_eq!(traces.len(), 1);
        assert_eq!(traces[0].rule_id, "reorder.swap");
        // Outer loop var is now j.
        match &out.body {
            Stmt::For { var, .. } => assert_eq!(var, "j"),
            other => panic!("unexpected {other:?}"),
        }
        let inputs = matmul_inputs();
        assert_eq!(
            interpret_loop(&p, &inputs).unwrap(),
            interpret_loop(&out, &inputs).unwrap()
        );
    }

    #[test]
    fn diagonal_write_is_not_swapped() {
        let text = "program d\n\
                    output o: F32[6]\n\
                    body:\n\
                    \x20\x20for i in [0, 6):\n\
                    \x20\x20\x20\x20o[i] = 0.0\n\
                    \x20\x20for i in [0, 3):\n\
                    \x20\x20\x20\x20for j in [0, 3):\n\
                    \x20\x20\x20\x20\x20\x20o[i + j] = cast<F32>(i)\n";
        let p = parse_loop(text).unwrap();
        let (out, traces) = run(&p).unwrap();
        assert!(traces.is_empty());
        assert_eq!(out, p);
    }

    #[test]
    fn triangular_nest_is_not_swapped() {
        let text = "program t\n\
                    output o: F32[4,4]\n\
                    body:\n\
                    \x20\x20for i in [0, 4):\n\
                    \x20\x20\x20\x20for j in [0, 4):\n\
                    \x20\x20\x20\x20\x20\x20o[i, j] = 0.0\n\
                    \x20\x20for i in [0, 4):\n\
                    \x20\x20\x20\x20for j in [i, 4):\n\
                    \x20\x20\x20\x20\x20\x20o[i, j] = 1.0\n";
        let p = parse_loop(text).unwrap();
        let (out, traces) = run(&p).unwrap();
        // Only the first (rectangular) nest swaps.
        assert_eq!(traces.len(), 1);
        assert_eq!(traces[0].loop_path, StmtPath(vec![0]));
        let _ = out;
    }
}
