// SPDX-License-Identifier: Apache-2.0

//! Algebraic simplification. Four value-preserving rewrites (exact for
//! integers, value-preserving for finite floats):
//!
//! - `simp.add_zero`      x + 0 -> x (either operand, types must agree)
//! - `simp.mul_one`       x * 1 -> x
//! - `simp.transpose_inv` Transpose(Transpose(x, p), q) -> x when q∘p = id
//! - `simp.reshape_id`    Reshape to the identical shape -> x

use crate::graph::{Graph, Node, NodeId, OperatorKind};
use crate::tensor::{Scalar, TensorValue};

use super::{perms_compose_identity, PassError, PassId, RewriteTrace};

fn is_all(value: &TensorValue, want: f64) -> bool {
    if value.data.is_empty() {
        return false;
    }
    (0..value.data.len()).all(|i| match value.data.get(i) {
        Scalar::F32(v) => v as f64 == want,
        Scalar::I32(v) => v as f64 == want,
        Scalar::I8(v) => v as f64 == want,
        Scalar::Bool(_) => false,
    })
}

fn const_payload(g: &Graph, id: NodeId) -> Option<&TensorValue> {
    let node = g.nodes.get(&id)?;
    if node.kind == OperatorKind::Constant {
        node.payload.as_ref()
    } else {
        None
    }
}

/// For `Add`/`Mul` nodes: the non-neutral operand, when the other operand is
/// a constant filled with the neutral element and types line up.
fn neutral_bypass(g: &Graph, node: &Node, neutral: f64) -> Option<NodeId> {
    let (a, b) = (node.inputs[0], node.inputs[1]);
    for (konst, other) in [(b, a), (a, b)] {
        if let Some(payload) = const_payload(g, konst) {
            if is_all(payload, neutral) && g.nodes[&other].out_type == node.out_type {
                return Some(other);
            }
        }
    }
    None
}

fn perm_of(g: &Graph, id: NodeId) -> Option<Vec<usize>> {
    g.nodes[&id]
        .params
        .get_ints("perm")
        .map(|p| p.iter().map(|v| *v as usize).collect())
}

pub(super) fn run(g: &Graph) -> Result<(Graph, Vec<RewriteTrace>), PassError> {
    let mut out = g.clone();
    let mut traces = Vec::new();
    let ids: Vec<NodeId> = out.nodes.keys().copied().collect();
    for id in ids {
        let node = out.nodes[&id].clone();
        let used = out.use_counts().get(&id).copied().unwrap_or(0) > 0;
        if !used {
            continue;
        }
        let (rule, target) = match &node.kind {
            OperatorKind::Add => match neutral_bypass(&out, &node, 0.0) {
                Some(t) => ("simp.add_zero", t),
                None => continue,
            },
            OperatorKind::Mul => match neutral_bypass(&out, &node, 1.0) {
                Some(t) => ("simp.mul_one", t),
                None => continue,
            },
            OperatorKind::Transpose => {
                let inner_id = node.inputs[0];
                if out.nodes[&inner_id].kind != OperatorKind::Transpose {
                    continue;
                }
                let (Some(p), Some(q)) = (perm_of(&out, inner_id), perm_of(&out, id)) else {
                    continue;
                };
                if !perms_compose_identity(&p, &q) {
                    continue;
                }
                ("simp.transpose_inv", out.nodes[&inner_id].inputs[0])
            }
            OperatorKind::Reshape => {
                let src = node.inputs[0];
                if out.nodes[&src].out_type != node.out_type {
                    continue;
                }
                ("simp.reshape_id", src)
            }
            _ => continue,
        };
        out.replace_uses(id, target);
        traces.push(RewriteTrace::fired(PassId::AlgebraicSimplify, rule, [id], []));
    }
    Ok((out, traces))
}
