// SPDX-License-Identifier: Apache-2.0

//! Layout transform: rewrites NCHW Conv2D nodes to NHWC with boundary
//! transposes, then cancels adjacent inverse transpose pairs (which chains
//! of convolutions produce).

use crate::bugs::{BugId, BugSet};
use crate::graph::infer::infer_shape;
use crate::graph::{Graph, Node, NodeId, OperatorKind, ParamValue, Params};

use super::{perms_compose_identity, PassError, PassId, RewriteTrace};

const TO_NHWC: [i64; 4] = [0, 2, 3, 1];
const TO_NCHW: [i64; 4] = [0, 3, 1, 2];

fn transpose_node(g: &mut Graph, input: NodeId, perm: [i64; 4]) -> Result<NodeId, PassError> {
    let params = Params::new().with("perm", ParamValue::Ints(perm.to_vec()));
    let in_type = g.nodes[&input].out_type.clone();
    let out_type = infer_shape(&OperatorKind::Transpose, &params, &[in_type]).map_err(|e| {
        PassError::PassInternal {
            pass: PassId::LayoutTransform,
            message: e.to_string(),
        }
    })?;
    let id = g.next_id();
    g.insert(Node {
        id,
        kind: OperatorKind::Transpose,
        params,
        inputs: vec![input],
        out_type,
        payload: None,
    });
    Ok(id)
}

pub(super) fn run(g: &Graph, bugs: &BugSet) -> Result<(Graph, Vec<RewriteTrace>), PassError> {
    let mut out = g.clone();
    let mut traces = Vec::new();
    // Boundary transposes created here map back to the conv that produced
    // them, so cancellation traces can reference pre-pass nodes.
    let mut produced_by: std::collections::BTreeMap<NodeId, NodeId> =
        std::collections::BTreeMap::new();

    let convs: Vec<NodeId> = out
        .nodes
        .values()
        .filter(|n| {
            n.kind == OperatorKind::Conv2d
                && matches!(n.params.get_str("layout"), None | Some("NCHW"))
        })
        .map(|n| n.id)
        .collect();

    for conv in convs {
        let node = out.nodes[&conv].clone();
        let t_in = transpose_node(&mut out, node.inputs[0], TO_NHWC)?;
        let mut params = node.params.clone();
        params.set("layout", ParamValue::Str("NHWC".into()));
        let in_types = vec![
            out.nodes[&t_in].out_type.clone(),
            out.nodes[&node.inputs[1]].out_type.clone(),
        ];
        let conv_type = infer_shape(&OperatorKind::Conv2d, &params, &in_types).map_err(|e| {
            PassError::PassInternal {
                pass: PassId::LayoutTransform,
                message: e.to_string(),
            }
        })?;
        let nhwc_conv = out.next_id();
        out.insert(Node {
            id: nhwc_conv,
            kind: OperatorKind::Conv2d,
            params,
            inputs: vec![t_in, node.inputs[1]],
            out_type: conv_type,
            payload: None,
        });
        let mut produced = vec![t_in, nhwc_conv];
        produced_by.insert(t_in, conv);
        if bugs.has(BugId::H4) {
            // Output boundary transpose dropped: downstream consumers now
            // observe NHWC data and shapes.
            out.replace_uses(conv, nhwc_conv);
        } else {
            let t_out = transpose_node(&mut out, nhwc_conv, TO_NCHW)?;
            produced.push(t_out);
            produced_by.insert(t_out, conv);
            out.replace_uses(conv, t_out);
        }
        out.nodes.remove(&conv);
        traces.push(RewriteTrace::fired(
            PassId::LayoutTransform,
            "layout.conv_nhwc",
            [conv],
            produced,
        ));
    }

    // Cancel adjacent inverse transpose pairs.
    let ids: Vec<NodeId> = out.nodes.keys().copied().collect();
    for id in ids {
        let Some(node) = out.nodes.get(&id) else {
            continue;
        };
        if node.kind != OperatorKind::Transpose {
            continue;
        }
        let inner_id = node.inputs[0];
        let inner = &out.nodes[&inner_id];
        if inner.kind != OperatorKind::Transpose {
            continue;
        }
        let (Some(q), Some(p)) = (node.params.get_ints("perm"), inner.params.get_ints("perm"))
        else {
            continue;
        };
        let p: Vec<usize> = p.iter().map(|v| *v as usize).collect();
        let q: Vec<usize> = q.iter().map(|v| *v as usize).collect();
        if !perms_compose_identity(&p, &q) {
            continue;
        }
        if out.use_counts().get(&id).copied().unwrap_or(0) == 0 {
            continue;
        }
        let src = out.nodes[&inner_id].inputs[0];
        out.replace_uses(id, src);
        let origin = |n: NodeId| produced_by.get(&n).copied().unwrap_or(n);
        traces.push(RewriteTrace::fired(
            PassId::LayoutTransform,
            "layout.cancel_transpose",
            [origin(id), origin(inner_id)],
            [],
        ));
    }

    Ok((out, traces))
}
