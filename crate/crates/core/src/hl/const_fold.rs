// SPDX-License-Identifier: Apache-2.0

//! Constant folding: replaces computational nodes whose inputs are all
//! constants with `Constant` nodes, evaluating via the interpreter kernels.
//! Nodes whose evaluation faults (e.g. integer division by zero) are left
//! in place for runtime error semantics to surface.

use crate::bugs::{BugId, BugSet};
use crate::graph::interp::eval_node_for_fold;
use crate::graph::{Graph, OperatorKind, Params};
use crate::tensor::TensorValue;

use super::{PassError, PassId, RewriteTrace};

fn rule_for_arity(n: usize) -> &'static str {
    match n {
        1 => "fold.unary",
        2 => "fold.binary",
        _ => "fold.nary",
    }
}

pub(super) fn run(g: &Graph, bugs: &BugSet) -> Result<(Graph, Vec<RewriteTrace>), PassError> {
    let mut out = g.clone();
    let mut traces = Vec::new();
    let order = out.topo_order().ok_or(PassError::PassInternal {
        pass: PassId::ConstFold,
        message: "input graph is cyclic".into(),
    })?;
    for id in order {
        let node = out.nodes[&id].clone();
        if node.kind.is_source() || node.inputs.is_empty() {
            continue;
        }
        let all_const = node
            .inputs
            .iter()
            .all(|i| out.nodes[i].kind == OperatorKind::Constant);
        if !all_const {
            continue;
        }
        let payloads: Vec<&TensorValue> = node
            .inputs
            .iter()
            .map(|i| out.nodes[i].payload.as_ref().unwrap())
            .collect();
        let value = match eval_node_for_fold(&node, &payloads, bugs.has(BugId::H1)) {
            Ok(v) => v,
            Err(_) => continue,
        };
        let arity = node.inputs.len();
        let folded = out.nodes.get_mut(&id).unwrap();
        folded.kind = OperatorKind::Constant;
        folded.params = Params::new();
        folded.inputs = Vec::new();
        folded.out_type = value.ttype.clone();
        folded.payload = Some(value);
        traces.push(RewriteTrace::fired(
            PassId::ConstFold,
            rule_for_arity(arity),
            [id],
            [id],
        ));
    }
    Ok((out, traces))
}
