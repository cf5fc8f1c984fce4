// SPDX-License-Identifier: Apache-2.0

//! Common subexpression elimination: merges nodes with identical
//! (kind, params, inputs, constant payload). Sweeping in topological order
//! canonicalizes input lists as it goes, so duplicates merge transitively
//! in one pass.

use std::collections::BTreeMap;

use crate::bugs::{BugId, BugSet};
use crate::graph::{Graph, Node, OperatorKind};

use super::{PassError, PassId, RewriteTrace};

fn node_key(node: &Node, ignore_payload: bool) -> String {
    let payload = if ignore_payload {
        String::new()
    } else {
        format!("{:?}", node.payload)
    };
    format!(
        "{:?}|{:?}|{:?}|{}|{payload}",
        node.kind, node.params, node.inputs, node.out_type
    )
}

pub(super) fn run(g: &Graph, bugs: &BugSet) -> Result<(Graph, Vec<RewriteTrace>), PassError> {
    let mut out = g.clone();
    let mut traces = Vec::new();
    let order = out.topo_order().ok_or(PassError::PassInternal {
        pass: PassId::Cse,
        message: "input graph is cyclic".into(),
    })?;
    // Seeded bug H3: constants compare equal regardless of payload.
    let ignore_payload = bugs.has(BugId::H3);
    let mut seen: BTreeMap<String, crate::graph::NodeId> = BTreeMap::new();
    for id in order {
        let node = out.nodes[&id].clone();
        // Inputs are identified by their unique name; never merged away.
        if node.kind == OperatorKind::Input {
            continue;
        }
        let key = node_key(&node, ignore_payload && node.kind == OperatorKind::Constant);
        match seen.get(&key) {
            Some(&rep) => {
                out.replace_uses(id, rep);
                out.nodes.remove(&id);
                traces.push(RewriteTrace::fired(PassId::Cse, "cse.merge", [rep, id], [rep]));
            }
            None => {
                seen.insert(key, id);
            }
        }
    }
    Ok((out, traces))
}
