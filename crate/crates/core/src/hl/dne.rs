// SPDX-License-Identifier: Apache-2.0

//! Dead node elimination: removes nodes unreachable from the output list.

use crate::graph::{Graph, NodeId};

use super::{PassError, PassId, RewriteTrace};

pub(super) fn run(g: &Graph) -> Result<(Graph, Vec<RewriteTrace>), PassError> {
    let mut out = g.clone();
    let reachable = out.reachable_from_outputs();
    let dead: Vec<NodeId> = out
        .nodes
        .keys()
        .copied()
        .filter(|id| !reachable.contains(id))
        .collect();
    if dead.is_empty() {
        return Ok((out, Vec::new()));
    }
    for id in &dead {
        out.nodes.remove(id);
    }
    let trace = RewriteTrace::fired(PassId::DeadNodeElim, "dne.unreachable", dead, []);
    Ok((out, vec![trace]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{OperatorKind, Params};
    use crate::tensor::{DType, TensorType};

    #[test]
    fn removes_unreachable_branch() {
        let mut g = Graph::new("dne");
        let x = g.add_input("x", TensorType::new(DType::F32, vec![2]));
        let r = g.add_op(OperatorKind::Relu, Params::new(), vec![x]);
        let dead = g.add_op(OperatorKind::Neg, Params::new(), vec![x]);
        g.outputs = vec![r];
        let (out, traces) = run(&g).unwrap();
        assert!(!out.nodes.contains_key(&dead));
        assert_eq!(traces.len(), 1);
        assert!(traces[0].matched_nodes.contains(&dead));
        // Output graph has nothing unreachable.
        let reach = out.reachable_from_outputs();
        assert!(out.nodes.keys().all(|id| reach.contains(id)));
    }

    #[test]
    fn clean_graph_fires_nothing() {
        let mut g = Graph::new("clean");
        let x = g.add_input("x", TensorType::new(DType::F32, vec![2]));
        let r = g.add_op(OperatorKind::Relu, Params::new(), vec![x]);
        g.outputs = vec![r];
        let (_, traces) = run(&g).unwrap();
        assert!(traces.is_empty());
    }
}
