// SPDX-License-Identifier: Apache-2.0

//! Elementwise fusion: merges maximal chains of plain elementwise nodes
//! with single-consumer intermediates into one `FusedGroup` region.

use std::collections::{BTreeMap, BTreeSet};

use crate::bugs::{BugId, BugSet};
use crate::graph::{EwOp, FusedArg, FusedChain, FusedStep, Graph, Node, NodeId, Params};

use super::{PassError, PassId, RewriteTrace};

pub(super) fn run(g: &Graph, bugs: &BugSet) -> Result<(Graph, Vec<RewriteTrace>), PassError> {
    let fuse_multi = bugs.has(BugId::H2);
    let mut out = g.clone();
    let mut traces = Vec::new();
    let order = out.topo_order().ok_or(PassError::PassInternal {
        pass: PassId::FuseElementwise,
        message: "input graph is cyclic".into(),
    })?;

    let use_counts = out.use_counts();
    let consumers = out.consumers();
    let output_set: BTreeSet<NodeId> = out.outputs.iter().copied().collect();
    let mut absorbed: BTreeSet<NodeId> = BTreeSet::new();
    let mut chains: Vec<Vec<NodeId>> = Vec::new();

    for id in &order {
        if absorbed.contains(id) || EwOp::from_kind(&out.nodes[id].kind).is_none() {
            continue;
        }
        let mut chain = vec![*id];
        loop {
            let last = *chain.last().unwrap();
            // Reference legality: the intermediate has exactly one use and
            // is not itself a graph output. H2 skips that check.
            let single_consumer = use_counts.get(&last).copied().unwrap_or(0) == 1
                && !output_set.contains(&last);
            if !fuse_multi && !single_consumer {
                break;
            }
            let next = consumers
                .get(&last)
                .and_then(|cs| {
                    cs.iter()
                        .find(|c| {
                            EwOp::from_kind(&out.nodes[c].kind).is_some()
                                && !absorbed.contains(*c)
                                && !chain.contains(*c)
                        })
                        .copied()
                });
            match next {
                Some(n) => chain.push(n),
                None => break,
            }
        }
        if chain.len() >= 2 {
            absorbed.extend(chain.iter().copied());
            chains.push(chain);
        }
    }

    for chain in chains {
        let chain_pos: BTreeMap<NodeId, usize> =
            chain.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let mut externals: Vec<NodeId> = Vec::new();
        let mut steps = Vec::with_capacity(chain.len());
        for member in &chain {
            let node = &out.nodes[member];
            let op = EwOp::from_kind(&node.kind).unwrap();
            let args = node
                .inputs
                .iter()
                .map(|input| match chain_pos.get(input) {
                    Some(&pos) => FusedArg::Step(pos),
                    None => {
                        let slot = externals.iter().position(|e| e == input).unwrap_or_else(|| {
                            externals.push(*input);
                            externals.len() - 1
                        });
                        FusedArg::Input(slot)
                    }
                })
                .collect();
            steps.push(FusedStep { op, args });
        }
        let last = *chain.last().unwrap();
        let out_type = out.nodes[&last].out_type.clone();
        let group_id = out.next_id();
        out.insert(Node {
            id: group_id,
            kind: crate::graph::OperatorKind::FusedGroup(FusedChain { steps }),
            params: Params::new(),
            inputs: externals,
            out_type,
            payload: None,
        });
        // Consumers of the chain tail observe the group result. Under H2,
        // stray consumers of absorbed intermediates get rewired to the
        // group too -- the seeded defect.
        out.replace_uses(last, group_id);
        for member in &chain {
            if *member != last {
                out.replace_uses(*member, group_id);
            }
        }
        for member in &chain {
            out.nodes.remove(member);
        }
        traces.push(RewriteTrace::fired(
            PassId::FuseElementwise,
            "fuse.chain",
            chain.iter().copied(),
            [group_id],
        ));
    }

    Ok((out, traces))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::interp::interpret_graph;
    use crate::graph::validate::validate_graph;
    use crate::graph::OperatorKind;
    use crate::tensor::{DType, TensorType, TensorValue};
    use std::collections::BTreeMap;

    fn bind(
        pairs: &[(&str, TensorValue)],
    ) -> BTreeMap<String, TensorValue> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect()
    }

    #[test]
    fn fuses_add_relu_chain() {
        let mut g = Graph::new("f");
        let x = g.add_input("x", TensorType::new(DType::F32, vec![4]));
        let y = g.add_input("y", TensorType::new(DType::F32, vec![4]));
        let a = g.add_op(OperatorKind::Add, Params::new(), vec![x, y]);
        let r = g.add_op(OperatorKind::Relu, Params::new(), vec![a]);
        g.outputs = vec![r];
        let (fused, traces) = run(&g, &BugSet::empty()).unwrap();
        assert_eq!(traces.len(), 1);
        assert_eq!(traces[0].rule_id, "fuse.chain");
        assert!(validate_graph(&fused).is_empty());
        assert_eq!(fused.nodes.len(), 3);
        let inputs = bind(&[
            ("x", TensorValue::from_f32(vec![4], vec![-1.0, 2.0, -3.0, 4.0])),
            ("y", TensorValue::from_f32(vec![4], vec![0.5, -2.5, 4.0, 1.0])),
        ]);
        let y0 = interpret_graph(&g, &inputs).unwrap();
        let y1 = interpret_graph(&fused, &inputs).unwrap();
        assert_eq!(y0, y1);
    }

    #[test]
    fn multi_consumer_intermediate_blocks_fusion() {
        let mut g = Graph::new("mc");
        let x = g.add_input("x", TensorType::new(DType::F32, vec![4]));
        let y = g.add_input("y", TensorType::new(DType::F32, vec![4]));
        let a = g.add_op(OperatorKind::Add, Params::new(), vec![x, y]);
        let r = g.add_op(OperatorKind::Relu, Params::new(), vec![a]);
        let n = g.add_op(OperatorKind::Neg, Params::new(), vec![a]);
        g.outputs = vec![r, n];
        let (_, traces) = run(&g, &BugSet::empty()).unwrap();
        assert!(traces.is_empty(), "add has two consumers; no fusion");
        // H2 fuses anyway and corrupts the second consumer.
        let (buggy, traces) = run(&g, &BugSet::from_ids([BugId::H2])).unwrap();
        assert!(!traces.is_empty());
        let inputs = bind(&[
            ("x", TensorValue::from_f32(vec![4], vec![-5.0, 1.0, -2.0, 3.0])),
            ("y", TensorValue::from_f32(vec![4], vec![1.0, 1.0, 1.0, 1.0])),
        ]);
        let y0 = interpret_graph(&g, &inputs).unwrap();
        let y1 = interpret_graph(&buggy, &inputs).unwrap();
        assert_ne!(y0, y1);
    }

    #[test]
    fn broadcast_chain_fuses_correctly() {
        let mut g = Graph::new("bc");
        let x = g.add_input("x", TensorType::new(DType::F32, vec![2, 3]));
        let y = g.add_input("y", TensorType::new(DType::F32, vec![3]));
        let a = g.add_op(OperatorKind::Add, Params::new(), vec![x, y]);
        let s = g.add_op(OperatorKind::Sigmoid, Params::new(), vec![a]);
        g.outputs = vec![s];
        let (fused, _) = run(&g, &BugSet::empty()).unwrap();
        assert!(validate_graph(&fused).is_empty());
        let inputs = bind(&[
            (
                "x",
                TensorValue::from_f32(vec![2, 3], vec![0.1, -0.2, 0.7, 1.5, -1.0, 0.0]),
            ),
            ("y", TensorValue::from_f32(vec![3], vec![1.0, 2.0, -0.5])),
        ]);
        assert_eq!(
            interpret_graph(&g, &inputs).unwrap(),
            interpret_graph(&fused, &inputs).unwrap()
        );
    }
}
