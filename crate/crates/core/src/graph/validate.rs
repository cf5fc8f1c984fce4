// SPDX-License-Identifier: Apache-2.0

//! Structural and type validation for graphs. Violations are data, not
//! faults: an empty report means the graph is executable by the interpreter.

use std::collections::BTreeSet;
use std::fmt;

use super::infer::infer_shape;
use super::{Graph, NodeId, OperatorKind};
use crate::tensor::{TensorType, MAX_RANK};

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DanglingInput(NodeId),
    DanglingOutput(NodeId),
    CycleDetected,
    EmptyOutputs,
    NoSourceNode,
    BadArity {
        node: NodeId,
        kind: String,
        got: usize,
    },
    BadParam {
        node: NodeId,
        message: String,
    },
    TypeMismatch {
        node: NodeId,
        kind: String,
        declared: TensorType,
        inferred: TensorType,
    },
    BadPayload {
        node: NodeId,
        message: String,
    },
    RankOverflow {
        node: NodeId,
        rank: usize,
    },
    DuplicateInputName(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DanglingInput(id) => write!(f, "DanglingInput({id})"),
            Violation::DanglingOutput(id) => write!(f, "DanglingOutput({id})"),
            Violation::CycleDetected => write!(f, "CycleDetected"),
            Violation::EmptyOutputs => write!(f, "EmptyOutputs"),
            Violation::NoSourceNode => write!(f, "NoSourceNode"),
            Violation::BadArity { node, kind, got } => {
                write!(f, "BadArity(node {node}: {kind} got {got} inputs)")
            }
            Violation::BadParam { node, message } => {
                write!(f, "BadParam(node {node}: {message})")
            }
            Violation::TypeMismatch {
                node,
                kind,
                declared,
                inferred,
            } => write!(
                f,
                "TypeMismatch(node {node}: {kind} declared {declared}, inferred {inferred})"
            ),
            Violation::BadPayload { node, message } => {
                write!(f, "BadPayload(node {node}: {message})")
            }
            Violation::RankOverflow { node, rank } => {
                write!(f, "RankOverflow(node {node}: rank {rank})")
            }
            Violation::DuplicateInputName(name) => write!(f, "DuplicateInputName({name})"),
        }
    }
}

/// Outcome of validating one graph.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "ok");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

/// Validates structure, arity, params, acyclicity, and declared-vs-inferred
/// types, using the reference inference rules.
pub fn validate_graph(g: &Graph) -> ValidationReport {
    let mut violations = Vec::new();

    if g.outputs.is_empty() {
        violations.push(Violation::EmptyOutputs);
    }
    for out in &g.outputs {
        if !g.nodes.contains_key(out) {
            violations.push(Violation::DanglingOutput(*out));
        }
    }

    let mut structurally_sound = true;
    for node in g.nodes.values() {
        for input in &node.inputs {
            if !g.nodes.contains_key(input) {
                violations.push(Violation::DanglingInput(*input));
                structurally_sound = false;
            }
        }
    }

    if !g
        .nodes
        .values()
        .any(|n| matches!(n.kind, OperatorKind::Input | OperatorKind::Constant))
    {
        violations.push(Violation::NoSourceNode);
    }

    let mut input_names: BTreeSet<String> = BTreeSet::new();
    for node in g.nodes.values() {
        if !node.kind.arity().accepts(node.inputs.len()) {
            violations.push(Violation::BadArity {
                node: node.id,
                kind: node.kind.name().to_string(),
                got: node.inputs.len(),
            });
            structurally_sound = false;
        }
        if node.out_type.rank() > MAX_RANK {
            violations.push(Violation::RankOverflow {
                node: node.id,
                rank: node.out_type.rank(),
            });
        }
        match &node.kind {
            OperatorKind::Input => {
                match node.params.get_str("name") {
                    Some(name) if !name.is_empty() => {
                        if !input_names.insert(name.to_string()) {
                            violations.push(Violation::DuplicateInputName(name.to_string()));
                        }
                    }
                    _ => violations.push(Violation::BadParam {
                        node: node.id,
                        message: "Input requires a non-empty name param".into(),
                    }),
                }
                if node.payload.is_some() {
                    violations.push(Violation::BadPayload {
                        node: node.id,
                        message: "Input must not carry a payload".into(),
                    });
                }
            }
            OperatorKind::Constant => match &node.payload {
                Some(value) => {
                    if let Err(message) = value.check_consistent() {
                        violations.push(Violation::BadPayload {
                            node: node.id,
                            message,
                        });
                    } else if value.ttype != node.out_type {
                        violations.push(Violation::BadPayload {
                            node: node.id,
                            message: format!(
                                "payload type {} differs from declared {}",
                                value.ttype, node.out_type
                            ),
                        });
                    }
                }
                None => violations.push(Violation::BadPayload {
                    node: node.id,
                    message: "Constant requires a payload".into(),
                }),
            },
            _ => {
                if node.payload.is_some() {
                    violations.push(Violation::BadPayload {
                        node: node.id,
                        message: "only Constant nodes carry payloads".into(),
                    });
                }
            }
        }
    }

    if structurally_sound {
        match g.topo_order() {
            Some(order) => {
                for id in order {
                    let node = &g.nodes[&id];
                    if node.kind.is_source() {
                        continue;
                    }
                    let in_types: Vec<TensorType> = node
                        .inputs
                        .iter()
                        .map(|i| g.nodes[i].out_type.clone())
                        .collect();
                    match infer_shape(&node.kind, &node.params, &in_types) {
                        Ok(inferred) => {
                            if inferred != node.out_type {
                                violations.push(Violation::TypeMismatch {
                                    node: node.id,
                                    kind: node.kind.name().to_string(),
                                    declared: node.out_type.clone(),
                                    inferred,
                                });
                            }
                        }
                        Err(e) => violations.push(Violation::BadParam {
                            node: node.id,
                            message: e.to_string(),
                        }),
                    }
                }
            }
            None => violations.push(Violation::CycleDetected),
        }
    }

    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Node, Params};
    use crate::tensor::{DType, TensorValue};

    #[test]
    fn well_formed_add_graph_is_clean() {
        let mut g = Graph::new("add");
        let a = g.add_input("a", TensorType::new(DType::F32, vec![2]));
        let b = g.add_input("b", TensorType::new(DType::F32, vec![2]));
        let s = g.add_op(OperatorKind::Add, Params::new(), vec![a, b]);
        g.outputs = vec![s];
        assert!(validate_graph(&g).is_empty());
    }

    #[test]
    fn missing_id_reports_dangling_input() {
        let mut g = Graph::new("dangling");
        let a = g.add_input("a", TensorType::new(DType::F32, vec![2]));
        let add = Node {
            id: NodeId(1),
            kind: OperatorKind::Add,
            params: Params::new(),
            inputs: vec![a, NodeId(99)],
            out_type: TensorType::new(DType::F32, vec![2]),
            payload: None,
        };
        g.insert(add);
        g.outputs = vec![NodeId(1)];
        let report = validate_graph(&g);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::DanglingInput(NodeId(99)))));
    }

    #[test]
    fn two_node_cycle_detected() {
        let mut g = Graph::new("cycle");
        let t = TensorType::new(DType::F32, vec![1]);
        g.insert(Node {
            id: NodeId(0),
            kind: OperatorKind::Neg,
            params: Params::new(),
            inputs: vec![NodeId(1)],
            out_type: t.clone(),
            payload: None,
        });
        g.insert(Node {
            id: NodeId(1),
            kind: OperatorKind::Neg,
            params: Params::new(),
            inputs: vec![NodeId(0)],
            out_type: t,
            payload: None,
        });
        g.outputs = vec![NodeId(1)];
        let report = validate_graph(&g);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::CycleDetected)));
    }

    #[test]
    fn declared_type_must_match_inference() {
        let mut g = Graph::new("mismatch");
        let a = g.add_input("a", TensorType::new(DType::F32, vec![2]));
        g.insert(Node {
            id: NodeId(1),
            kind: OperatorKind::Neg,
            params: Params::new(),
            inputs: vec![a],
            out_type: TensorType::new(DType::F32, vec![3]),
            payload: None,
        });
        g.outputs = vec![NodeId(1)];
        let report = validate_graph(&g);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::TypeMismatch { .. })));
    }

    #[test]
    fn constant_payload_checked() {
        let mut g = Graph::new("badconst");
        let id = g.add_constant(TensorValue::from_f32(vec![2], vec![1.0, 2.0]));
        g.nodes.get_mut(&id).unwrap().out_type = TensorType::new(DType::F32, vec![3]);
        g.outputs = vec![id];
        let report = validate_graph(&g);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::BadPayload { .. })));
    }
}
