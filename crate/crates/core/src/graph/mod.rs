// SPDX-License-Identifier: Apache-2.0

//! High-level computational-graph IR: typed operator nodes in a DAG.

pub mod infer;
pub mod interp;
pub mod text;
pub mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::tensor::{DType, TensorType, TensorValue};

/// Dense-or-sparse unique node identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Attribute value attached to a node.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamValue {
    Int(i64),
    Ints(Vec<i64>),
    Str(String),
    Dtype(DType),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Ints(vs) => {
                let parts: Vec<String> = vs.iter().map(|v| v.to_string()).collect();
                write!(f, "[{}]", parts.join(","))
            }
            ParamValue::Str(s) => f.write_str(s),
            ParamValue::Dtype(d) => write!(f, "{d}"),
        }
    }
}

/// Ordered name-to-value attribute map.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Params(pub BTreeMap<String, ParamValue>);

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: ParamValue) -> Self {
        self.0.insert(name.to_string(), value);
        self
    }

    pub fn set(&mut self, name: &str, value: ParamValue) {
        self.0.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        self.0.get(name)
    }

    pub fn get_int(&self, name: &str) -> Option<i64> {
        match self.0.get(name) {
            Some(ParamValue::Int(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn get_ints(&self, name: &str) -> Option<&[i64]> {
        match self.0.get(name) {
            Some(ParamValue::Ints(v)) => Some(v),
            _ => None,
        }
    }

    pub fn get_str(&self, name: &str) -> Option<&str> {
        match self.0.get(name) {
            Some(ParamValue::Str(s)) => Some(s),
            _ => None,
        }
    }

    pub fn get_dtype(&self, name: &str) -> Option<DType> {
        match self.0.get(name) {
            Some(ParamValue::Dtype(d)) => Some(*d),
            _ => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Elementwise operation admissible inside a fused region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EwOp {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Relu,
    Sigmoid,
}

impl EwOp {
    pub fn name(self) -> &'static str {
        match self {
            EwOp::Add => "Add",
            EwOp::Sub => "Sub",
            EwOp::Mul => "Mul",
            EwOp::Div => "Div",
            EwOp::Neg => "Neg",
            EwOp::Relu => "ReLU",
            EwOp::Sigmoid => "Sigmoid",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            EwOp::Add | EwOp::Sub | EwOp::Mul | EwOp::Div => 2,
            EwOp::Neg | EwOp::Relu | EwOp::Sigmoid => 1,
        }
    }

    pub fn from_kind(kind: &OperatorKind) -> Option<EwOp> {
        match kind {
            OperatorKind::Add => Some(EwOp::Add),
            OperatorKind::Sub => Some(EwOp::Sub),
            OperatorKind::Mul => Some(EwOp::Mul),
            OperatorKind::Div => Some(EwOp::Div),
            OperatorKind::Neg => Some(EwOp::Neg),
            OperatorKind::Relu => Some(EwOp::Relu),
            OperatorKind::Sigmoid => Some(EwOp::Sigmoid),
            _ => None,
        }
    }
}

impl FromStr for EwOp {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Add" => Ok(EwOp::Add),
            "Sub" => Ok(EwOp::Sub),
            "Mul" => Ok(EwOp::Mul),
            "Div" => Ok(EwOp::Div),
            "Neg" => Ok(EwOp::Neg),
            "ReLU" => Ok(EwOp::Relu),
            "Sigmoid" => Ok(EwOp::Sigmoid),
            other => Err(format!("unknown fused op `{other}`")),
        }
    }
}

/// Operand of one fused step: either an external group input slot or the
/// result of an earlier step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FusedArg {
    Input(usize),
    Step(usize),
}

/// One operation inside a fused region.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FusedStep {
    pub op: EwOp,
    pub args: Vec<FusedArg>,
}

/// Ordered elementwise steps executed as one region; the group result is the
/// last step's value.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FusedChain {
    pub steps: Vec<FusedStep>,
}

/// The operator vocabulary. `FusedGroup` is produced by the fusion pass and
/// never appears in source graphs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OperatorKind {
    Input,
    Constant,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Relu,
    Sigmoid,
    MatMul,
    Conv2d,
    Reshape,
    Transpose,
    Concat,
    ReduceSum,
    Cast,
    Pad,
    FusedGroup(FusedChain),
}

/// Input arity of an operator kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Exact(usize),
    AtLeast(usize),
}

impl Arity {
    pub fn accepts(self, n: usize) -> bool {
        match self {
            Arity::Exact(k) => n == k,
            Arity::AtLeast(k) => n >= k,
        }
    }
}

impl OperatorKind {
    /// Canonical text-format name.
    pub fn name(&self) -> &'static str {
        match self {
            OperatorKind::Input => "Input",
            OperatorKind::Constant => "Constant",
            OperatorKind::Add => "Add",
            OperatorKind::Sub => "Sub",
            OperatorKind::Mul => "Mul",
            OperatorKind::Div => "Div",
            OperatorKind::Neg => "Neg",
            OperatorKind::Relu => "ReLU",
            OperatorKind::Sigmoid => "Sigmoid",
            OperatorKind::MatMul => "MatMul",
            OperatorKind::Conv2d => "Conv2D",
            OperatorKind::Reshape => "Reshape",
            OperatorKind::Transpose => "Transpose",
            OperatorKind::Concat => "Concat",
            OperatorKind::ReduceSum => "ReduceSum",
            OperatorKind::Cast => "Cast",
            OperatorKind::Pad => "Pad",
            OperatorKind::FusedGroup(_) => "FusedGroup",
        }
    }

    /// The seventeen source-level kinds, excluding the fusion extension.
    pub const BASE_NAMES: [&'static str; 17] = [
        "Input",
        "Constant",
        "Add",
        "Sub",
        "Mul",
        "Div",
        "Neg",
        "ReLU",
        "Sigmoid",
        "MatMul",
        "Conv2D",
        "Reshape",
        "Transpose",
        "Concat",
        "ReduceSum",
        "Cast",
        "Pad",
    ];

    pub fn from_base_name(name: &str) -> Option<OperatorKind> {
        Some(match name {
            "Input" => OperatorKind::Input,
            "Constant" => OperatorKind::Constant,
            "Add" => OperatorKind::Add,
            "Sub" => OperatorKind::Sub,
            "Mul" => OperatorKind::Mul,
            "Div" => OperatorKind::Div,
            "Neg" => OperatorKind::Neg,
            "ReLU" => OperatorKind::Relu,
            "Sigmoid" => OperatorKind::Sigmoid,
            "MatMul" => OperatorKind::MatMul,
            "Conv2D" => OperatorKind::Conv2d,
            "Reshape" => OperatorKind::Reshape,
            "Transpose" => OperatorKind::Transpose,
            "Concat" => OperatorKind::Concat,
            "ReduceSum" => OperatorKind::ReduceSum,
            "Cast" => OperatorKind::Cast,
            "Pad" => OperatorKind::Pad,
            _ => return None,
        })
    }

    pub fn arity(&self) -> Arity {
        match self {
            OperatorKind::Input | OperatorKind::Constant => Arity::Exact(0),
            OperatorKind::Add
            | OperatorKind::Sub
            | OperatorKind::Mul
            | OperatorKind::Div
            | OperatorKind::MatMul
            | OperatorKind::Conv2d => Arity::Exact(2),
            OperatorKind::Neg
            | OperatorKind::Relu
            | OperatorKind::Sigmoid
            | OperatorKind::Reshape
            | OperatorKind::Transpose
            | OperatorKind::ReduceSum
            | OperatorKind::Cast
            | OperatorKind::Pad => Arity::Exact(1),
            OperatorKind::Concat => Arity::AtLeast(1),
            OperatorKind::FusedGroup(chain) => {
                let n = chain
                    .steps
                    .iter()
                    .flat_map(|s| s.args.iter())
                    .filter_map(|a| match a {
                        FusedArg::Input(i) => Some(*i + 1),
                        FusedArg::Step(_) => None,
                    })
                    .max()
                    .unwrap_or(0);
                Arity::Exact(n)
            }
        }
    }

    pub fn is_source(&self) -> bool {
        matches!(self, OperatorKind::Input | OperatorKind::Constant)
    }

    pub fn is_elementwise(&self) -> bool {
        EwOp::from_kind(self).is_some()
    }
}

/// One operator instance in a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: NodeId,
    pub kind: OperatorKind,
    pub params: Params,
    pub inputs: Vec<NodeId>,
    pub out_type: TensorType,
    /// Present exactly when `kind` is `Constant`.
    pub payload: Option<TensorValue>,
}

/// A directed acyclic computational graph with ordered outputs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Graph {
    pub name: String,
    pub nodes: BTreeMap<NodeId, Node>,
    pub outputs: Vec<NodeId>,
}

impl Graph {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            nodes: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn next_id(&self) -> NodeId {
        NodeId(self.nodes.keys().last().map(|n| n.0 + 1).unwrap_or(0))
    }

    pub fn insert(&mut self, node: Node) -> NodeId {
        let id = node.id;
        self.nodes.insert(id, node);
        id
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.nodes.get(&id)
    }

    /// Adds an input node with the given unique name.
    pub fn add_input(&mut self, name: &str, ttype: TensorType) -> NodeId {
        let id = self.next_id();
        self.insert(Node {
            id,
            kind: OperatorKind::Input,
            params: Params::new().with("name", ParamValue::Str(name.to_string())),
            inputs: Vec::new(),
            out_type: ttype,
            payload: None,
        })
    }

    pub fn add_constant(&mut self, value: TensorValue) -> NodeId {
        let id = self.next_id();
        self.insert(Node {
            id,
            kind: OperatorKind::Constant,
            params: Params::new(),
            inputs: Vec::new(),
            out_type: value.ttype.clone(),
            payload: Some(value),
        })
    }

    /// Adds an operator node, computing its output type by reference shape
    /// inference. Panics on inference failure; intended for test/builder use.
    pub fn add_op(&mut self, kind: OperatorKind, params: Params, inputs: Vec<NodeId>) -> NodeId {
        let id = self.next_id();
        let in_types: Vec<TensorType> = inputs
            .iter()
            .map(|i| self.nodes[i].out_type.clone())
            .collect();
        let out_type = infer::infer_shape(&kind, &params, &in_types)
            .unwrap_or_else(|e| panic!("add_op({}) failed: {e}", kind.name()));
        self.insert(Node {
            id,
            kind,
            params,
            inputs,
            out_type,
            payload: None,
        })
    }

    /// Map from node id to the ids of nodes consuming it (deduplicated),
    /// not counting uses in the graph output list.
    pub fn consumers(&self) -> BTreeMap<NodeId, BTreeSet<NodeId>> {
        let mut map: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
        for node in self.nodes.values() {
            for input in &node.inputs {
                map.entry(*input).or_default().insert(node.id);
            }
        }
        map
    }

    /// Number of uses of each node: edge uses plus output-list uses.
    pub fn use_counts(&self) -> BTreeMap<NodeId, usize> {
        let mut map: BTreeMap<NodeId, usize> = BTreeMap::new();
        for node in self.nodes.values() {
            for input in &node.inputs {
                *map.entry(*input).or_default() += 1;
            }
        }
        for out in &self.outputs {
            *map.entry(*out).or_default() += 1;
        }
        map
    }

    /// Kahn topological order with an ascending-id ready queue. Returns
    /// `None` when the graph has a cycle or a dangling input reference.
    pub fn topo_order(&self) -> Option<Vec<NodeId>> {
        let mut indegree: BTreeMap<NodeId, usize> = BTreeMap::new();
        for node in self.nodes.values() {
            indegree.entry(node.id).or_insert(0);
            for input in &node.inputs {
                if !self.nodes.contains_key(input) {
                    return None;
                }
            }
            *indegree.entry(node.id).or_insert(0) += 0;
        }
        for node in self.nodes.values() {
            indegree.insert(node.id, node.inputs.iter().collect::<BTreeSet<_>>().len());
        }
        // Count distinct producers; duplicate edges to the same producer
        // count once for indegree purposes.
        let mut ready: BTreeSet<NodeId> = indegree
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(id, _)| *id)
            .collect();
        let consumers = self.consumers();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(id) = ready.iter().next().copied() {
            ready.remove(&id);
            order.push(id);
            if let Some(cs) = consumers.get(&id) {
                for c in cs {
                    let d = indegree.get_mut(c).unwrap();
                    *d -= 1;
                    if *d == 0 {
                        ready.insert(*c);
                    }
                }
            }
        }
        if order.len() == self.nodes.len() {
            Some(order)
        } else {
            None
        }
    }

    /// Set of nodes reachable from the output list via input edges.
    pub fn reachable_from_outputs(&self) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<NodeId> = self.outputs.clone();
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                continue;
            }
            if let Some(node) = self.nodes.get(&id) {
                stack.extend(node.inputs.iter().copied());
            }
        }
        seen
    }

    /// Set of nodes reachable *from* `start` by following consumer edges
    /// (includes `start`).
    pub fn descendants(&self, start: NodeId) -> BTreeSet<NodeId> {
        let consumers = self.consumers();
        let mut seen = BTreeSet::new();
        let mut stack = vec![start];
        while let Some(id) = stack.pop() {
            if !seen.insert(id) {
                continue;
            }
            if let Some(cs) = consumers.get(&id) {
                stack.extend(cs.iter().copied());
            }
        }
        seen
    }

    /// Rewires every edge and output referencing `from` to `to`.
    pub fn replace_uses(&mut self, from: NodeId, to: NodeId) {
        for node in self.nodes.values_mut() {
            for input in &mut node.inputs {
                if *input == from {
                    *input = to;
                }
            }
        }
        for out in &mut self.outputs {
            if *out == from {
                *out = to;
            }
        }
    }

    /// Input nodes sorted by their `name` parameter.
    pub fn input_nodes(&self) -> Vec<&Node> {
        let mut inputs: Vec<&Node> = self
            .nodes
            .values()
            .filter(|n| n.kind == OperatorKind::Input)
            .collect();
        inputs.sort_by_key(|n| n.params.get_str("name").unwrap_or_default().to_string());
        inputs
    }
}
