// SPDX-License-Identifier: Apache-2.0

//! Random valid graph and input-data generation.
//!
//! Graphs produced here always pass `validate_graph`. Sizing is capped so
//! that interpreter-based differential runs stay cheap: extents are small,
//! constants stay within the inline payload limit, and integer `Div`
//! operands are never generated (integer division by zero would be a
//! spurious fault signal; the interpreter's error path is unit tested
//! instead).

use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::RngExt;
use std::collections::BTreeMap;

use crate::graph::infer::infer_shape;
use crate::graph::{Graph, Node, NodeId, OperatorKind, ParamValue, Params};
use crate::tensor::{DType, TensorData, TensorType, TensorValue};

#[derive(Debug, Clone)]
pub struct GraphGenConfig {
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub max_extent: usize,
    pub max_elements: usize,
}

impl Default for GraphGenConfig {
    fn default() -> Self {
        Self {
            min_nodes: 5,
            max_nodes: 30,
            max_extent: 8,
            max_elements: 256,
        }
    }
}

/// Random tensor data of the given type. With `integer_valued` set, F32
/// elements are drawn from small whole numbers, which keeps fused-multiply-
/// add rewrites exactly representable.
pub fn random_value(rng: &mut StdRng, ttype: &TensorType, integer_valued: bool) -> TensorValue {
    let n = ttype.element_count();
    let data = match ttype.dtype {
        DType::F32 => TensorData::F32(
            (0..n)
                .map(|_| {
                    if integer_valued {
                        rng.random_range(-2i64..=2) as f32
                    } else {
                        rng.random_range(-2.0f32..2.0)
                    }
                })
                .collect(),
        ),
        DType::I32 => TensorData::I32((0..n).map(|_| rng.random_range(-8i32..=8)).collect()),
        DType::I8 => TensorData::I8((0..n).map(|_| rng.random_range(-8i8..=8)).collect()),
        DType::Bool => TensorData::Bool((0..n).map(|_| rng.random_bool(0.5)).collect()),
    };
    TensorValue::new(ttype.clone(), data)
}

/// Binds every `Input` node of `g` to random data.
pub fn random_inputs(
    g: &Graph,
    rng: &mut StdRng,
    integer_valued: bool,
) -> BTreeMap<String, TensorValue> {
    let mut map = BTreeMap::new();
    for node in g.input_nodes() {
        let name = node.params.get_str("name").unwrap_or_default().to_string();
        map.insert(name, random_value(rng, &node.out_type, integer_valued));
    }
    map
}

fn random_shape(rng: &mut StdRng, cfg: &GraphGenConfig) -> Vec<usize> {
    let rank = rng.random_range(1usize..=3);
    loop {
        let shape: Vec<usize> = (0..rank)
            .map(|_| rng.random_range(1usize..=cfg.max_extent))
            .collect();
        if shape.iter().product::<usize>() <= cfg.max_elements {
            return shape;
        }
    }
}

fn random_dtype(rng: &mut StdRng) -> DType {
    match rng.random_range(0u32..10) {
        0..=5 => DType::F32,
        6..=7 => DType::I32,
        8 => DType::I8,
        _ => DType::Bool,
    }
}

struct Builder<'a> {
    g: Graph,
    rng: &'a mut StdRng,
    cfg: &'a GraphGenConfig,
    input_count: usize,
}

impl<'a> Builder<'a> {
    fn nodes_with<F: Fn(&Node) -> bool>(&self, pred: F) -> Vec<NodeId> {
        self.g
            .nodes
            .values()
            .filter(|n| pred(n))
            .map(|n| n.id)
            .collect()
    }

    fn pick<F: Fn(&Node) -> bool>(&mut self, pred: F) -> Option<NodeId> {
        let candidates = self.nodes_with(pred);
        candidates.choose(self.rng).copied()
    }

    fn fresh_constant(&mut self, ttype: &TensorType) -> NodeId {
        let value = random_value(self.rng, ttype, false);
        self.g.add_constant(value)
    }

    fn fresh_input(&mut self, ttype: TensorType) -> NodeId {
        let name = format!("in{}", self.input_count);
        self.input_count += 1;
        self.g.add_input(&name, ttype)
    }

    /// Adds an op node if inference succeeds and the output stays in budget.
    fn try_add(&mut self, kind: OperatorKind, params: Params, inputs: Vec<NodeId>) -> Option<NodeId> {
        let in_types: Vec<TensorType> = inputs
            .iter()
            .map(|i| self.g.nodes[i].out_type.clone())
            .collect();
        let out_type = infer_shape(&kind, &params, &in_types).ok()?;
        if out_type.element_count() > self.cfg.max_elements {
            return None;
        }
        let id = self.g.next_id();
        self.g.insert(Node {
            id,
            kind,
            params,
            inputs,
            out_type,
            payload: None,
        });
        Some(id)
    }

    fn source_partner(&mut self, ttype: &TensorType) -> NodeId {
        // Small payloads become constants, larger ones inputs.
        if ttype.element_count() <= 64 && self.rng.random_bool(0.7) {
            self.fresh_constant(ttype)
        } else {
            self.fresh_input(ttype.clone())
        }
    }

    fn add_ew_binary(&mut self, kind: OperatorKind) -> Option<NodeId> {
        let f32_only = kind == OperatorKind::Div;
        let a = self.pick(|n| {
            n.out_type.dtype.is_numeric() && (!f32_only || n.out_type.dtype == DType::F32)
        })?;
        let at = self.g.nodes[&a].out_type.clone();
        // Mostly exact-shape partners (graph reuse), occasionally a
        // broadcast-compatible constant.
        let b = if self.rng.random_bool(0.6) {
            let same = self.pick(|n| n.out_type == at);
            same.unwrap_or(a)
        } else if self.rng.random_bool(0.5) && at.rank() >= 1 {
            let tail = TensorType::new(at.dtype, vec![*at.shape.last().unwrap()]);
            self.source_partner(&tail)
        } else {
            self.source_partner(&at)
        };
        self.try_add(kind, Params::new(), vec![a, b])
    }

    fn add_matmul(&mut self) -> Option<NodeId> {
        let a = self.pick(|n| {
            n.out_type.rank() == 2 && matches!(n.out_type.dtype, DType::F32 | DType::I32)
        });
        let (a, at) = match a {
            Some(a) => (a, self.g.nodes[&a].out_type.clone()),
            None => {
                let dt = if self.rng.random_bool(0.8) {
                    DType::F32
                } else {
                    DType::I32
                };
                let t = TensorType::new(
                    dt,
                    vec![
                        self.rng.random_range(1usize..=6),
                        self.rng.random_range(1usize..=6),
                    ],
                );
                let id = self.fresh_input(t.clone());
                (id, t)
            }
        };
        let k = at.shape[1];
        let n = self.rng.random_range(1usize..=6);
        let bt = TensorType::new(at.dtype, vec![k, n]);
        let b = self
            .pick(|nd| nd.out_type == bt)
            .unwrap_or_else(|| self.source_partner(&bt));
        self.try_add(OperatorKind::MatMul, Params::new(), vec![a, b])
    }

    fn add_conv(&mut self) -> Option<NodeId> {
        let c = self.rng.random_range(1usize..=2);
        let hw = self.rng.random_range(4usize..=6);
        let xt = TensorType::new(DType::F32, vec![1, c, hw, hw]);
        let x = self
            .pick(|n| n.out_type == xt)
            .unwrap_or_else(|| self.fresh_input(xt.clone()));
        let o = self.rng.random_range(1usize..=2);
        let kk = self.rng.random_range(1usize..=3);
        let wt = TensorType::new(DType::F32, vec![o, c, kk, kk]);
        let w = self.source_partner(&wt);
        let stride = if self.rng.random_bool(0.7) { 1 } else { 2 };
        let pad = self.rng.random_range(0i64..=1);
        let params = Params::new()
            .with("stride", ParamValue::Ints(vec![stride, stride]))
            .with("pad", ParamValue::Ints(vec![pad, pad]));
        self.try_add(OperatorKind::Conv2d, params, vec![x, w])
    }

    fn add_reshape(&mut self) -> Option<NodeId> {
        let a = self.pick(|n| n.out_type.element_count() >= 1)?;
        let count = self.g.nodes[&a].out_type.element_count();
        // Random factorization of the element count.
        let mut dims = Vec::new();
        let mut rest = count;
        while dims.len() < 3 && rest > 1 {
            let divisors: Vec<usize> = (1..=rest).filter(|d| rest.is_multiple_of(*d)).collect();
            let d = *divisors.choose(self.rng).unwrap();
            dims.push(d);
            rest /= d;
        }
        if rest > 1 || dims.is_empty() {
            dims.push(rest.max(1));
        }
        let params = Params::new().with(
            "shape",
            ParamValue::Ints(dims.iter().map(|d| *d as i64).collect()),
        );
        self.try_add(OperatorKind::Reshape, params, vec![a])
    }

    fn add_transpose(&mut self) -> Option<NodeId> {
        let a = self.pick(|n| n.out_type.rank() >= 2)?;
        let rank = self.g.nodes[&a].out_type.rank();
        let mut perm: Vec<i64> = (0..rank as i64).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(self.rng);
        let params = Params::new().with("perm", ParamValue::Ints(perm));
        self.try_add(OperatorKind::Transpose, params, vec![a])
    }

    fn add_concat(&mut self) -> Option<NodeId> {
        let a = self.pick(|n| n.out_type.rank() >= 1)?;
        let at = self.g.nodes[&a].out_type.clone();
        let axis = self.rng.random_range(0..at.rank()) as i64;
        let axis_signed = if self.rng.random_bool(0.25) {
            axis - at.rank() as i64
        } else {
            axis
        };
        let b = if self.rng.random_bool(0.5) {
            a
        } else {
            self.source_partner(&at)
        };
        let params = Params::new().with("axis", ParamValue::Int(axis_signed));
        self.try_add(OperatorKind::Concat, params, vec![a, b])
    }

    fn add_reduce(&mut self) -> Option<NodeId> {
        let a = self.pick(|n| n.out_type.dtype.is_numeric() && n.out_type.rank() >= 1)?;
        let rank = self.g.nodes[&a].out_type.rank();
        let axis = self.rng.random_range(0..rank) as i64;
        let keepdims = self.rng.random_bool(0.3) as i64;
        let params = Params::new()
            .with("axes", ParamValue::Ints(vec![axis]))
            .with("keepdims", ParamValue::Int(keepdims));
        self.try_add(OperatorKind::ReduceSum, params, vec![a])
    }

    fn add_cast(&mut self) -> Option<NodeId> {
        let a = self.pick(|_| true)?;
        let to = random_dtype(self.rng);
        let params = Params::new().with("to", ParamValue::Dtype(to));
        self.try_add(OperatorKind::Cast, params, vec![a])
    }

    fn add_pad(&mut self) -> Option<NodeId> {
        let a = self.pick(|n| n.out_type.rank() >= 1 && n.out_type.rank() <= 3)?;
        let rank = self.g.nodes[&a].out_type.rank();
        let pads: Vec<i64> = (0..2 * rank)
            .map(|_| self.rng.random_range(0i64..=1))
            .collect();
        let params = Params::new().with("pads", ParamValue::Ints(pads));
        self.try_add(OperatorKind::Pad, params, vec![a])
    }

    fn add_unary(&mut self, kind: OperatorKind) -> Option<NodeId> {
        let a = match kind {
            OperatorKind::Sigmoid => self.pick(|n| n.out_type.dtype == DType::F32)?,
            _ => self.pick(|n| n.out_type.dtype.is_numeric())?,
        };
        self.try_add(kind, Params::new(), vec![a])
    }
}

/// Generates one random valid graph.
pub fn random_graph(rng: &mut StdRng, cfg: &GraphGenConfig) -> Graph {
    let mut b = Builder {
        g: Graph::new(""),
        rng,
        cfg,
        input_count: 0,
    };
    let n_inputs = b.rng.random_range(1usize..=3);
    for _ in 0..n_inputs {
        let shape = random_shape(b.rng, cfg);
        let dtype = random_dtype(b.rng);
        let t = TensorType::new(dtype, shape);
        b.fresh_input(t);
    }
    if b.rng.random_bool(0.7) {
        let shape = random_shape(b.rng, cfg);
        let dtype = if b.rng.random_bool(0.6) {
            DType::F32
        } else {
            DType::I32
        };
        let n: usize = shape.iter().product();
        let t = if n <= 64 {
            TensorType::new(dtype, shape)
        } else {
            TensorType::new(dtype, vec![shape[0].min(8)])
        };
        b.fresh_constant(&t);
    }

    let target = b.rng.random_range(cfg.min_nodes..=cfg.max_nodes);
    let mut attempts = 0usize;
    while b.g.nodes.len() < target && attempts < target * 8 {
        attempts += 1;
        let roll = b.rng.random_range(0u32..100);
        let added = match roll {
            0..=17 => b.add_ew_binary(OperatorKind::Add),
            18..=27 => b.add_ew_binary(OperatorKind::Sub),
            28..=39 => b.add_ew_binary(OperatorKind::Mul),
            40..=44 => b.add_ew_binary(OperatorKind::Div),
            45..=52 => b.add_unary(OperatorKind::Relu),
            53..=57 => b.add_unary(OperatorKind::Neg),
            58..=61 => b.add_unary(OperatorKind::Sigmoid),
            62..=68 => b.add_matmul(),
            69..=73 => b.add_conv(),
            74..=79 => b.add_reshape(),
            80..=85 => b.add_transpose(),
            86..=89 => b.add_concat(),
            90..=93 => b.add_reduce(),
            94..=97 => b.add_cast(),
            _ => b.add_pad(),
        };
        let _ = added;
    }

    let mut g = b.g;
    let consumers = g.consumers();
    let mut sinks: Vec<NodeId> = g
        .nodes
        .values()
        .filter(|n| !consumers.contains_key(&n.id) && !n.kind.is_source())
        .map(|n| n.id)
        .collect();
    if sinks.is_empty() {
        // Degenerate case: only sources. Make one computation to observe.
        let first = *g.nodes.keys().next().unwrap();
        if g.nodes[&first].out_type.dtype.is_numeric() {
            let r = g.add_op(OperatorKind::Relu, Params::new(), vec![first]);
            sinks.push(r);
        } else {
            let params = Params::new().with("to", ParamValue::Dtype(DType::I32));
            let r = g.add_op(OperatorKind::Cast, params, vec![first]);
            sinks.push(r);
        }
    }
    g.outputs = sinks;
    g
}
