// SPDX-License-Identifier: Apache-2.0

//! Reference interpreter for the graph IR.
//!
//! Evaluation is topological-order and pure: exact wrapping semantics for
//! integers, standard single precision for F32. Accumulation orders are
//! fixed (ascending reduction indices) and mirrored exactly by `lower`, so
//! graph and lowered executions of the same graph are bit-identical.

use std::collections::BTreeMap;

use thiserror::Error;

use super::infer::{conv_layout, transpose_perm, ConvLayout};
use super::{EwOp, FusedArg, FusedChain, Graph, Node, NodeId, OperatorKind, Params};
use crate::bugs::BugSet;
use crate::tensor::{
    broadcast_shapes, project_coord, DType, Scalar, TensorData, TensorType, TensorValue,
};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("missing input `{0}`")]
    MissingInput(String),
    #[error("input `{name}` bound with type {bound}, node declares {declared}")]
    InputTypeMismatch {
        name: String,
        bound: String,
        declared: String,
    },
    #[error("numeric domain error in {0}: {1}")]
    NumericDomain(String, String),
    #[error("type violation at node {node} ({kind}): declared {declared}, computed {computed}")]
    TypeViolation {
        node: NodeId,
        kind: String,
        declared: String,
        computed: String,
    },
    #[error("interpreter invariant broken at node {node}: {message}")]
    Internal { node: NodeId, message: String },
}

fn ew_unary(op: EwOp, a: &TensorValue, sat_i8: bool) -> Result<TensorValue, EvalError> {
    let mut out = TensorValue::zeros(a.ttype.clone());
    for i in 0..a.data.len() {
        let v = match (op, a.data.get(i)) {
            (EwOp::Neg, Scalar::F32(x)) => Scalar::F32(-x),
            (EwOp::Neg, Scalar::I32(x)) => Scalar::I32(x.wrapping_neg()),
            (EwOp::Neg, Scalar::I8(x)) if sat_i8 => Scalar::I8(x.saturating_neg()),
            (EwOp::Neg, Scalar::I8(x)) => Scalar::I8(x.wrapping_neg()),
            (EwOp::Relu, Scalar::F32(x)) => Scalar::F32(if x > 0.0 { x } else { 0.0 }),
            (EwOp::Relu, Scalar::I32(x)) => Scalar::I32(x.max(0)),
            (EwOp::Relu, Scalar::I8(x)) => Scalar::I8(x.max(0)),
            (EwOp::Sigmoid, Scalar::F32(x)) => Scalar::F32(1.0 / (1.0 + (-x).exp())),
            (op, s) => {
                return Err(EvalError::Internal {
                    node: NodeId(0),
                    message: format!("{op:?} on {s:?}"),
                })
            }
        };
        out.data.set(i, v);
    }
    Ok(out)
}

/// Saturating variant of I8 arithmetic; the deviation seeded bug `H1`
/// injects into constant folding.
fn scalar_binary_sat_i8(op: EwOp, x: i8, y: i8) -> Result<Scalar, String> {
    Ok(match op {
        EwOp::Add => Scalar::I8(x.saturating_add(y)),
        EwOp::Sub => Scalar::I8(x.saturating_sub(y)),
        EwOp::Mul => Scalar::I8(x.saturating_mul(y)),
        EwOp::Div => {
            if y == 0 {
                return Err("I8 division by zero".into());
            }
            Scalar::I8(x.saturating_div(y))
        }
        _ => return Err(format!("{op:?} is not binary")),
    })
}

/// Scalar binary arithmetic. Integer overflow wraps (two's complement);
/// integer division by zero is a numeric-domain error; F32 follows IEEE.
pub fn scalar_binary(op: EwOp, a: Scalar, b: Scalar) -> Result<Scalar, String> {
    Ok(match (op, a, b) {
        (EwOp::Add, Scalar::F32(x), Scalar::F32(y)) => Scalar::F32(x + y),
        (EwOp::Sub, Scalar::F32(x), Scalar::F32(y)) => Scalar::F32(x - y),
        (EwOp::Mul, Scalar::F32(x), Scalar::F32(y)) => Scalar::F32(x * y),
        (EwOp::Div, Scalar::F32(x), Scalar::F32(y)) => Scalar::F32(x / y),
        (EwOp::Add, Scalar::I32(x), Scalar::I32(y)) => Scalar::I32(x.wrapping_add(y)),
        (EwOp::Sub, Scalar::I32(x), Scalar::I32(y)) => Scalar::I32(x.wrapping_sub(y)),
        (EwOp::Mul, Scalar::I32(x), Scalar::I32(y)) => Scalar::I32(x.wrapping_mul(y)),
        (EwOp::Div, Scalar::I32(x), Scalar::I32(y)) => {
            if y == 0 {
                return Err("I32 division by zero".into());
            }
            Scalar::I32(x.wrapping_div(y))
        }
        (EwOp::Add, Scalar::I8(x), Scalar::I8(y)) => Scalar::I8(x.wrapping_add(y)),
        (EwOp::Sub, Scalar::I8(x), Scalar::I8(y)) => Scalar::I8(x.wrapping_sub(y)),
        (EwOp::Mul, Scalar::I8(x), Scalar::I8(y)) => Scalar::I8(x.wrapping_mul(y)),
        (EwOp::Div, Scalar::I8(x), Scalar::I8(y)) => {
            if y == 0 {
                return Err("I8 division by zero".into());
            }
            Scalar::I8(x.wrapping_div(y))
        }
        (op, a, b) => return Err(format!("{op:?} unsupported on {a:?}, {b:?}")),
    })
}

fn ew_binary(
    op: EwOp,
    kind_name: &str,
    a: &TensorValue,
    b: &TensorValue,
    sat_i8: bool,
) -> Result<TensorValue, EvalError> {
    let shape = broadcast_shapes(&a.ttype.shape, &b.ttype.shape).ok_or_else(|| {
        EvalError::Internal {
            node: NodeId(0),
            message: format!("broadcast failed in {kind_name}"),
        }
    })?;
    let out_type = TensorType::new(a.ttype.dtype, shape.clone());
    let mut out = TensorValue::zeros(out_type);
    let count = out.ttype.element_count();
    let mut coord = vec![0usize; shape.len()];
    for flat in 0..count {
        let va = a.data.get(project_coord(&coord, &shape, &a.ttype.shape));
        let vb = b.data.get(project_coord(&coord, &shape, &b.ttype.shape));
        let v = match (sat_i8, va, vb) {
            (true, Scalar::I8(x), Scalar::I8(y)) => scalar_binary_sat_i8(op, x, y),
            _ => scalar_binary(op, va, vb),
        }
        .map_err(|m| EvalError::NumericDomain(kind_name.to_string(), m))?;
        out.data.set(flat, v);
        for d in (0..shape.len()).rev() {
            coord[d] += 1;
            if coord[d] < shape[d] {
                break;
            }
            coord[d] = 0;
        }
    }
    Ok(out)
}

fn eval_fused(
    chain: &FusedChain,
    inputs: &[&TensorValue],
    sat_i8: bool,
) -> Result<TensorValue, EvalError> {
    let mut steps: Vec<TensorValue> = Vec::with_capacity(chain.steps.len());
    for step in &chain.steps {
        let arg = |a: &FusedArg| -> &TensorValue {
            match a {
                FusedArg::Input(i) => inputs[*i],
                FusedArg::Step(j) => &steps[*j],
            }
        };
        let value = match step.op.arity() {
            1 => ew_unary(step.op, arg(&step.args[0]), sat_i8)?,
            _ => ew_binary(
                step.op,
                "FusedGroup",
                arg(&step.args[0]),
                arg(&step.args[1]),
                sat_i8,
            )?,
        };
        steps.push(value);
    }
    steps.pop().ok_or(EvalError::Internal {
        node: NodeId(0),
        message: "empty fused chain".into(),
    })
}

fn eval_matmul(a: &TensorValue, b: &TensorValue) -> Result<TensorValue, EvalError> {
    let (m, k) = (a.ttype.shape[0], a.ttype.shape[1]);
    let n = b.ttype.shape[1];
    let out_type = TensorType::new(a.ttype.dtype, vec![m, n]);
    let mut out = TensorValue::zeros(out_type);
    for i in 0..m {
        for j in 0..n {
            match a.ttype.dtype {
                DType::F32 => {
                    let mut acc = 0.0f32;
                    for p in 0..k {
                        let x = match a.data.get(i * k + p) {
                            Scalar::F32(v) => v,
                            _ => unreachable!(),
                        };
                        let y = match b.data.get(p * n + j) {
                            Scalar::F32(v) => v,
                            _ => unreachable!(),
                        };
                        acc += x * y;
                    }
                    out.data.set(i * n + j, Scalar::F32(acc));
                }
                DType::I32 => {
                    let mut acc = 0i32;
                    for p in 0..k {
                        let x = match a.data.get(i * k + p) {
                            Scalar::I32(v) => v,
                            _ => unreachable!(),
                        };
                        let y = match b.data.get(p * n + j) {
                            Scalar::I32(v) => v,
                            _ => unreachable!(),
                        };
                        acc = acc.wrapping_add(x.wrapping_mul(y));
                    }
                    out.data.set(i * n + j, Scalar::I32(acc));
                }
                other => {
                    return Err(EvalError::Internal {
                        node: NodeId(0),
                        message: format!("MatMul on {other}"),
                    })
                }
            }
        }
    }
    Ok(out)
}

/// Direct convolution, honoring the node's activation layout and the full
/// asymmetric `[top, bottom, left, right]` padding with zero filling.
fn eval_conv2d(
    params: &Params,
    input: &TensorValue,
    weight: &TensorValue,
) -> Result<TensorValue, EvalError> {
    let layout = conv_layout(params).map_err(|e| EvalError::Internal {
        node: NodeId(0),
        message: e.to_string(),
    })?;
    let (n, c, h, w) = match layout {
        ConvLayout::Nchw => (
            input.ttype.shape[0],
            input.ttype.shape[1],
            input.ttype.shape[2],
            input.ttype.shape[3],
        ),
        ConvLayout::Nhwc => (
            input.ttype.shape[0],
            input.ttype.shape[3],
            input.ttype.shape[1],
            input.ttype.shape[2],
        ),
    };
    let (o, _, kh, kw) = (
        weight.ttype.shape[0],
        weight.ttype.shape[1],
        weight.ttype.shape[2],
        weight.ttype.shape[3],
    );
    let stride = params.get_ints("stride").unwrap_or(&[1, 1]);
    let (sh, sw) = (stride[0] as usize, stride[1] as usize);
    let pad = params.get_ints("pad").unwrap_or(&[0, 0]);
    let (pt, pb, pl, pr) = match pad.len() {
        2 => (pad[0] as usize, pad[0] as usize, pad[1] as usize, pad[1] as usize),
        _ => (pad[0] as usize, pad[1] as usize, pad[2] as usize, pad[3] as usize),
    };
    let oh = (h + pt + pb - kh) / sh + 1;
    let ow = (w + pl + pr - kw) / sw + 1;
    let out_shape = match layout {
        ConvLayout::Nchw => vec![n, o, oh, ow],
        ConvLayout::Nhwc => vec![n, oh, ow, o],
    };
    let mut out = TensorValue::zeros(TensorType::new(DType::F32, out_shape));
    let in_f = match &input.data {
        TensorData::F32(v) => v,
        _ => unreachable!(),
    };
    let w_f = match &weight.data {
        TensorData::F32(v) => v,
        _ => unreachable!(),
    };
    let in_at = |bi: usize, ci: usize, y: usize, x: usize| -> f32 {
        let idx = match layout {
            ConvLayout::Nchw => ((bi * c + ci) * h + y) * w + x,
            ConvLayout::Nhwc => ((bi * h + y) * w + x) * c + ci,
        };
        in_f[idx]
    };
    for bi in 0..n {
        for co in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0f32;
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * sh + ky) as i64 - pt as i64;
                                let ix = (ox * sw + kx) as i64 - pl as i64;
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                    continue;
                                }
                                let wv = w_f[((co * c + ci) * kh + ky) * kw + kx];
                                acc += in_at(bi, ci, iy as usize, ix as usize) * wv;
                            }
                        }
                    }
                    let out_idx = match layout {
                        ConvLayout::Nchw => ((bi * o + co) * oh + oy) * ow + ox,
                        ConvLayout::Nhwc => ((bi * oh + oy) * ow + ox) * o + co,
                    };
                    out.data.set(out_idx, Scalar::F32(acc));
                }
            }
        }
    }
    Ok(out)
}

fn eval_transpose(perm: &[usize], a: &TensorValue) -> TensorValue {
    let in_shape = &a.ttype.shape;
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let out_type = TensorType::new(a.ttype.dtype, out_shape.clone());
    let mut out = TensorValue::zeros(out_type);
    let in_strides = a.ttype.strides();
    let count = a.ttype.element_count();
    let mut coord = vec![0usize; out_shape.len()];
    for flat in 0..count {
        let mut src = 0usize;
        for (d, &p) in perm.iter().enumerate() {
            src += coord[d] * in_strides[p];
        }
        out.data.set(flat, a.data.get(src));
        for d in (0..out_shape.len()).rev() {
            coord[d] += 1;
            if coord[d] < out_shape[d] {
                break;
            }
            coord[d] = 0;
        }
    }
    out
}

fn eval_concat(axis: usize, inputs: &[&TensorValue]) -> TensorValue {
    let mut out_shape = inputs[0].ttype.shape.clone();
    out_shape[axis] = inputs.iter().map(|t| t.ttype.shape[axis]).sum();
    let out_type = TensorType::new(inputs[0].ttype.dtype, out_shape.clone());
    let mut out = TensorValue::zeros(out_type);
    let outer: usize = out_shape[..axis].iter().product();
    let inner: usize = out_shape[axis + 1..].iter().product();
    let mut axis_off = 0usize;
    for t in inputs {
        let t_axis = t.ttype.shape[axis];
        for outer_i in 0..outer {
            for a in 0..t_axis {
                for inner_i in 0..inner {
                    let src = (outer_i * t_axis + a) * inner + inner_i;
                    let dst = (outer_i * out_shape[axis] + axis_off + a) * inner + inner_i;
                    out.data.set(dst, t.data.get(src));
                }
            }
        }
        axis_off += t_axis;
    }
    out
}

/// Sums over `axes`, accumulating in ascending row-major input order.
fn eval_reduce_sum(out_type: &TensorType, axes: &[usize], a: &TensorValue) -> TensorValue {
    let mut out = TensorValue::zeros(out_type.clone());
    let in_shape = &a.ttype.shape;
    let reduced: Vec<bool> = (0..in_shape.len()).map(|d| axes.contains(&d)).collect();
    let keepdims = out_type.rank() == in_shape.len() && !in_shape.is_empty();
    let out_strides = out_type.strides();
    let count = a.ttype.element_count();
    let mut coord = vec![0usize; in_shape.len()];
    for flat in 0..count {
        let mut dst = 0usize;
        let mut od = 0usize;
        for (d, &c) in coord.iter().enumerate() {
            if reduced[d] {
                if keepdims {
                    od += 1;
                }
                continue;
            }
            dst += c * out_strides[od];
            od += 1;
        }
        let acc = match (out.data.get(dst), a.data.get(flat)) {
            (Scalar::F32(x), Scalar::F32(y)) => Scalar::F32(x + y),
            (Scalar::I32(x), Scalar::I32(y)) => Scalar::I32(x.wrapping_add(y)),
            (Scalar::I8(x), Scalar::I8(y)) => Scalar::I8(x.wrapping_add(y)),
            _ => unreachable!(),
        };
        out.data.set(dst, acc);
        for d in (0..in_shape.len()).rev() {
            coord[d] += 1;
            if coord[d] < in_shape[d] {
                break;
            }
            coord[d] = 0;
        }
    }
    out
}

fn eval_pad(out_type: &TensorType, pads: &[i64], a: &TensorValue) -> TensorValue {
    let mut out = TensorValue::zeros(out_type.clone());
    let in_shape = &a.ttype.shape;
    let out_strides = out_type.strides();
    let count = a.ttype.element_count();
    let mut coord = vec![0usize; in_shape.len()];
    for flat in 0..count {
        let mut dst = 0usize;
        for (d, &c) in coord.iter().enumerate() {
            dst += (c + pads[2 * d] as usize) * out_strides[d];
        }
        out.data.set(dst, a.data.get(flat));
        for d in (0..in_shape.len()).rev() {
            coord[d] += 1;
            if coord[d] < in_shape[d] {
                break;
            }
            coord[d] = 0;
        }
    }
    out
}

fn eval_cast(to: DType, a: &TensorValue) -> TensorValue {
    let out_type = TensorType::new(to, a.ttype.shape.clone());
    let mut out = TensorValue::zeros(out_type);
    for i in 0..a.data.len() {
        out.data.set(i, a.data.get(i).cast_to(to));
    }
    out
}

/// Evaluates one node given its input values.
pub fn eval_node(node: &Node, inputs: &[&TensorValue]) -> Result<TensorValue, EvalError> {
    eval_node_impl(node, inputs, false)
}

/// Node evaluation as used by constant folding. `saturate_i8` selects the
/// seeded-bug H1 deviation (I8 arithmetic saturates instead of wrapping).
pub fn eval_node_for_fold(
    node: &Node,
    inputs: &[&TensorValue],
    saturate_i8: bool,
) -> Result<TensorValue, EvalError> {
    eval_node_impl(node, inputs, saturate_i8)
}

fn eval_node_impl(
    node: &Node,
    inputs: &[&TensorValue],
    sat_i8: bool,
) -> Result<TensorValue, EvalError> {
    let wrap_err = |e: EvalError| match e {
        EvalError::Internal { message, .. } => EvalError::Internal {
            node: node.id,
            message,
        },
        EvalError::NumericDomain(k, m) => EvalError::NumericDomain(k, m),
        other => other,
    };
    match &node.kind {
        OperatorKind::Input | OperatorKind::Constant => Err(EvalError::Internal {
            node: node.id,
            message: "source nodes are not evaluated via eval_node".into(),
        }),
        OperatorKind::Add | OperatorKind::Sub | OperatorKind::Mul | OperatorKind::Div => {
            let op = EwOp::from_kind(&node.kind).unwrap();
            ew_binary(op, node.kind.name(), inputs[0], inputs[1], sat_i8).map_err(wrap_err)
        }
        OperatorKind::Neg | OperatorKind::Relu | OperatorKind::Sigmoid => {
            let op = EwOp::from_kind(&node.kind).unwrap();
            ew_unary(op, inputs[0], sat_i8).map_err(wrap_err)
        }
        OperatorKind::MatMul => eval_matmul(inputs[0], inputs[1]).map_err(wrap_err),
        OperatorKind::Conv2d => eval_conv2d(&node.params, inputs[0], inputs[1]).map_err(wrap_err),
        OperatorKind::Reshape => {
            let shape: Vec<usize> = node
                .params
                .get_ints("shape")
                .unwrap_or_default()
                .iter()
                .map(|d| *d as usize)
                .collect();
            Ok(TensorValue {
                ttype: TensorType::new(inputs[0].ttype.dtype, shape),
                data: inputs[0].data.clone(),
            })
        }
        OperatorKind::Transpose => {
            // Raw-param semantics: duplicate axes are honored as written.
            let perm = transpose_perm(&node.params, inputs[0].ttype.rank(), &BugSet::all())
                .map_err(|e| EvalError::Internal {
                    node: node.id,
                    message: e.to_string(),
                })?;
            Ok(eval_transpose(&perm, inputs[0]))
        }
        OperatorKind::Concat => {
            let axis = node.params.get_int("axis").unwrap_or(0);
            let rank = inputs[0].ttype.rank() as i64;
            let axis = if axis < 0 { axis + rank } else { axis };
            if axis < 0 || axis >= rank {
                return Err(EvalError::Internal {
                    node: node.id,
                    message: format!("Concat axis {axis} out of range"),
                });
            }
            Ok(eval_concat(axis as usize, inputs))
        }
        OperatorKind::ReduceSum => {
            let axes: Vec<usize> = node
                .params
                .get_ints("axes")
                .unwrap_or_default()
                .iter()
                .map(|a| *a as usize)
                .collect();
            let keepdims = node.params.get_int("keepdims") == Some(1);
            let mut shape = Vec::new();
            for (d, &ext) in inputs[0].ttype.shape.iter().enumerate() {
                if axes.contains(&d) {
                    if keepdims {
                        shape.push(1);
                    }
                } else {
                    shape.push(ext);
                }
            }
            let out_type = TensorType::new(inputs[0].ttype.dtype, shape);
            Ok(eval_reduce_sum(&out_type, &axes, inputs[0]))
        }
        OperatorKind::Cast => {
            let to = node.params.get_dtype("to").ok_or(EvalError::Internal {
                node: node.id,
                message: "Cast missing to param".into(),
            })?;
            Ok(eval_cast(to, inputs[0]))
        }
        OperatorKind::Pad => {
            let pads = node.params.get_ints("pads").unwrap_or_default().to_vec();
            let shape: Vec<usize> = inputs[0]
                .ttype
                .shape
                .iter()
                .enumerate()
                .map(|(d, &ext)| ext + pads[2 * d] as usize + pads[2 * d + 1] as usize)
                .collect();
            let out_type = TensorType::new(inputs[0].ttype.dtype, shape);
            Ok(eval_pad(&out_type, &pads, inputs[0]))
        }
        OperatorKind::FusedGroup(chain) => eval_fused(chain, inputs, sat_i8).map_err(wrap_err),
    }
}

/// Evaluates a graph: every `Input` node must be bound by name. Output
/// values are returned in `g.outputs` order. A computed value whose type
/// differs from the node's declared type is a type-soundness violation and
/// surfaces as `TypeViolation`.
pub fn interpret_graph(
    g: &Graph,
    inputs: &BTreeMap<String, TensorValue>,
) -> Result<Vec<TensorValue>, EvalError> {
    let order = g.topo_order().ok_or(EvalError::Internal {
        node: NodeId(0),
        message: "graph has a cycle or dangling edge".into(),
    })?;
    let mut values: BTreeMap<NodeId, TensorValue> = BTreeMap::new();
    for id in order {
        let node = &g.nodes[&id];
        let value = match &node.kind {
            OperatorKind::Input => {
                let name = node.params.get_str("name").unwrap_or_default();
                let bound = inputs
                    .get(name)
                    .ok_or_else(|| EvalError::MissingInput(name.to_string()))?;
                if bound.ttype != node.out_type {
                    return Err(EvalError::InputTypeMismatch {
                        name: name.to_string(),
                        bound: bound.ttype.to_string(),
                        declared: node.out_type.to_string(),
                    });
                }
                bound.clone()
            }
            OperatorKind::Constant => node.payload.clone().ok_or(EvalError::Internal {
                node: id,
                message: "constant without payload".into(),
            })?,
            _ => {
                let in_values: Vec<&TensorValue> =
                    node.inputs.iter().map(|i| &values[i]).collect();
                eval_node(node, &in_values)?
            }
        };
        if value.ttype != node.out_type {
            return Err(EvalError::TypeViolation {
                node: id,
                kind: node.kind.name().to_string(),
                declared: node.out_type.to_string(),
                computed: value.ttype.to_string(),
            });
        }
        values.insert(id, value);
    }
    Ok(g.outputs.iter().map(|id| values[id].clone()).collect())
}
