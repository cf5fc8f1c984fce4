// SPDX-License-Identifier: Apache-2.0

//! Lowering from the graph IR to the loop IR: one loop nest per node, fused
//! groups as a single nest.
//!
//! Accumulation orders (matmul inner product, convolution channel/kernel
//! loops, reductions) mirror the graph interpreter exactly, so lowered
//! programs are bit-comparable with `interpret_graph` on the same inputs.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::bugs::BugSet;
use crate::graph::infer::{conv_layout, transpose_perm, ConvLayout};
use crate::graph::{FusedArg, FusedChain, Graph, Node, NodeId, OperatorKind};
use crate::loop_ir::{
    for_loop, seq, AllocScope, Buffer, CmpOp, CondExpr, Expr, LoopAnnotation, LoopProgram, Stmt,
};
use crate::tensor::{DType, Scalar, TensorType, TensorValue};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LowerError {
    #[error("lowering unsupported: {0}")]
    Unsupported(String),
    #[error("lowering internal error: {0}")]
    Internal(String),
}

/// Buffer name used for a node's result.
pub fn node_buffer_name(g: &Graph, id: NodeId) -> String {
    let node = &g.nodes[&id];
    match node.kind {
        OperatorKind::Input => node
            .params
            .get_str("name")
            .unwrap_or_default()
            .to_string(),
        _ => format!("t{id}"),
    }
}

/// Buffer names for the graph outputs, in output order.
pub fn output_buffer_names(g: &Graph) -> Vec<String> {
    g.outputs.iter().map(|id| node_buffer_name(g, *id)).collect()
}

struct Lowering<'a> {
    g: &'a Graph,
    stmts: Vec<Stmt>,
    var_counter: usize,
}

impl<'a> Lowering<'a> {
    fn fresh_vars(&mut self, n: usize) -> Vec<String> {
        let base = self.var_counter;
        self.var_counter += n;
        (0..n).map(|k| format!("i{}", base + k)).collect()
    }

    fn buf(&self, id: NodeId) -> String {
        node_buffer_name(self.g, id)
    }

    /// Loop nest over `shape` whose innermost body is produced by `body`,
    /// which receives the per-dimension index variables.
    fn nest(&mut self, shape: &[usize], body: impl FnOnce(&[String]) -> Stmt) -> Stmt {
        let vars = self.fresh_vars(shape.len());
        let mut stmt = body(&vars);
        for d in (0..shape.len()).rev() {
            stmt = for_loop(
                &vars[d],
                Expr::IntLit(0),
                Expr::IntLit(shape[d] as i64),
                LoopAnnotation::Serial,
                stmt,
            );
        }
        stmt
    }
}

/// Index expressions for a broadcast operand: trailing-aligned, with
/// stretched (extent-1) axes pinned to zero.
fn project_indices(out_vars: &[String], out_shape: &[usize], in_shape: &[usize]) -> Vec<Expr> {
    let skip = out_shape.len() - in_shape.len();
    (0..in_shape.len())
        .map(|d| {
            if in_shape[d] == 1 {
                Expr::IntLit(0)
            } else {
                Expr::var(&out_vars[skip + d])
            }
        })
        .collect()
}

fn zero_literal(dtype: DType) -> Expr {
    match dtype {
        DType::F32 => Expr::Const(Scalar::F32(0.0)),
        DType::Bool => Expr::Const(Scalar::Bool(false)),
        _ => Expr::IntLit(0),
    }
}

fn payload_literal(value: &TensorValue, flat: usize) -> Expr {
    match value.data.get(flat) {
        Scalar::F32(v) => Expr::Const(Scalar::F32(v)),
        Scalar::Bool(v) => Expr::Const(Scalar::Bool(v)),
        Scalar::I32(v) => Expr::IntLit(v as i64),
        Scalar::I8(v) => Expr::IntLit(v as i64),
    }
}

fn bin_kind(kind: &OperatorKind) -> crate::loop_ir::BinOp {
    use crate::loop_ir::BinOp;
    match kind {
        OperatorKind::Add => BinOp::Add,
        OperatorKind::Sub => BinOp::Sub,
        OperatorKind::Mul => BinOp::Mul,
        OperatorKind::Div => BinOp::Div,
        _ => unreachable!("not a binary elementwise kind"),
    }
}

fn unary_expr(kind: &OperatorKind, arg: Expr) -> Expr {
    use crate::loop_ir::UnOp;
    match kind {
        OperatorKind::Neg => Expr::Un(UnOp::Neg, Box::new(arg)),
        OperatorKind::Relu => Expr::Un(UnOp::Relu, Box::new(arg)),
        OperatorKind::Sigmoid => Expr::Un(UnOp::Sigmoid, Box::new(arg)),
        _ => unreachable!("not a unary elementwise kind"),
    }
}

fn coord_to_multi(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut coord = vec![0usize; shape.len()];
    for d in (0..shape.len()).rev() {
        if shape[d] > 0 {
            coord[d] = flat % shape[d];
            flat /= shape[d];
        }
    }
    coord
}

fn lower_constant(lw: &mut Lowering, node: &Node) -> Result<Stmt, LowerError> {
    let value = node
        .payload
        .as_ref()
        .ok_or_else(|| LowerError::Internal(format!("constant {} has no payload", node.id)))?;
    let buf = lw.buf(node.id);
    let shape = &node.out_type.shape;
    let mut stores = Vec::with_capacity(value.data.len());
    for flat in 0..value.data.len() {
        let coord = coord_to_multi(flat, shape);
        stores.push(Stmt::Store {
            buffer: buf.clone(),
            indices: coord.iter().map(|c| Expr::IntLit(*c as i64)).collect(),
            value: payload_literal(value, flat),
        });
    }
    Ok(seq(stores))
}

fn lower_ew_binary(lw: &mut Lowering, node: &Node) -> Stmt {
    let out_shape = node.out_type.shape.clone();
    let a = &lw.g.nodes[&node.inputs[0]];
    let b = &lw.g.nodes[&node.inputs[1]];
    let (a_buf, b_buf) = (lw.buf(a.id), lw.buf(b.id));
    let (a_shape, b_shape) = (a.out_type.shape.clone(), b.out_type.shape.clone());
    let out_buf = lw.buf(node.id);
    let op = bin_kind(&node.kind);
    lw.nest(&out_shape.clone(), |vars| Stmt::Store {
        buffer: out_buf,
        indices: vars.iter().map(|v| Expr::var(v)).collect(),
        value: Expr::Bin(
            op,
            Box::new(Expr::Load(
                a_buf,
                project_indices(vars, &out_shape, &a_shape),
            )),
            Box::new(Expr::Load(
                b_buf,
                project_indices(vars, &out_shape, &b_shape),
            )),
        ),
    })
}

fn lower_unary(lw: &mut Lowering, node: &Node) -> Stmt {
    let shape = node.out_type.shape.clone();
    let in_buf = lw.buf(node.inputs[0]);
    let out_buf = lw.buf(node.id);
    let kind = node.kind.clone();
    lw.nest(&shape, |vars| Stmt::Store {
        buffer: out_buf,
        indices: vars.iter().map(|v| Expr::var(v)).collect(),
        value: unary_expr(
            &kind,
            Expr::Load(in_buf, vars.iter().map(|v| Expr::var(v)).collect()),
        ),
    })
}

fn lower_cast(lw: &mut Lowering, node: &Node) -> Stmt {
    let shape = node.out_type.shape.clone();
    let to = node.out_type.dtype;
    let in_buf = lw.buf(node.inputs[0]);
    let out_buf = lw.buf(node.id);
    lw.nest(&shape, |vars| Stmt::Store {
        buffer: out_buf,
        indices: vars.iter().map(|v| Expr::var(v)).collect(),
        value: Expr::Cast(
            to,
            Box::new(Expr::Load(in_buf, vars.iter().map(|v| Expr::var(v)).collect())),
        ),
    })
}

fn lower_matmul(lw: &mut Lowering, node: &Node) -> Stmt {
    let a = &lw.g.nodes[&node.inputs[0]];
    let (m, kdim) = (a.out_type.shape[0], a.out_type.shape[1]);
    let n = node.out_type.shape[1];
    let (a_buf, b_buf) = (lw.buf(node.inputs[0]), lw.buf(node.inputs[1]));
    let out_buf = lw.buf(node.id);
    let vars = lw.fresh_vars(3);
    let (i, j, k) = (&vars[0], &vars[1], &vars[2]);
    let init = Stmt::Store {
        buffer: out_buf.clone(),
        indices: vec![Expr::var(i), Expr::var(j)],
        value: zero_literal(node.out_type.dtype),
    };
    let acc = Stmt::Store {
        buffer: out_buf.clone(),
        indices: vec![Expr::var(i), Expr::var(j)],
        value: Expr::add(
            Expr::load(&out_buf, vec![Expr::var(i), Expr::var(j)]),
            Expr::mul(
                Expr::load(&a_buf, vec![Expr::var(i), Expr::var(k)]),
                Expr::load(&b_buf, vec![Expr::var(k), Expr::var(j)]),
            ),
        ),
    };
    let k_loop = for_loop(
        k,
        Expr::IntLit(0),
        Expr::IntLit(kdim as i64),
        LoopAnnotation::Serial,
        acc,
    );
    let j_loop = for_loop(
        j,
        Expr::IntLit(0),
        Expr::IntLit(n as i64),
        LoopAnnotation::Serial,
        seq(vec![init, k_loop]),
    );
    for_loop(
        i,
        Expr::IntLit(0),
        Expr::IntLit(m as i64),
        LoopAnnotation::Serial,
        j_loop,
    )
}

fn lower_conv2d(lw: &mut Lowering, node: &Node) -> Result<Stmt, LowerError> {
    let layout = conv_layout(&node.params).map_err(|e| LowerError::Internal(e.to_string()))?;
    let input = &lw.g.nodes[&node.inputs[0]];
    let weight = &lw.g.nodes[&node.inputs[1]];
    let (n, c, h, w) = match layout {
        ConvLayout::Nchw => (
            input.out_type.shape[0],
            input.out_type.shape[1],
            input.out_type.shape[2],
            input.out_type.shape[3],
        ),
        ConvLayout::Nhwc => (
            input.out_type.shape[0],
            input.out_type.shape[3],
            input.out_type.shape[1],
            input.out_type.shape[2],
        ),
    };
    let (o, kh, kw) = (
        weight.out_type.shape[0],
        weight.out_type.shape[2],
        weight.out_type.shape[3],
    );
    let (oh, ow) = match layout {
        ConvLayout::Nchw => (node.out_type.shape[2], node.out_type.shape[3]),
        ConvLayout::Nhwc => (node.out_type.shape[1], node.out_type.shape[2]),
    };
    let stride = node.params.get_ints("stride").unwrap_or(&[1, 1]).to_vec();
    let (sh, sw) = (stride[0], stride[1]);
    let pad = node.params.get_ints("pad").unwrap_or(&[0, 0]).to_vec();
    let (pt, pl) = match pad.len() {
        2 => (pad[0], pad[1]),
        _ => (pad[0], pad[2]),
    };
    let needs_guard = pad.iter().any(|p| *p > 0);

    let in_buf = lw.buf(node.inputs[0]);
    let w_buf = lw.buf(node.inputs[1]);
    let out_buf = lw.buf(node.id);
    let vars = lw.fresh_vars(7);
    let (vb, vo, vy, vx, vc, vky, vkx) = (
        &vars[0], &vars[1], &vars[2], &vars[3], &vars[4], &vars[5], &vars[6],
    );
    let out_idx = |layout: ConvLayout| -> Vec<Expr> {
        match layout {
            ConvLayout::Nchw => vec![Expr::var(vb), Expr::var(vo), Expr::var(vy), Expr::var(vx)],
            ConvLayout::Nhwc => vec![Expr::var(vb), Expr::var(vy), Expr::var(vx), Expr::var(vo)],
        }
    };
    // iy = vy*sh + vky - pt; ix = vx*sw + vkx - pl
    let iy = Expr::sub(
        Expr::add(
            Expr::mul(Expr::var(vy), Expr::IntLit(sh)),
            Expr::var(vky),
        ),
        Expr::IntLit(pt),
    );
    let ix = Expr::sub(
        Expr::add(
            Expr::mul(Expr::var(vx), Expr::IntLit(sw)),
            Expr::var(vkx),
        ),
        Expr::IntLit(pl),
    );
    let in_idx = match layout {
        ConvLayout::Nchw => vec![Expr::var(vb), Expr::var(vc), iy.clone(), ix.clone()],
        ConvLayout::Nhwc => vec![Expr::var(vb), iy.clone(), ix.clone(), Expr::var(vc)],
    };
    let w_idx = vec![Expr::var(vo), Expr::var(vc), Expr::var(vky), Expr::var(vkx)];

    let init = Stmt::Store {
        buffer: out_buf.clone(),
        indices: out_idx(layout),
        value: Expr::Const(Scalar::F32(0.0)),
    };
    let mut acc: Stmt = Stmt::Store {
        buffer: out_buf.clone(),
        indices: out_idx(layout),
        value: Expr::add(
            Expr::load(&out_buf, out_idx(layout)),
            Expr::mul(Expr::Load(in_buf, in_idx), Expr::Load(w_buf, w_idx)),
        ),
    };
    if needs_guard {
        // Left-associated conjunction, matching the parser's fold.
        let cond = CondExpr::and(
            CondExpr::and(
                CondExpr::and(
                    CondExpr::Cmp(CmpOp::Ge, iy.clone(), Expr::IntLit(0)),
                    CondExpr::Cmp(CmpOp::Lt, iy, Expr::IntLit(h as i64)),
                ),
                CondExpr::Cmp(CmpOp::Ge, ix.clone(), Expr::IntLit(0)),
            ),
            CondExpr::Cmp(CmpOp::Lt, ix, Expr::IntLit(w as i64)),
        );
        acc = Stmt::If {
            cond,
            body: Box::new(acc),
        };
    }
    // Accumulation order (vc, vky, vkx) matches the graph kernel.
    let mut inner = acc;
    for (var, extent) in [(vkx, kw), (vky, kh), (vc, c)] {
        inner = for_loop(
            var,
            Expr::IntLit(0),
            Expr::IntLit(extent as i64),
            LoopAnnotation::Serial,
            inner,
        );
    }
    let mut stmt = seq(vec![init, inner]);
    for (var, extent) in [(vx, ow), (vy, oh), (vo, o), (vb, n)] {
        stmt = for_loop(
            var,
            Expr::IntLit(0),
            Expr::IntLit(extent as i64),
            LoopAnnotation::Serial,
            stmt,
        );
    }
    Ok(stmt)
}

fn lower_reshape(lw: &mut Lowering, node: &Node) -> Stmt {
    let out_shape = node.out_type.shape.clone();
    let in_node = &lw.g.nodes[&node.inputs[0]];
    let in_shape = in_node.out_type.shape.clone();
    let in_strides = in_node.out_type.strides();
    let out_strides = node.out_type.strides();
    let in_buf = lw.buf(node.inputs[0]);
    let out_buf = lw.buf(node.id);
    lw.nest(&out_shape.clone(), |vars| {
        // flat = sum(var_d * out_stride_d); in coords decompose flat.
        let mut flat = Expr::IntLit(0);
        for (d, v) in vars.iter().enumerate() {
            flat = Expr::add(
                flat,
                Expr::mul(Expr::var(v), Expr::IntLit(out_strides[d] as i64)),
            );
        }
        let in_idx: Vec<Expr> = (0..in_shape.len())
            .map(|d| {
                Expr::Bin(
                    crate::loop_ir::BinOp::Mod,
                    Box::new(Expr::Bin(
                        crate::loop_ir::BinOp::Div,
                        Box::new(flat.clone()),
                        Box::new(Expr::IntLit(in_strides[d] as i64)),
                    )),
                    Box::new(Expr::IntLit(in_shape[d] as i64)),
                )
            })
            .collect();
        Stmt::Store {
            buffer: out_buf,
            indices: vars.iter().map(|v| Expr::var(v)).collect(),
            value: Expr::Load(in_buf, in_idx),
        }
    })
}

fn lower_transpose(lw: &mut Lowering, node: &Node) -> Result<Stmt, LowerError> {
    let perm = transpose_perm(&node.params, lw.g.nodes[&node.inputs[0]].out_type.rank(), &BugSet::all())
        .map_err(|e| LowerError::Internal(e.to_string()))?;
    let out_shape = node.out_type.shape.clone();
    let in_rank = perm.len();
    let in_buf = lw.buf(node.inputs[0]);
    let out_buf = lw.buf(node.id);
    Ok(lw.nest(&out_shape, |vars| {
        let in_idx: Vec<Expr> = (0..in_rank)
            .map(|p| match perm.iter().position(|&q| q == p) {
                Some(d) => Expr::var(&vars[d]),
                None => Expr::IntLit(0),
            })
            .collect();
        Stmt::Store {
            buffer: out_buf,
            indices: vars.iter().map(|v| Expr::var(v)).collect(),
            value: Expr::Load(in_buf, in_idx),
        }
    }))
}

fn lower_concat(lw: &mut Lowering, node: &Node) -> Result<Stmt, LowerError> {
    let rank = node.out_type.rank();
    let axis_raw = node
        .params
        .get_int("axis")
        .ok_or_else(|| LowerError::Internal("Concat missing axis".into()))?;
    let axis = if axis_raw < 0 {
        axis_raw + rank as i64
    } else {
        axis_raw
    };
    if axis < 0 || axis >= rank as i64 {
        return Err(LowerError::Internal(format!("Concat axis {axis_raw} out of range")));
    }
    let axis = axis as usize;
    let out_buf = lw.buf(node.id);
    let mut pieces = Vec::new();
    let mut offset = 0i64;
    for input in node.inputs.clone() {
        let in_shape = lw.g.nodes[&input].out_type.shape.clone();
        let in_buf = lw.buf(input);
        let out_buf = out_buf.clone();
        let piece = lw.nest(&in_shape, |vars| {
            let out_idx: Vec<Expr> = vars
                .iter()
                .enumerate()
                .map(|(d, v)| {
                    if d == axis {
                        Expr::add(Expr::var(v), Expr::IntLit(offset))
                    } else {
                        Expr::var(v)
                    }
                })
                .collect();
            Stmt::Store {
                buffer: out_buf,
                indices: out_idx,
                value: Expr::Load(in_buf, vars.iter().map(|v| Expr::var(v)).collect()),
            }
        });
        offset += lw.g.nodes[&input].out_type.shape[axis] as i64;
        pieces.push(piece);
    }
    Ok(seq(pieces))
}

fn lower_reduce_sum(lw: &mut Lowering, node: &Node) -> Stmt {
    let in_node = &lw.g.nodes[&node.inputs[0]];
    let in_shape = in_node.out_type.shape.clone();
    let axes: BTreeSet<usize> = node
        .params
        .get_ints("axes")
        .unwrap_or_default()
        .iter()
        .map(|a| *a as usize)
        .collect();
    let keepdims = node.params.get_int("keepdims") == Some(1);
    let out_shape = node.out_type.shape.clone();
    let in_buf = lw.buf(node.inputs[0]);
    let out_buf = lw.buf(node.id);

    let zero = zero_literal(node.out_type.dtype);
    let init = {
        let out_buf = out_buf.clone();
        lw.nest(&out_shape, |vars| Stmt::Store {
            buffer: out_buf,
            indices: vars.iter().map(|v| Expr::var(v)).collect(),
            value: zero,
        })
    };
    // Accumulate in ascending row-major input order, as the graph kernel does.
    let acc = lw.nest(&in_shape.clone(), |vars| {
        let mut out_idx = Vec::new();
        for (d, v) in vars.iter().enumerate() {
            if axes.contains(&d) {
                if keepdims {
                    out_idx.push(Expr::IntLit(0));
                }
            } else {
                out_idx.push(Expr::var(v));
            }
        }
        Stmt::Store {
            buffer: out_buf.clone(),
            indices: out_idx.clone(),
            value: Expr::add(
                Expr::Load(out_buf, out_idx),
                Expr::Load(in_buf, vars.iter().map(|v| Expr::var(v)).collect()),
            ),
        }
    });
    seq(vec![init, acc])
}

fn lower_pad(lw: &mut Lowering, node: &Node) -> Stmt {
    let pads = node.params.get_ints("pads").unwrap_or_default().to_vec();
    let in_node = &lw.g.nodes[&node.inputs[0]];
    let in_shape = in_node.out_type.shape.clone();
    let out_shape = node.out_type.shape.clone();
    let in_buf = lw.buf(node.inputs[0]);
    let out_buf = lw.buf(node.id);
    let zero = zero_literal(node.out_type.dtype);
    let fill = {
        let out_buf = out_buf.clone();
        lw.nest(&out_shape, |vars| Stmt::Store {
            buffer: out_buf,
            indices: vars.iter().map(|v| Expr::var(v)).collect(),
            value: zero,
        })
    };
    let copy = lw.nest(&in_shape.clone(), |vars| {
        let out_idx: Vec<Expr> = vars
            .iter()
            .enumerate()
            .map(|(d, v)| Expr::add(Expr::var(v), Expr::IntLit(pads[2 * d])))
            .collect();
        Stmt::Store {
            buffer: out_buf,
            indices: out_idx,
            value: Expr::Load(in_buf, vars.iter().map(|v| Expr::var(v)).collect()),
        }
    });
    seq(vec![fill, copy])
}

fn lower_fused(lw: &mut Lowering, node: &Node, chain: &FusedChain) -> Result<Stmt, LowerError> {
    let out_shape = node.out_type.shape.clone();
    let input_nodes: Vec<&Node> = node.inputs.iter().map(|i| &lw.g.nodes[i]).collect();
    let input_shapes: Vec<Vec<usize>> =
        input_nodes.iter().map(|n| n.out_type.shape.clone()).collect();
    let input_bufs: Vec<String> = node.inputs.iter().map(|i| lw.buf(*i)).collect();

    // Steps referenced more than once materialize into rank-0 locals; the
    // rest inline as expression trees.
    let mut ref_counts = vec![0usize; chain.steps.len()];
    for step in &chain.steps {
        for arg in &step.args {
            if let FusedArg::Step(j) = arg {
                ref_counts[*j] += 1;
            }
        }
    }
    let out_buf = lw.buf(node.id);
    let temp_name = |j: usize| format!("{out_buf}_s{j}");

    let vars = lw.fresh_vars(out_shape.len());
    let mut step_exprs: Vec<Expr> = Vec::with_capacity(chain.steps.len());
    let mut body = Vec::new();
    for (j, step) in chain.steps.iter().enumerate() {
        let arg_expr = |arg: &FusedArg| -> Expr {
            match arg {
                FusedArg::Input(i) => Expr::Load(
                    input_bufs[*i].clone(),
                    project_indices(&vars, &out_shape, &input_shapes[*i]),
                ),
                FusedArg::Step(k) => step_exprs[*k].clone(),
            }
        };
        let expr = match step.op.arity() {
            1 => unary_expr(&ew_kind(step.op), arg_expr(&step.args[0])),
            _ => Expr::Bin(
                bin_of(step.op),
                Box::new(arg_expr(&step.args[0])),
                Box::new(arg_expr(&step.args[1])),
            ),
        };
        let is_last = j + 1 == chain.steps.len();
        if ref_counts[j] > 1 && !is_last {
            let t = temp_name(j);
            let dtype = step_dtype(chain, j, &input_nodes)?;
            body.push(Stmt::Alloc {
                buffer: Buffer::new(&t, dtype, vec![]),
                scope: AllocScope::Local,
            });
            body.push(Stmt::Store {
                buffer: t.clone(),
                indices: vec![],
                value: expr,
            });
            step_exprs.push(Expr::Load(t, vec![]));
        } else {
            step_exprs.push(expr);
        }
    }
    body.push(Stmt::Store {
        buffer: out_buf,
        indices: vars.iter().map(|v| Expr::var(v)).collect(),
        value: step_exprs.pop().unwrap(),
    });
    let mut stmt = seq(body);
    for d in (0..out_shape.len()).rev() {
        stmt = for_loop(
            &vars[d],
            Expr::IntLit(0),
            Expr::IntLit(out_shape[d] as i64),
            LoopAnnotation::Serial,
            stmt,
        );
    }
    Ok(stmt)
}

fn ew_kind(op: crate::graph::EwOp) -> OperatorKind {
    use crate::graph::EwOp;
    match op {
        EwOp::Add => OperatorKind::Add,
        EwOp::Sub => OperatorKind::Sub,
        EwOp::Mul => OperatorKind::Mul,
        EwOp::Div => OperatorKind::Div,
        EwOp::Neg => OperatorKind::Neg,
        EwOp::Relu => OperatorKind::Relu,
        EwOp::Sigmoid => OperatorKind::Sigmoid,
    }
}

fn bin_of(op: crate::graph::EwOp) -> crate::loop_ir::BinOp {
    use crate::graph::EwOp;
    use crate::loop_ir::BinOp;
    match op {
        EwOp::Add => BinOp::Add,
        EwOp::Sub => BinOp::Sub,
        EwOp::Mul => BinOp::Mul,
        EwOp::Div => BinOp::Div,
        _ => unreachable!("not binary"),
    }
}

fn step_dtype(
    chain: &FusedChain,
    upto: usize,
    inputs: &[&Node],
) -> Result<DType, LowerError> {
    // Dtype propagates unchanged through elementwise chains; find any input
    // feeding this step transitively.
    let mut j = upto;
    loop {
        match chain.steps[j].args.first() {
            Some(FusedArg::Input(i)) => return Ok(inputs[*i].out_type.dtype),
            Some(FusedArg::Step(k)) => j = *k,
            None => return Err(LowerError::Internal("empty fused step".into())),
        }
    }
}

/// Lowers a validated graph to a loop program.
pub fn lower_graph(g: &Graph) -> Result<LoopProgram, LowerError> {
    let order = g
        .topo_order()
        .ok_or_else(|| LowerError::Internal("graph has a cycle".into()))?;
    for node in g.nodes.values() {
        if node.out_type.shape.contains(&0) {
            return Err(LowerError::Unsupported(
                "zero-extent tensors have no loop form".into(),
            ));
        }
    }

    let mut lw = Lowering {
        g,
        stmts: Vec::new(),
        var_counter: 0,
    };

    let output_names: BTreeSet<String> = output_buffer_names(g).into_iter().collect();
    for id in order {
        let node = &g.nodes[&id];
        let buf_name = lw.buf(id);
        // Internal result buffers are allocated explicitly; inputs arrive
        // bound and outputs are allocated by the interpreter.
        if node.kind != OperatorKind::Input && !output_names.contains(&buf_name) {
            lw.stmts.push(Stmt::Alloc {
                buffer: Buffer::new(&buf_name, node.out_type.dtype, node.out_type.shape.clone()),
                scope: AllocScope::Global,
            });
        }
        let stmt = match &node.kind {
            OperatorKind::Input => continue,
            OperatorKind::Constant => lower_constant(&mut lw, node)?,
            OperatorKind::Add | OperatorKind::Sub | OperatorKind::Mul | OperatorKind::Div => {
                lower_ew_binary(&mut lw, node)
            }
            OperatorKind::Neg | OperatorKind::Relu | OperatorKind::Sigmoid => {
                lower_unary(&mut lw, node)
            }
            OperatorKind::MatMul => lower_matmul(&mut lw, node),
            OperatorKind::Conv2d => lower_conv2d(&mut lw, node)?,
            OperatorKind::Reshape => lower_reshape(&mut lw, node),
            OperatorKind::Transpose => lower_transpose(&mut lw, node)?,
            OperatorKind::Concat => lower_concat(&mut lw, node)?,
            OperatorKind::ReduceSum => lower_reduce_sum(&mut lw, node),
            OperatorKind::Cast => lower_cast(&mut lw, node),
            OperatorKind::Pad => lower_pad(&mut lw, node),
            OperatorKind::FusedGroup(chain) => {
                let chain = chain.clone();
                lower_fused(&mut lw, node, &chain)?
            }
        };
        lw.stmts.push(stmt);
    }

    let inputs: Vec<Buffer> = g
        .input_nodes()
        .iter()
        .map(|n| {
            Buffer::new(
                n.params.get_str("name").unwrap_or_default(),
                n.out_type.dtype,
                n.out_type.shape.clone(),
            )
        })
        .collect();
    let mut outputs = Vec::new();
    let mut seen = BTreeSet::new();
    for id in &g.outputs {
        let name = node_buffer_name(g, *id);
        if seen.insert(name.clone()) {
            let node = &g.nodes[id];
            outputs.push(Buffer::new(
                &name,
                node.out_type.dtype,
                node.out_type.shape.clone(),
            ));
        }
    }

    Ok(LoopProgram {
        name: if g.name.is_empty() {
            "lowered".to_string()
        } else {
            g.name.clone()
        },
        inputs,
        outputs,
        body: seq(std::mem::take(&mut lw.stmts)),
        intrinsics_used: BTreeSet::new(),
    })
}

/// Convenience wrapper: lowered execution keyed back to graph output order.
pub fn run_lowered(
    g: &Graph,
    inputs: &BTreeMap<String, TensorValue>,
) -> Result<Vec<TensorValue>, String> {
    let program = lower_graph(g).map_err(|e| e.to_string())?;
    let out = crate::loop_ir::interp::interpret_loop(&program, inputs).map_err(|e| e.to_string())?;
    let mut result = Vec::new();
    for id in &g.outputs {
        let name = node_buffer_name(g, *id);
        let value = out
            .get(&name)
            .ok_or_else(|| format!("missing output buffer {name}"))?;
        result.push(value.clone());
    }
    let _ = TensorType::scalar(DType::F32);
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::interp::interpret_graph;
    use crate::graph::{ParamValue, Params};
    use crate::loop_ir::interp::interpret_loop;
    use crate::loop_ir::validate_loop;
    use crate::tensor::TensorType;

    #[test]
    fn add_lowering_is_single_loop() {
        let mut g = Graph::new("add");
        let a = g.add_input("a", TensorType::new(DType::F32, vec![4]));
        let b = g.add_input("b", TensorType::new(DType::F32, vec![4]));
        let s = g.add_op(OperatorKind::Add, Params::new(), vec![a, b]);
        g.outputs = vec![s];
        let p = lower_graph(&g).unwrap();
        assert!(validate_loop(&p).is_empty());
        match &p.body {
            Stmt::For { body, .. } => match body.as_ref() {
                Stmt::Store { buffer, .. } => assert_eq!(buffer, "t2"),
                other => panic!("unexpected body {other:?}"),
            },
            other => panic!("expected a single loop, got {other:?}"),
        }
        let inputs: BTreeMap<String, TensorValue> = [
            (
                "a".to_string(),
                TensorValue::from_f32(vec![4], vec![1.0, 2.0, 3.0, 4.0]),
            ),
            (
                "b".to_string(),
                TensorValue::from_f32(vec![4], vec![10.0, 20.0, 30.0, 40.0]),
            ),
        ]
        .into_iter()
        .collect();
        let out = interpret_loop(&p, &inputs).unwrap();
        assert_eq!(
            out["t2"],
            TensorValue::from_f32(vec![4], vec![11.0, 22.0, 33.0, 44.0])
        );
    }

    #[test]
    fn matmul_matches_graph_interpreter_bitwise() {
        use crate::generate::random_value;
        use rand::rngs::StdRng;
        use rand::SeedableRng;

        let mut g = Graph::new("mm");
        let a = g.add_input("a", TensorType::new(DType::F32, vec![2, 3]));
        let b = g.add_input("b", TensorType::new(DType::F32, vec![3, 2]));
        let m = g.add_op(OperatorKind::MatMul, Params::new(), vec![a, b]);
        g.outputs = vec![m];
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..20 {
            let inputs: BTreeMap<String, TensorValue> = [
                (
                    "a".to_string(),
                    random_value(&mut rng, &TensorType::new(DType::F32, vec![2, 3]), false),
                ),
                (
                    "b".to_string(),
                    random_value(&mut rng, &TensorType::new(DType::F32, vec![3, 2]), false),
                ),
            ]
            .into_iter()
            .collect();
            let y_graph = interpret_graph(&g, &inputs).unwrap();
            let y_loop = run_lowered(&g, &inputs).unwrap();
            assert_eq!(y_graph, y_loop);
        }
    }

    #[test]
    fn conv_with_asymmetric_pad_matches() {
        let mut g = Graph::new("conv");
        let x = g.add_input("x", TensorType::new(DType::F32, vec![1, 2, 5, 5]));
        let w = g.add_constant(TensorValue::from_f32(
            vec![2, 2, 3, 3],
            (0..36).map(|i| ((i * 7) % 9) as f32 * 0.5 - 2.0).collect(),
        ));
        let params = Params::new()
            .with("stride", ParamValue::Ints(vec![1, 2]))
            .with("pad", ParamValue::Ints(vec![0, 1, 2, 0]));
        let c = g.add_op(OperatorKind::Conv2d, params, vec![x, w]);
        g.outputs = vec![c];
        use crate::generate::random_value;
        use rand::rngs::StdRng;
        use rand::SeedableRng;
        let mut rng = StdRng::seed_from_u64(9);
        let inputs: BTreeMap<String, TensorValue> = [(
            "x".to_string(),
            random_value(&mut rng, &TensorType::new(DType::F32, vec![1, 2, 5, 5]), false),
        )]
        .into_iter()
        .collect();
        let y_graph = interpret_graph(&g, &inputs).unwrap();
        let y_loop = run_lowered(&g, &inputs).unwrap();
        assert_eq!(y_graph, y_loop);
    }

    #[test]
    fn fused_group_lowers_to_one_nest() {
        use crate::bugs::BugSet;
        use crate::hl::{run_hl_pass, PassId};

        let mut g = Graph::new("fuse");
        let x = g.add_input("x", TensorType::new(DType::F32, vec![4]));
        let y = g.add_input("y", TensorType::new(DType::F32, vec![4]));
        let a = g.add_op(OperatorKind::Add, Params::new(), vec![x, y]);
        let r = g.add_op(OperatorKind::Relu, Params::new(), vec![a]);
        g.outputs = vec![r];
        let (fused, _) = run_hl_pass(PassId::FuseElementwise, &g).unwrap();
        let p = lower_graph(&fused).unwrap();
        assert!(validate_loop(&p).is_empty());
        // One nest: exactly one For at top level (plus no extra allocs).
        let loops = crate::loop_ir::collect_loops(&p.body);
        assert_eq!(loops.len(), 1);

        let inputs: BTreeMap<String, TensorValue> = [
            (
                "x".to_string(),
                TensorValue::from_f32(vec![4], vec![-3.0, 1.0, -0.5, 2.0]),
            ),
            (
                "y".to_string(),
                TensorValue::from_f32(vec![4], vec![1.0, 1.0, 1.0, 1.0]),
            ),
        ]
        .into_iter()
        .collect();
        let y_graph = interpret_graph(&fused, &inputs).unwrap();
        let y_loop = run_lowered(&fused, &inputs).unwrap();
        assert_eq!(y_graph, y_loop);
        let _ = BugSet::empty();
    }

    #[test]
    fn random_graphs_lower_equivalently() {
        use crate::compare::{outputs_close, Tolerance};
        use crate::generate::{random_graph, random_inputs, GraphGenConfig};
        use rand::rngs::StdRng;
        use rand::SeedableRng;

        let cfg = GraphGenConfig::default();
        let mut rng = StdRng::seed_from_u64(42);
        for i in 0..120 {
            let g = random_graph(&mut rng, &cfg);
            let inputs = random_inputs(&g, &mut rng, false);
            let y_graph = interpret_graph(&g, &inputs).unwrap();
            let p = lower_graph(&g).unwrap();
            assert!(
                validate_loop(&p).is_empty(),
                "graph {i} lowering invalid: {:?}",
                validate_loop(&p)
            );
            let y_loop = run_lowered(&g, &inputs).unwrap_or_else(|e| panic!("graph {i}: {e}"));
            // Bit-exact modulo NaN identity.
            outputs_close(&y_graph, &y_loop, Tolerance::EXACT)
                .unwrap_or_else(|(pos, d)| panic!("graph {i} output {pos}: {}", d.message));
        }
    }

    #[test]
    fn lowered_text_roundtrips() {
        use crate::generate::{random_graph, GraphGenConfig};
        use crate::loop_ir::text::{parse_loop, serialize_loop};
        use rand::rngs::StdRng;
        use rand::SeedableRng;

        let mut rng = StdRng::seed_from_u64(77);
        for _ in 0..40 {
            let g = random_graph(&mut rng, &GraphGenConfig::default());
            let p = lower_graph(&g).unwrap();
            let text = serialize_loop(&p);
            let parsed = parse_loop(&text).unwrap();
            assert_eq!(parsed, p);
            assert_eq!(serialize_loop(&parsed), text);
        }
    }
}
