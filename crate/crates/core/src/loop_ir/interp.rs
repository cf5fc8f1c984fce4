// SPDX-License-Identifier: Apache-2.0

//! Sequential big-step evaluator for loop programs.
//!
//! Annotations are executed serially. Every load and store is bounds
//! checked; reads of never-written elements surface as `UninitializedRead`
//! (a bug signal for dropped-iteration defects). Integer arithmetic wraps;
//! division by zero is a numeric-domain error.

use std::collections::BTreeMap;

use thiserror::Error;

use super::{BinOp, Buffer, CmpOp, CondExpr, Expr, LoopProgram, Stmt, UnOp};
use crate::tensor::{DType, Scalar, TensorData, TensorType, TensorValue};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LoopError {
    #[error("missing input buffer `{0}`")]
    MissingInput(String),
    #[error("input `{name}` bound with {bound}, declared {declared}")]
    ExtentMismatch {
        name: String,
        bound: String,
        declared: String,
    },
    #[error("out-of-bounds access to `{buffer}` dim {dim}: index {index}, extent {extent}")]
    OutOfBounds {
        buffer: String,
        dim: usize,
        index: i64,
        extent: usize,
    },
    #[error("uninitialized read from `{buffer}` at flat index {index}")]
    UninitializedRead { buffer: String, index: usize },
    #[error("numeric domain error: {0}")]
    NumericDomain(String),
    #[error("type error: {0}")]
    TypeError(String),
    #[error("undeclared buffer `{0}`")]
    UndeclaredBuffer(String),
    #[error("undeclared loop var `{0}`")]
    UndeclaredVar(String),
}

/// Runtime scalar: typed values plus the polymorphic integer domain used by
/// loop variables and bare literals.
#[derive(Debug, Clone, Copy, PartialEq)]
enum V {
    F32(f32),
    I32(i32),
    I8(i8),
    Bool(bool),
    Int(i64),
}

impl V {
    fn from_scalar(s: Scalar) -> V {
        match s {
            Scalar::F32(v) => V::F32(v),
            Scalar::I32(v) => V::I32(v),
            Scalar::I8(v) => V::I8(v),
            Scalar::Bool(v) => V::Bool(v),
        }
    }

    fn type_name(self) -> &'static str {
        match self {
            V::F32(_) => "F32",
            V::I32(_) => "I32",
            V::I8(_) => "I8",
            V::Bool(_) => "BOOL",
            V::Int(_) => "int",
        }
    }
}

struct BufState {
    buffer: Buffer,
    data: TensorData,
    init: Vec<bool>,
}

struct Env {
    bufs: BTreeMap<String, BufState>,
    vars: Vec<(String, i64)>,
}

impl Env {
    fn var(&self, name: &str) -> Result<i64, LoopError> {
        self.vars
            .iter()
            .rev()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| LoopError::UndeclaredVar(name.to_string()))
    }

    fn flat_index(&self, buffer: &str, indices: &[i64]) -> Result<usize, LoopError> {
        let state = self
            .bufs
            .get(buffer)
            .ok_or_else(|| LoopError::UndeclaredBuffer(buffer.to_string()))?;
        let extents = &state.buffer.extents;
        if indices.len() != extents.len() {
            return Err(LoopError::TypeError(format!(
                "access to `{buffer}` with {} indices, rank {}",
                indices.len(),
                extents.len()
            )));
        }
        let mut flat = 0usize;
        for (dim, (&idx, &ext)) in indices.iter().zip(extents.iter()).enumerate() {
            if idx < 0 || idx >= ext as i64 {
                return Err(LoopError::OutOfBounds {
                    buffer: buffer.to_string(),
                    dim,
                    index: idx,
                    extent: ext,
                });
            }
            flat = flat * ext + idx as usize;
        }
        Ok(flat)
    }
}

fn bin_numeric(op: BinOp, a: V, b: V) -> Result<V, LoopError> {
    let type_err = |a: V, b: V| {
        Err(LoopError::TypeError(format!(
            "{op:?} on {} and {}",
            a.type_name(),
            b.type_name()
        )))
    };
    match (a, b) {
        (V::F32(x), V::F32(y)) => Ok(V::F32(match op {
            BinOp::Add => x + y,
            BinOp::Sub => x - y,
            BinOp::Mul => x * y,
            BinOp::Div => x / y,
            BinOp::Mod => return Err(LoopError::TypeError("mod on F32".into())),
        })),
        (V::Int(x), V::Int(y)) => match op {
            BinOp::Add => Ok(V::Int(x.wrapping_add(y))),
            BinOp::Sub => Ok(V::Int(x.wrapping_sub(y))),
            BinOp::Mul => Ok(V::Int(x.wrapping_mul(y))),
            BinOp::Div => {
                if y == 0 {
                    Err(LoopError::NumericDomain("integer division by zero".into()))
                } else {
                    Ok(V::Int(x.wrapping_div(y)))
                }
            }
            BinOp::Mod => {
                if y == 0 {
                    Err(LoopError::NumericDomain("integer modulo by zero".into()))
                } else {
                    Ok(V::Int(x.wrapping_rem(y)))
                }
            }
        },
        (V::I32(_), _) | (_, V::I32(_)) => {
            let to_i32 = |v: V| -> Option<i32> {
                match v {
                    V::I32(x) => Some(x),
                    V::Int(x) => Some(x as i32),
                    _ => None,
                }
            };
            let (Some(x), Some(y)) = (to_i32(a), to_i32(b)) else {
                return type_err(a, b);
            };
            match op {
                BinOp::Add => Ok(V::I32(x.wrapping_add(y))),
                BinOp::Sub => Ok(V::I32(x.wrapping_sub(y))),
                BinOp::Mul => Ok(V::I32(x.wrapping_mul(y))),
                BinOp::Div => {
                    if y == 0 {
                        Err(LoopError::NumericDomain("I32 division by zero".into()))
                    } else {
                        Ok(V::I32(x.wrapping_div(y)))
                    }
                }
                BinOp::Mod => {
                    if y == 0 {
                        Err(LoopError::NumericDomain("I32 modulo by zero".into()))
                    } else {
                        Ok(V::I32(x.wrapping_rem(y)))
                    }
                }
            }
        }
        (V::I8(_), _) | (_, V::I8(_)) => {
            let to_i8 = |v: V| -> Option<i8> {
                match v {
                    V::I8(x) => Some(x),
                    V::Int(x) => Some(x as i8),
                    _ => None,
                }
            };
            let (Some(x), Some(y)) = (to_i8(a), to_i8(b)) else {
                return type_err(a, b);
            };
            match op {
                BinOp::Add => Ok(V::I8(x.wrapping_add(y))),
                BinOp::Sub => Ok(V::I8(x.wrapping_sub(y))),
                BinOp::Mul => Ok(V::I8(x.wrapping_mul(y))),
                BinOp::Div => {
                    if y == 0 {
                        Err(LoopError::NumericDomain("I8 division by zero".into()))
                    } else {
                        Ok(V::I8(x.wrapping_div(y)))
                    }
                }
                BinOp::Mod => {
                    if y == 0 {
                        Err(LoopError::NumericDomain("I8 modulo by zero".into()))
                    } else {
                        Ok(V::I8(x.wrapping_rem(y)))
                    }
                }
            }
        }
        _ => type_err(a, b),
    }
}

fn eval_expr(e: &Expr, env: &Env) -> Result<V, LoopError> {
    match e {
        Expr::Const(s) => Ok(V::from_scalar(*s)),
        Expr::IntLit(v) => Ok(V::Int(*v)),
        Expr::Var(name) => env.var(name).map(V::Int),
        Expr::Load(buffer, indices) => {
            let idx = eval_indices(indices, env)?;
            let flat = env.flat_index(buffer, &idx)?;
            let state = &env.bufs[buffer];
            if !state.init[flat] {
                return Err(LoopError::UninitializedRead {
                    buffer: buffer.clone(),
                    index: flat,
                });
            }
            Ok(V::from_scalar(state.data.get(flat)))
        }
        Expr::Bin(op, a, b) => {
            let (a, b) = (eval_expr(a, env)?, eval_expr(b, env)?);
            bin_numeric(*op, a, b)
        }
        Expr::Un(op, a) => {
            let a = eval_expr(a, env)?;
            match (op, a) {
                (UnOp::Neg, V::F32(x)) => Ok(V::F32(-x)),
                (UnOp::Neg, V::I32(x)) => Ok(V::I32(x.wrapping_neg())),
                (UnOp::Neg, V::I8(x)) => Ok(V::I8(x.wrapping_neg())),
                (UnOp::Neg, V::Int(x)) => Ok(V::Int(x.wrapping_neg())),
                (UnOp::Relu, V::F32(x)) => Ok(V::F32(if x > 0.0 { x } else { 0.0 })),
                (UnOp::Relu, V::I32(x)) => Ok(V::I32(x.max(0))),
                (UnOp::Relu, V::I8(x)) => Ok(V::I8(x.max(0))),
                (UnOp::Relu, V::Int(x)) => Ok(V::Int(x.max(0))),
                (UnOp::Sigmoid, V::F32(x)) => Ok(V::F32(1.0 / (1.0 + (-x).exp()))),
                (op, v) => Err(LoopError::TypeError(format!(
                    "{op:?} on {}",
                    v.type_name()
                ))),
            }
        }
        Expr::Fma(a, b, c) => {
            let (a, b, c) = (eval_expr(a, env)?, eval_expr(b, env)?, eval_expr(c, env)?);
            match (a, b, c) {
                (V::F32(x), V::F32(y), V::F32(z)) => Ok(V::F32(x.mul_add(y, z))),
                _ => Err(LoopError::TypeError("fma requires F32 operands".into())),
            }
        }
        Expr::Cast(to, a) => {
            let a = eval_expr(a, env)?;
            let scalar = match a {
                V::F32(x) => Scalar::F32(x),
                V::I32(x) => Scalar::I32(x),
                V::I8(x) => Scalar::I8(x),
                V::Bool(x) => Scalar::Bool(x),
                V::Int(x) => Scalar::I32(x as i32),
            };
            Ok(V::from_scalar(scalar.cast_to(*to)))
        }
    }
}

fn eval_indices(indices: &[Expr], env: &Env) -> Result<Vec<i64>, LoopError> {
    indices
        .iter()
        .map(|e| match eval_expr(e, env)? {
            V::Int(v) => Ok(v),
            V::I32(v) => Ok(v as i64),
            V::I8(v) => Ok(v as i64),
            other => Err(LoopError::TypeError(format!(
                "index evaluates to {}",
                other.type_name()
            ))),
        })
        .collect()
}

fn eval_cond(c: &CondExpr, env: &Env) -> Result<bool, LoopError> {
    match c {
        CondExpr::And(a, b) => Ok(eval_cond(a, env)? && eval_cond(b, env)?),
        CondExpr::Cmp(op, a, b) => {
            let (a, b) = (eval_expr(a, env)?, eval_expr(b, env)?);
            let as_int = |v: V| -> Option<i64> {
                match v {
                    V::Int(x) => Some(x),
                    V::I32(x) => Some(x as i64),
                    V::I8(x) => Some(x as i64),
                    _ => None,
                }
            };
            if let (Some(x), Some(y)) = (as_int(a), as_int(b)) {
                return Ok(match op {
                    CmpOp::Lt => x < y,
                    CmpOp::Le => x <= y,
                    CmpOp::Gt => x > y,
                    CmpOp::Ge => x >= y,
                    CmpOp::Eq => x == y,
                    CmpOp::Ne => x != y,
                });
            }
            if let (V::F32(x), V::F32(y)) = (a, b) {
                return Ok(match op {
                    CmpOp::Lt => x < y,
                    CmpOp::Le => x <= y,
                    CmpOp::Gt => x > y,
                    CmpOp::Ge => x >= y,
                    CmpOp::Eq => x == y,
                    CmpOp::Ne => x != y,
                });
            }
            Err(LoopError::TypeError(format!(
                "comparison of {} and {}",
                a.type_name(),
                b.type_name()
            )))
        }
    }
}

/// Coerces a runtime value into a buffer element. Polymorphic integers wrap
/// into the integer dtypes; every other combination must match exactly.
fn coerce_store(v: V, dtype: DType) -> Result<Scalar, LoopError> {
    match (v, dtype) {
        (V::F32(x), DType::F32) => Ok(Scalar::F32(x)),
        (V::I32(x), DType::I32) => Ok(Scalar::I32(x)),
        (V::Int(x), DType::I32) => Ok(Scalar::I32(x as i32)),
        (V::I8(x), DType::I8) => Ok(Scalar::I8(x)),
        (V::Int(x), DType::I8) => Ok(Scalar::I8(x as i8)),
        (V::Bool(x), DType::Bool) => Ok(Scalar::Bool(x)),
        (v, d) => Err(LoopError::TypeError(format!(
            "cannot store {} into {d} buffer",
            v.type_name()
        ))),
    }
}

fn exec(stmt: &Stmt, env: &mut Env) -> Result<(), LoopError> {
    match stmt {
        Stmt::Seq(v) => {
            for s in v {
                exec(s, env)?;
            }
            Ok(())
        }
        Stmt::Alloc { buffer, .. } => {
            // Re-executing an alloc resets the buffer to uninitialized.
            let n = buffer.element_count();
            env.bufs.insert(
                buffer.name.clone(),
                BufState {
                    buffer: buffer.clone(),
                    data: TensorData::zeros(buffer.dtype, n),
                    init: vec![false; n],
                },
            );
            Ok(())
        }
        Stmt::For {
            var, lo, hi, body, ..
        } => {
            let lo = match eval_expr(lo, env)? {
                V::Int(v) => v,
                other => {
                    return Err(LoopError::TypeError(format!(
                        "loop bound evaluates to {}",
                        other.type_name()
                    )))
                }
            };
            let hi = match eval_expr(hi, env)? {
                V::Int(v) => v,
                other => {
                    return Err(LoopError::TypeError(format!(
                        "loop bound evaluates to {}",
                        other.type_name()
                    )))
                }
            };
            for i in lo..hi {
                env.vars.push((var.clone(), i));
                let r = exec(body, env);
                env.vars.pop();
                r?;
            }
            Ok(())
        }
        Stmt::If { cond, body } => {
            if eval_cond(cond, env)? {
                exec(body, env)?;
            }
            Ok(())
        }
        Stmt::Store {
            buffer,
            indices,
            value,
        } => {
            let idx = eval_indices(indices, env)?;
            let v = eval_expr(value, env)?;
            let flat = env.flat_index(buffer, &idx)?;
            let state = env.bufs.get_mut(buffer).unwrap();
            let scalar = coerce_store(v, state.buffer.dtype)?;
            state.data.set(flat, scalar);
            state.init[flat] = true;
            Ok(())
        }
    }
}

/// Executes a program. Inputs bind by buffer name with exact extent and
/// dtype match; outputs are returned keyed by buffer name and must be fully
/// written unless they alias an input.
pub fn interpret_loop(
    p: &LoopProgram,
    inputs: &BTreeMap<String, TensorValue>,
) -> Result<BTreeMap<String, TensorValue>, LoopError> {
    let mut env = Env {
        bufs: BTreeMap::new(),
        vars: Vec::new(),
    };
    for b in &p.inputs {
        let bound = inputs
            .get(&b.name)
            .ok_or_else(|| LoopError::MissingInput(b.name.clone()))?;
        let declared = TensorType::new(b.dtype, b.extents.clone());
        if bound.ttype != declared {
            return Err(LoopError::ExtentMismatch {
                name: b.name.clone(),
                bound: bound.ttype.to_string(),
                declared: declared.to_string(),
            });
        }
        env.bufs.insert(
            b.name.clone(),
            BufState {
                buffer: b.clone(),
                data: bound.data.clone(),
                init: vec![true; bound.data.len()],
            },
        );
    }
    for b in &p.outputs {
        if env.bufs.contains_key(&b.name) {
            continue; // in-place input/output
        }
        let n = b.element_count();
        env.bufs.insert(
            b.name.clone(),
            BufState {
                buffer: b.clone(),
                data: TensorData::zeros(b.dtype, n),
                init: vec![false; n],
            },
        );
    }

    exec(&p.body, &mut env)?;

    let mut out = BTreeMap::new();
    for b in &p.outputs {
        let state = env
            .bufs
            .get(&b.name)
            .ok_or_else(|| LoopError::UndeclaredBuffer(b.name.clone()))?;
        if let Some(index) = state.init.iter().position(|i| !i) {
            return Err(LoopError::UninitializedRead {
                buffer: b.name.clone(),
                index,
            });
        }
        out.insert(
            b.name.clone(),
            TensorValue::new(
                TensorType::new(b.dtype, b.extents.clone()),
                state.data.clone(),
            ),
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loop_ir::{for_loop, seq, LoopAnnotation};
    use std::collections::BTreeSet;

    fn add_program() -> LoopProgram {
        let body = for_loop(
            "i",
            Expr::IntLit(0),
            Expr::IntLit(4),
            LoopAnnotation::Vectorize(4),
            Stmt::Store {
                buffer: "c".into(),
                indices: vec![Expr::var("i")],
                value: Expr::add(
                    Expr::load("a", vec![Expr::var("i")]),
                    Expr::load("b", vec![Expr::var("i")]),
                ),
            },
        );
        LoopProgram {
            name: "add".into(),
            inputs: vec![
                Buffer::new("a", DType::F32, vec![4]),
                Buffer::new("b", DType::F32, vec![4]),
            ],
            outputs: vec![Buffer::new("c", DType::F32, vec![4])],
            body,
            intrinsics_used: BTreeSet::new(),
        }
    }

    fn bind(name: &str, v: TensorValue) -> (String, TensorValue) {
        (name.to_string(), v)
    }

    #[test]
    fn elementwise_add() {
        let p = add_program();
        let inputs: BTreeMap<String, TensorValue> = [
            bind("a", TensorValue::from_f32(vec![4], vec![1.0, 2.0, 3.0, 4.0])),
            bind("b", TensorValue::from_f32(vec![4], vec![10.0, 20.0, 30.0, 40.0])),
        ]
        .into_iter()
        .collect();
        let out = interpret_loop(&p, &inputs).unwrap();
        assert_eq!(
            out["c"],
            TensorValue::from_f32(vec![4], vec![11.0, 22.0, 33.0, 44.0])
        );
    }

    #[test]
    fn store_at_extent_is_out_of_bounds() {
        let mut p = add_program();
        // hi == extent + 1 drives the last store past the end.
        if let Stmt::For { hi, .. } = &mut p.body {
            *hi = Expr::IntLit(5);
        }
        let inputs: BTreeMap<String, TensorValue> = [
            bind("a", TensorValue::from_f32(vec![4], vec![0.0; 4])),
            bind("b", TensorValue::from_f32(vec![4], vec![0.0; 4])),
        ]
        .into_iter()
        .collect();
        let err = interpret_loop(&p, &inputs).unwrap_err();
        assert!(matches!(err, LoopError::OutOfBounds { index: 4, .. }));
    }

    #[test]
    fn partial_output_is_uninitialized() {
        let mut p = add_program();
        if let Stmt::For { hi, .. } = &mut p.body {
            *hi = Expr::IntLit(3);
        }
        let inputs: BTreeMap<String, TensorValue> = [
            bind("a", TensorValue::from_f32(vec![4], vec![0.0; 4])),
            bind("b", TensorValue::from_f32(vec![4], vec![0.0; 4])),
        ]
        .into_iter()
        .collect();
        let err = interpret_loop(&p, &inputs).unwrap_err();
        assert!(matches!(err, LoopError::UninitializedRead { index: 3, .. }));
    }

    #[test]
    fn annotation_erasure_preserves_results() {
        let p = add_program();
        let stripped = p.strip_annotations();
        let inputs: BTreeMap<String, TensorValue> = [
            bind("a", TensorValue::from_f32(vec![4], vec![1.5, -2.0, 0.25, 9.0])),
            bind("b", TensorValue::from_f32(vec![4], vec![0.5, 2.0, 0.75, -9.0])),
        ]
        .into_iter()
        .collect();
        assert_eq!(
            interpret_loop(&p, &inputs).unwrap(),
            interpret_loop(&stripped, &inputs).unwrap()
        );
    }

    #[test]
    fn in_place_scan() {
        let body = for_loop(
            "i",
            Expr::IntLit(1),
            Expr::IntLit(4),
            LoopAnnotation::Serial,
            Stmt::Store {
                buffer: "b".into(),
                indices: vec![Expr::var("i")],
                value: Expr::add(
                    Expr::load("b", vec![Expr::sub(Expr::var("i"), Expr::IntLit(1))]),
                    Expr::load("b", vec![Expr::var("i")]),
                ),
            },
        );
        let p = LoopProgram {
            name: "scan".into(),
            inputs: vec![Buffer::new("b", DType::I32, vec![4])],
            outputs: vec![Buffer::new("b", DType::I32, vec![4])],
            body,
            intrinsics_used: BTreeSet::new(),
        };
        let inputs: BTreeMap<String, TensorValue> =
            [bind("b", TensorValue::from_i32(vec![4], vec![1, 2, 3, 4]))]
                .into_iter()
                .collect();
        let out = interpret_loop(&p, &inputs).unwrap();
        assert_eq!(out["b"], TensorValue::from_i32(vec![4], vec![1, 3, 6, 10]));
    }

    #[test]
    fn alloc_resets_per_iteration() {
        // Reading a local alloc before writing it in the second iteration
        // must fail even though iteration one wrote it.
        let body = for_loop(
            "i",
            Expr::IntLit(0),
            Expr::IntLit(2),
            LoopAnnotation::Serial,
            seq(vec![
                Stmt::Alloc {
                    buffer: Buffer::new("t", DType::I32, vec![1]),
                    scope: crate::loop_ir::AllocScope::Local,
                },
                Stmt::If {
                    cond: CondExpr::Cmp(CmpOp::Eq, Expr::var("i"), Expr::IntLit(0)),
                    body: Box::new(Stmt::Store {
                        buffer: "t".into(),
                        indices: vec![Expr::IntLit(0)],
                        value: Expr::IntLit(7),
                    }),
                },
                Stmt::Store {
                    buffer: "o".into(),
                    indices: vec![Expr::var("i")],
                    value: Expr::load("t", vec![Expr::IntLit(0)]),
                },
            ]),
        );
        let p = LoopProgram {
            name: "scoped".into(),
            inputs: vec![],
            outputs: vec![Buffer::new("o", DType::I32, vec![2])],
            body,
            intrinsics_used: BTreeSet::new(),
        };
        let err = interpret_loop(&p, &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, LoopError::UninitializedRead { .. }));
    }
}
