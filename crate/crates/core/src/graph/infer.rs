// SPDX-License-Identifier: Apache-2.0

//! Shape and type inference for operator nodes.
//!
//! `infer_shape_with` is the loader-side inference used when building graphs
//! from operator records; it honors seeded loader bugs. `infer_shape` is the
//! reference rule set (empty bug set) used by validation and the oracles.

use thiserror::Error;

use super::{FusedArg, FusedChain, OperatorKind, Params};
use crate::bugs::{BugId, BugSet};
use crate::tensor::{broadcast_shapes, DType, TensorType, MAX_RANK};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ShapeError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid param: {0}")]
    InvalidParam(String),
}

fn require_dtype(
    kind: &OperatorKind,
    t: &TensorType,
    allowed: &[DType],
) -> Result<(), ShapeError> {
    if allowed.contains(&t.dtype) {
        Ok(())
    } else {
        Err(ShapeError::ShapeMismatch(format!(
            "{} does not accept dtype {}",
            kind.name(),
            t.dtype
        )))
    }
}

fn same_dtype(kind: &OperatorKind, inputs: &[TensorType]) -> Result<DType, ShapeError> {
    let d = inputs[0].dtype;
    if inputs.iter().any(|t| t.dtype != d) {
        return Err(ShapeError::ShapeMismatch(format!(
            "{} requires matching input dtypes",
            kind.name()
        )));
    }
    Ok(d)
}

const ARITH_DTYPES: [DType; 3] = [DType::F32, DType::I32, DType::I8];

fn infer_elementwise_binary(
    kind: &OperatorKind,
    inputs: &[TensorType],
) -> Result<TensorType, ShapeError> {
    let d = same_dtype(kind, inputs)?;
    require_dtype(kind, &inputs[0], &ARITH_DTYPES)?;
    let shape = broadcast_shapes(&inputs[0].shape, &inputs[1].shape).ok_or_else(|| {
        ShapeError::ShapeMismatch(format!(
            "{} cannot broadcast {} with {}",
            kind.name(),
            inputs[0],
            inputs[1]
        ))
    })?;
    Ok(TensorType::new(d, shape))
}

/// Normalizes a Conv2D `pad` attribute to `[top, bottom, left, right]`.
///
/// Under seeded bug `L1` a 4-element asymmetric pad is misread as the
/// symmetric form `[pad[0], pad[1]]`.
fn conv_pads(params: &Params, bugs: &BugSet) -> Result<[usize; 4], ShapeError> {
    let pad = params
        .get_ints("pad")
        .ok_or_else(|| ShapeError::InvalidParam("Conv2D requires pad=[..]".into()))?;
    if pad.iter().any(|p| *p < 0) {
        return Err(ShapeError::InvalidParam("Conv2D pad must be >= 0".into()));
    }
    match pad.len() {
        2 => Ok([pad[0] as usize, pad[0] as usize, pad[1] as usize, pad[1] as usize]),
        4 => {
            if bugs.has(BugId::L1) {
                Ok([pad[0] as usize, pad[0] as usize, pad[1] as usize, pad[1] as usize])
            } else {
                Ok([pad[0] as usize, pad[1] as usize, pad[2] as usize, pad[3] as usize])
            }
        }
        n => Err(ShapeError::InvalidParam(format!(
            "Conv2D pad must have 2 or 4 entries, got {n}"
        ))),
    }
}

fn conv_strides(params: &Params) -> Result<[usize; 2], ShapeError> {
    let stride = params
        .get_ints("stride")
        .ok_or_else(|| ShapeError::InvalidParam("Conv2D requires stride=[sh,sw]".into()))?;
    if stride.len() != 2 || stride.iter().any(|s| *s < 1) {
        return Err(ShapeError::InvalidParam(
            "Conv2D stride must be two entries >= 1".into(),
        ));
    }
    Ok([stride[0] as usize, stride[1] as usize])
}

/// Activation layout of a Conv2D node. Weights are always `(O,C,kH,kW)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvLayout {
    Nchw,
    Nhwc,
}

pub fn conv_layout(params: &Params) -> Result<ConvLayout, ShapeError> {
    match params.get_str("layout") {
        None | Some("NCHW") => Ok(ConvLayout::Nchw),
        Some("NHWC") => Ok(ConvLayout::Nhwc),
        Some(other) => Err(ShapeError::InvalidParam(format!(
            "Conv2D layout must be NCHW or NHWC, got {other}"
        ))),
    }
}

fn infer_conv2d(
    params: &Params,
    inputs: &[TensorType],
    bugs: &BugSet,
) -> Result<TensorType, ShapeError> {
    let kind = OperatorKind::Conv2d;
    require_dtype(&kind, &inputs[0], &[DType::F32])?;
    require_dtype(&kind, &inputs[1], &[DType::F32])?;
    if inputs[0].rank() != 4 || inputs[1].rank() != 4 {
        return Err(ShapeError::ShapeMismatch(
            "Conv2D requires rank-4 input and weight".into(),
        ));
    }
    let layout = conv_layout(params)?;
    let (n, c, h, w) = match layout {
        ConvLayout::Nchw => (
            inputs[0].shape[0],
            inputs[0].shape[1],
            inputs[0].shape[2],
            inputs[0].shape[3],
        ),
        ConvLayout::Nhwc => (
            inputs[0].shape[0],
            inputs[0].shape[3],
            inputs[0].shape[1],
            inputs[0].shape[2],
        ),
    };
    let (o, wc, kh, kw) = (
        inputs[1].shape[0],
        inputs[1].shape[1],
        inputs[1].shape[2],
        inputs[1].shape[3],
    );
    if wc != c {
        return Err(ShapeError::ShapeMismatch(format!(
            "Conv2D weight channels {wc} do not match input channels {c}"
        )));
    }
    let [sh, sw] = conv_strides(params)?;
    let [pt, pb, pl, pr] = conv_pads(params, bugs)?;
    let ih = h + pt + pb;
    let iw = w + pl + pr;
    if ih < kh || iw < kw {
        return Err(ShapeError::ShapeMismatch(format!(
            "Conv2D kernel {kh}x{kw} larger than padded input {ih}x{iw}"
        )));
    }
    let oh = (ih - kh) / sh + 1;
    let ow = (iw - kw) / sw + 1;
    let shape = match layout {
        ConvLayout::Nchw => vec![n, o, oh, ow],
        ConvLayout::Nhwc => vec![n, oh, ow, o],
    };
    Ok(TensorType::new(DType::F32, shape))
}

/// Normalizes a Concat axis against `rank`. Under seeded bug `L3` the
/// negative-axis adjustment is off by one.
fn concat_axis(axis: i64, rank: usize, bugs: &BugSet) -> Result<usize, ShapeError> {
    let adjusted = if axis < 0 {
        if bugs.has(BugId::L3) {
            axis + rank as i64 - 1
        } else {
            axis + rank as i64
        }
    } else {
        axis
    };
    if adjusted < 0 || adjusted >= rank as i64 {
        return Err(ShapeError::InvalidParam(format!(
            "Concat axis {axis} out of range for rank {rank}"
        )));
    }
    Ok(adjusted as usize)
}

fn infer_concat(
    params: &Params,
    inputs: &[TensorType],
    bugs: &BugSet,
) -> Result<TensorType, ShapeError> {
    let d = same_dtype(&OperatorKind::Concat, inputs)?;
    let rank = inputs[0].rank();
    if rank == 0 {
        return Err(ShapeError::ShapeMismatch(
            "Concat requires rank >= 1".into(),
        ));
    }
    if inputs.iter().any(|t| t.rank() != rank) {
        return Err(ShapeError::ShapeMismatch(
            "Concat inputs must share a rank".into(),
        ));
    }
    let axis = params
        .get_int("axis")
        .ok_or_else(|| ShapeError::InvalidParam("Concat requires axis=<int>".into()))?;
    let axis = concat_axis(axis, rank, bugs)?;
    let mut shape = inputs[0].shape.clone();
    for t in &inputs[1..] {
        for (d, (&a, &b)) in shape.iter().zip(t.shape.iter()).enumerate() {
            if d != axis && a != b {
                return Err(ShapeError::ShapeMismatch(format!(
                    "Concat extents differ off-axis: {a} vs {b} at dim {d}"
                )));
            }
        }
        shape[axis] += t.shape[axis];
    }
    Ok(TensorType::new(d, shape))
}

/// Validates a Transpose permutation and returns it. Under seeded bug `L4`
/// the duplicate-axis check is skipped.
pub fn transpose_perm(
    params: &Params,
    rank: usize,
    bugs: &BugSet,
) -> Result<Vec<usize>, ShapeError> {
    let perm = params
        .get_ints("perm")
        .ok_or_else(|| ShapeError::InvalidParam("Transpose requires perm=[..]".into()))?;
    if perm.len() != rank {
        return Err(ShapeError::InvalidParam(format!(
            "Transpose perm length {} does not match rank {rank}",
            perm.len()
        )));
    }
    if perm.iter().any(|p| *p < 0 || *p >= rank as i64) {
        return Err(ShapeError::InvalidParam(
            "Transpose perm entry out of range".into(),
        ));
    }
    if !bugs.has(BugId::L4) {
        let mut seen = vec![false; rank];
        for &p in perm {
            if seen[p as usize] {
                return Err(ShapeError::InvalidParam(format!(
                    "Transpose perm has duplicate axis {p}"
                )));
            }
            seen[p as usize] = true;
        }
    }
    Ok(perm.iter().map(|p| *p as usize).collect())
}

fn infer_reduce_sum(params: &Params, input: &TensorType) -> Result<TensorType, ShapeError> {
    require_dtype(&OperatorKind::ReduceSum, input, &ARITH_DTYPES)?;
    let axes = params
        .get_ints("axes")
        .ok_or_else(|| ShapeError::InvalidParam("ReduceSum requires axes=[..]".into()))?;
    if axes.is_empty() {
        return Err(ShapeError::InvalidParam("ReduceSum axes empty".into()));
    }
    let rank = input.rank();
    let mut seen = vec![false; rank];
    for &a in axes {
        if a < 0 || a >= rank as i64 {
            return Err(ShapeError::InvalidParam(format!(
                "ReduceSum axis {a} out of range for rank {rank}"
            )));
        }
        if seen[a as usize] {
            return Err(ShapeError::InvalidParam(
                "ReduceSum axes must be unique".into(),
            ));
        }
        seen[a as usize] = true;
    }
    let keepdims = match params.get_int("keepdims") {
        None | Some(0) => false,
        Some(1) => true,
        Some(v) => {
            return Err(ShapeError::InvalidParam(format!(
                "ReduceSum keepdims must be 0 or 1, got {v}"
            )))
        }
    };
    let mut shape = Vec::new();
    for (d, &ext) in input.shape.iter().enumerate() {
        if seen[d] {
            if keepdims {
                shape.push(1);
            }
        } else {
            shape.push(ext);
        }
    }
    Ok(TensorType::new(input.dtype, shape))
}

fn infer_pad(params: &Params, input: &TensorType) -> Result<TensorType, ShapeError> {
    let pads = params
        .get_ints("pads")
        .ok_or_else(|| ShapeError::InvalidParam("Pad requires pads=[..]".into()))?;
    if pads.len() != 2 * input.rank() {
        return Err(ShapeError::InvalidParam(format!(
            "Pad requires {} entries for rank {}, got {}",
            2 * input.rank(),
            input.rank(),
            pads.len()
        )));
    }
    if pads.iter().any(|p| *p < 0) {
        return Err(ShapeError::InvalidParam("Pad entries must be >= 0".into()));
    }
    let shape = input
        .shape
        .iter()
        .enumerate()
        .map(|(d, &ext)| ext + pads[2 * d] as usize + pads[2 * d + 1] as usize)
        .collect();
    Ok(TensorType::new(input.dtype, shape))
}

/// Output type of a fused region, re-propagated from slot types.
pub fn infer_fused(chain: &FusedChain, inputs: &[TensorType]) -> Result<TensorType, ShapeError> {
    if chain.steps.is_empty() {
        return Err(ShapeError::InvalidParam("FusedGroup chain is empty".into()));
    }
    let mut step_types: Vec<TensorType> = Vec::with_capacity(chain.steps.len());
    for (si, step) in chain.steps.iter().enumerate() {
        if step.args.len() != step.op.arity() {
            return Err(ShapeError::InvalidParam(format!(
                "fused step {si} has {} args, {} requires {}",
                step.args.len(),
                step.op.name(),
                step.op.arity()
            )));
        }
        let mut arg_types = Vec::with_capacity(step.args.len());
        for arg in &step.args {
            let t = match arg {
                FusedArg::Input(i) => inputs.get(*i).cloned().ok_or_else(|| {
                    ShapeError::ShapeMismatch(format!("fused step {si} references slot {i}"))
                })?,
                FusedArg::Step(j) => {
                    if *j >= si {
                        return Err(ShapeError::InvalidParam(format!(
                            "fused step {si} references later step {j}"
                        )));
                    }
                    step_types[*j].clone()
                }
            };
            arg_types.push(t);
        }
        let ew_kind = match step.op {
            super::EwOp::Add => OperatorKind::Add,
            super::EwOp::Sub => OperatorKind::Sub,
            super::EwOp::Mul => OperatorKind::Mul,
            super::EwOp::Div => OperatorKind::Div,
            super::EwOp::Neg => OperatorKind::Neg,
            super::EwOp::Relu => OperatorKind::Relu,
            super::EwOp::Sigmoid => OperatorKind::Sigmoid,
        };
        let t = infer_shape(&ew_kind, &Params::new(), &arg_types)?;
        step_types.push(t);
    }
    Ok(step_types.pop().unwrap())
}

/// Loader-side shape inference; deterministic and total for computational
/// kinds over schema-valid params. Source kinds (`Input`, `Constant`) carry
/// declared types and are rejected here.
pub fn infer_shape_with(
    bugs: &BugSet,
    kind: &OperatorKind,
    params: &Params,
    inputs: &[TensorType],
) -> Result<TensorType, ShapeError> {
    if !kind.arity().accepts(inputs.len()) {
        return Err(ShapeError::ShapeMismatch(format!(
            "{} got {} inputs",
            kind.name(),
            inputs.len()
        )));
    }
    if inputs.iter().any(|t| t.rank() > MAX_RANK) {
        return Err(ShapeError::ShapeMismatch(format!(
            "rank exceeds cap {MAX_RANK}"
        )));
    }
    match kind {
        OperatorKind::Input | OperatorKind::Constant => Err(ShapeError::InvalidParam(format!(
            "{} carries a declared type and has no inference rule",
            kind.name()
        ))),
        OperatorKind::Add | OperatorKind::Sub | OperatorKind::Mul | OperatorKind::Div => {
            infer_elementwise_binary(kind, inputs)
        }
        OperatorKind::Neg | OperatorKind::Relu => {
            require_dtype(kind, &inputs[0], &ARITH_DTYPES)?;
            Ok(inputs[0].clone())
        }
        OperatorKind::Sigmoid => {
            require_dtype(kind, &inputs[0], &[DType::F32])?;
            Ok(inputs[0].clone())
        }
        OperatorKind::MatMul => {
            let d = same_dtype(kind, inputs)?;
            require_dtype(kind, &inputs[0], &[DType::F32, DType::I32])?;
            if inputs[0].rank() != 2 || inputs[1].rank() != 2 {
                return Err(ShapeError::ShapeMismatch(
                    "MatMul requires rank-2 operands".into(),
                ));
            }
            let (m, k1) = (inputs[0].shape[0], inputs[0].shape[1]);
            let (k2, n) = (inputs[1].shape[0], inputs[1].shape[1]);
            if k1 != k2 {
                return Err(ShapeError::ShapeMismatch(format!(
                    "MatMul inner extents differ: {k1} vs {k2}"
                )));
            }
            Ok(TensorType::new(d, vec![m, n]))
        }
        OperatorKind::Conv2d => infer_conv2d(params, inputs, bugs),
        OperatorKind::Reshape => {
            let shape = params
                .get_ints("shape")
                .ok_or_else(|| ShapeError::InvalidParam("Reshape requires shape=[..]".into()))?;
            if shape.iter().any(|d| *d < 0) || shape.len() > MAX_RANK {
                return Err(ShapeError::InvalidParam(
                    "Reshape shape entries must be >= 0 with rank <= 5".into(),
                ));
            }
            let shape: Vec<usize> = shape.iter().map(|d| *d as usize).collect();
            let count: usize = shape.iter().product();
            if count != inputs[0].element_count() {
                return Err(ShapeError::ShapeMismatch(format!(
                    "Reshape to {count} elements from {}",
                    inputs[0].element_count()
                )));
            }
            Ok(TensorType::new(inputs[0].dtype, shape))
        }
        OperatorKind::Transpose => {
            let perm = transpose_perm(params, inputs[0].rank(), bugs)?;
            let shape = perm.iter().map(|&p| inputs[0].shape[p]).collect();
            Ok(TensorType::new(inputs[0].dtype, shape))
        }
        OperatorKind::Concat => infer_concat(params, inputs, bugs),
        OperatorKind::ReduceSum => infer_reduce_sum(params, &inputs[0]),
        OperatorKind::Cast => {
            let to = params
                .get_dtype("to")
                .ok_or_else(|| ShapeError::InvalidParam("Cast requires to=<dtype>".into()))?;
            if bugs.has(BugId::L2) && inputs[0].dtype == DType::I32 {
                // Loader inference treats Cast-from-I32 as the identity.
                return Ok(inputs[0].clone());
            }
            Ok(TensorType::new(to, inputs[0].shape.clone()))
        }
        OperatorKind::Pad => infer_pad(params, &inputs[0]),
        OperatorKind::FusedGroup(chain) => infer_fused(chain, inputs),
    }
}

/// Reference shape inference (no seeded bugs).
pub fn infer_shape(
    kind: &OperatorKind,
    params: &Params,
    inputs: &[TensorType],
) -> Result<TensorType, ShapeError> {
    infer_shape_with(&BugSet::empty(), kind, params, inputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::ParamValue;

    fn t(dtype: DType, shape: &[usize]) -> TensorType {
        TensorType::new(dtype, shape.to_vec())
    }

    #[test]
    fn matmul_rule() {
        let out = infer_shape(
            &OperatorKind::MatMul,
            &Params::new(),
            &[t(DType::F32, &[3, 4]), t(DType::F32, &[4, 5])],
        )
        .unwrap();
        assert_eq!(out, t(DType::F32, &[3, 5]));
    }

    #[test]
    fn matmul_inner_mismatch() {
        let err = infer_shape(
            &OperatorKind::MatMul,
            &Params::new(),
            &[t(DType::F32, &[3, 4]), t(DType::F32, &[5, 6])],
        )
        .unwrap_err();
        assert!(matches!(err, ShapeError::ShapeMismatch(_)));
    }

    #[test]
    fn conv2d_same_padding() {
        let params = Params::new()
            .with("stride", ParamValue::Ints(vec![1, 1]))
            .with("pad", ParamValue::Ints(vec![1, 1]));
        let out = infer_shape(
            &OperatorKind::Conv2d,
            &params,
            &[t(DType::F32, &[1, 3, 8, 8]), t(DType::F32, &[4, 3, 3, 3])],
        )
        .unwrap();
        assert_eq!(out, t(DType::F32, &[1, 4, 8, 8]));
    }

    #[test]
    fn conv2d_asymmetric_pad() {
        let params = Params::new()
            .with("stride", ParamValue::Ints(vec![1, 1]))
            .with("pad", ParamValue::Ints(vec![0, 0, 2, 2]));
        let out = infer_shape(
            &OperatorKind::Conv2d,
            &params,
            &[t(DType::F32, &[1, 1, 4, 4]), t(DType::F32, &[1, 1, 3, 3])],
        )
        .unwrap();
        assert_eq!(out, t(DType::F32, &[1, 1, 2, 6]));
        // L1 misreads the 4-entry pad as symmetric [0, 0].
        let buggy = infer_shape_with(
            &BugSet::from_ids([BugId::L1]),
            &OperatorKind::Conv2d,
            &params,
            &[t(DType::F32, &[1, 1, 4, 4]), t(DType::F32, &[1, 1, 3, 3])],
        )
        .unwrap();
        assert_eq!(buggy, t(DType::F32, &[1, 1, 2, 2]));
    }

    #[test]
    fn broadcast_add() {
        let out = infer_shape(
            &OperatorKind::Add,
            &Params::new(),
            &[t(DType::F32, &[2, 3]), t(DType::F32, &[1, 3])],
        )
        .unwrap();
        assert_eq!(out, t(DType::F32, &[2, 3]));
    }

    #[test]
    fn broadcast_is_commutative_in_shape() {
        let a = t(DType::I32, &[4, 1, 3]);
        let b = t(DType::I32, &[2, 3]);
        let ab = infer_shape(&OperatorKind::Add, &Params::new(), &[a.clone(), b.clone()]).unwrap();
        let ba = infer_shape(&OperatorKind::Add, &Params::new(), &[b, a]).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn transpose_duplicate_perm_rejected_unless_l4() {
        let params = Params::new().with("perm", ParamValue::Ints(vec![0, 0]));
        let err = infer_shape(&OperatorKind::Transpose, &params, &[t(DType::F32, &[2, 3])]);
        assert!(matches!(err, Err(ShapeError::InvalidParam(_))));
        let ok = infer_shape_with(
            &BugSet::from_ids([BugId::L4]),
            &OperatorKind::Transpose,
            &params,
            &[t(DType::F32, &[2, 3])],
        );
        assert_eq!(ok.unwrap(), t(DType::F32, &[2, 2]));
    }

    #[test]
    fn concat_negative_axis() {
        let params = Params::new().with("axis", ParamValue::Int(-1));
        let out = infer_shape(
            &OperatorKind::Concat,
            &params,
            &[t(DType::F32, &[2, 3]), t(DType::F32, &[2, 3])],
        )
        .unwrap();
        assert_eq!(out, t(DType::F32, &[2, 6]));
        // L3 normalizes -1 to axis 0 for rank 2.
        let buggy = infer_shape_with(
            &BugSet::from_ids([BugId::L3]),
            &OperatorKind::Concat,
            &params,
            &[t(DType::F32, &[2, 3]), t(DType::F32, &[2, 3])],
        )
        .unwrap();
        assert_eq!(buggy, t(DType::F32, &[4, 3]));
    }

    #[test]
    fn cast_dropped_on_i32_under_l2() {
        let params = Params::new().with("to", ParamValue::Dtype(DType::F32));
        let out = infer_shape(&OperatorKind::Cast, &params, &[t(DType::I32, &[4])]).unwrap();
        assert_eq!(out, t(DType::F32, &[4]));
        let buggy = infer_shape_with(
            &BugSet::from_ids([BugId::L2]),
            &OperatorKind::Cast,
            &params,
            &[t(DType::I32, &[4])],
        )
        .unwrap();
        assert_eq!(buggy, t(DType::I32, &[4]));
    }

    #[test]
    fn reduce_sum_keepdims() {
        let params = Params::new()
            .with("axes", ParamValue::Ints(vec![1]))
            .with("keepdims", ParamValue::Int(1));
        let out = infer_shape(&OperatorKind::ReduceSum, &params, &[t(DType::I32, &[2, 3])]).unwrap();
        assert_eq!(out, t(DType::I32, &[2, 1]));
    }

    #[test]
    fn sigmoid_is_f32_only() {
        let err = infer_shape(&OperatorKind::Sigmoid, &Params::new(), &[t(DType::I32, &[2])]);
        assert!(err.is_err());
    }
}
