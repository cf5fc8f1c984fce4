// SPDX-License-Identifier: Apache-2.0

//! Tolerance-aware tensor comparison used by the differential oracles.

use crate::tensor::{Scalar, TensorValue};

/// Comparison tolerances. Integers and bools always compare exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub rel: f32,
    pub abs: f32,
}

impl Tolerance {
    /// Default float tolerance for optimization-level comparisons.
    pub const STANDARD: Tolerance = Tolerance {
        rel: 1e-5,
        abs: 1e-6,
    };

    /// Widened tolerance once fused-multiply-add intrinsics are in play
    /// (single-rounding deviation is the one sanctioned semantic drift).
    pub const INTRINSIC: Tolerance = Tolerance {
        rel: 1e-4,
        abs: 1e-5,
    };

    /// Exact comparison (floats bit-comparable modulo NaN identity).
    pub const EXACT: Tolerance = Tolerance { rel: 0.0, abs: 0.0 };
}

/// First detected divergence between two tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub index: usize,
    pub max_abs: f32,
    pub max_rel: f32,
    pub message: String,
}

fn f32_close(a: f32, b: f32, tol: Tolerance) -> (bool, f32, f32) {
    if a.is_nan() && b.is_nan() {
        return (true, 0.0, 0.0);
    }
    if a.is_infinite() || b.is_infinite() {
        return (a == b, f32::INFINITY, f32::INFINITY);
    }
    let abs = (a - b).abs();
    let scale = a.abs().max(b.abs());
    let rel = if scale > 0.0 { abs / scale } else { 0.0 };
    (abs <= tol.abs || rel <= tol.rel, abs, rel)
}

/// Compares two tensors element-wise. Returns the first divergence along
/// with the maximum error magnitudes over the whole tensor.
pub fn tensors_close(a: &TensorValue, b: &TensorValue, tol: Tolerance) -> Result<(), Divergence> {
    if a.ttype != b.ttype {
        return Err(Divergence {
            index: 0,
            max_abs: f32::INFINITY,
            max_rel: f32::INFINITY,
            message: format!("type mismatch: {} vs {}", a.ttype, b.ttype),
        });
    }
    let mut first: Option<usize> = None;
    let mut max_abs = 0.0f32;
    let mut max_rel = 0.0f32;
    for i in 0..a.data.len() {
        let ok = match (a.data.get(i), b.data.get(i)) {
            (Scalar::F32(x), Scalar::F32(y)) => {
                let (ok, abs, rel) = f32_close(x, y, tol);
                if abs.is_finite() {
                    max_abs = max_abs.max(abs);
                    max_rel = max_rel.max(rel);
                } else if !ok {
                    max_abs = f32::INFINITY;
                    max_rel = f32::INFINITY;
                }
                ok
            }
            (Scalar::I32(x), Scalar::I32(y)) => x == y,
            (Scalar::I8(x), Scalar::I8(y)) => x == y,
            (Scalar::Bool(x), Scalar::Bool(y)) => x == y,
            _ => false,
        };
        if !ok && first.is_none() {
            first = Some(i);
        }
    }
    match first {
        None => Ok(()),
        Some(index) => Err(Divergence {
            index,
            max_abs,
            max_rel,
            message: format!(
                "element {index}: {:?} vs {:?}",
                a.data.get(index),
                b.data.get(index)
            ),
        }),
    }
}

/// Compares two ordered output lists.
pub fn outputs_close(
    a: &[TensorValue],
    b: &[TensorValue],
    tol: Tolerance,
) -> Result<(), (usize, Divergence)> {
    if a.len() != b.len() {
        return Err((
            0,
            Divergence {
                index: 0,
                max_abs: f32::INFINITY,
                max_rel: f32::INFINITY,
                message: format!("output count {} vs {}", a.len(), b.len()),
            },
        ));
    }
    for (pos, (x, y)) in a.iter().zip(b.iter()).enumerate() {
        tensors_close(x, y, tol).map_err(|d| (pos, d))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_integer_compare() {
        let a = TensorValue::from_i32(vec![2], vec![1, 2]);
        let b = TensorValue::from_i32(vec![2], vec![1, 3]);
        let d = tensors_close(&a, &b, Tolerance::STANDARD).unwrap_err();
        assert_eq!(d.index, 1);
    }

    #[test]
    fn nan_matches_nan() {
        let a = TensorValue::from_f32(vec![1], vec![f32::NAN]);
        let b = TensorValue::from_f32(vec![1], vec![f32::NAN]);
        assert!(tensors_close(&a, &b, Tolerance::EXACT).is_ok());
    }

    #[test]
    fn signed_zero_compares_equal() {
        let a = TensorValue::from_f32(vec![1], vec![0.0]);
        let b = TensorValue::from_f32(vec![1], vec![-0.0]);
        assert!(tensors_close(&a, &b, Tolerance::EXACT).is_ok());
    }

    #[test]
    fn relative_tolerance_scales() {
        let a = TensorValue::from_f32(vec![1], vec![1000.0]);
        let b = TensorValue::from_f32(vec![1], vec![1000.005]);
        assert!(tensors_close(&a, &b, Tolerance::STANDARD).is_ok());
        let c = TensorValue::from_f32(vec![1], vec![1000.5]);
        assert!(tensors_close(&a, &c, Tolerance::STANDARD).is_err());
    }

    #[test]
    fn type_mismatch_is_divergence() {
        let a = TensorValue::from_f32(vec![1], vec![1.0]);
        let b = TensorValue::from_f32(vec![1, 1], vec![1.0]);
        assert!(tensors_close(&a, &b, Tolerance::STANDARD).is_err());
    }
}
