// SPDX-License-Identifier: Apache-2.0

//! Tensor element types, shapes, and dense row-major values.

use std::fmt;
use std::str::FromStr;

/// Maximum tensor rank accepted anywhere in the pipeline.
pub const MAX_RANK: usize = 5;
/// Maximum extent used by the bundled generators.
pub const MAX_EXTENT: usize = 64;

/// Closed set of element types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DType {
    F32,
    I32,
    I8,
    Bool,
}

impl DType {
    pub const ALL: [DType; 4] = [DType::F32, DType::I32, DType::I8, DType::Bool];

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "F32",
            DType::I32 => "I32",
            DType::I8 => "I8",
            DType::Bool => "BOOL",
        }
    }

    pub fn is_numeric(self) -> bool {
        !matches!(self, DType::Bool)
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "F32" => Ok(DType::F32),
            "I32" => Ok(DType::I32),
            "I8" => Ok(DType::I8),
            "BOOL" => Ok(DType::Bool),
            other => Err(format!("unknown dtype `{other}`")),
        }
    }
}

/// Element type plus shape. Rank 0 denotes a scalar with one element.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TensorType {
    pub dtype: DType,
    pub shape: Vec<usize>,
}

impl TensorType {
    pub fn new(dtype: DType, shape: Vec<usize>) -> Self {
        Self { dtype, shape }
    }

    pub fn scalar(dtype: DType) -> Self {
        Self {
            dtype,
            shape: Vec::new(),
        }
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    /// Row-major strides, in elements.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![0usize; self.shape.len()];
        let mut acc = 1usize;
        for d in (0..self.shape.len()).rev() {
            strides[d] = acc;
            acc = acc.saturating_mul(self.shape[d]);
        }
        strides
    }
}

impl fmt::Display for TensorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims: Vec<String> = self.shape.iter().map(|d| d.to_string()).collect();
        write!(f, "{}[{}]", self.dtype, dims.join(","))
    }
}

/// Trailing-aligned broadcast of two shapes with size-1 stretching.
/// Returns `None` when the shapes are incompatible.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return None;
        };
    }
    Some(out)
}

/// Maps a coordinate in `out_shape` to the element offset of a
/// trailing-aligned operand with shape `in_shape` (size-1 axes pinned to 0).
pub fn project_coord(coord: &[usize], out_shape: &[usize], in_shape: &[usize]) -> usize {
    debug_assert_eq!(coord.len(), out_shape.len());
    let skip = out_shape.len() - in_shape.len();
    let mut flat = 0usize;
    let mut stride = 1usize;
    for d in (0..in_shape.len()).rev() {
        let c = if in_shape[d] == 1 { 0 } else { coord[skip + d] };
        flat += c * stride;
        stride *= in_shape[d];
    }
    flat
}

/// One tensor element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scalar {
    F32(f32),
    I32(i32),
    I8(i8),
    Bool(bool),
}

impl Scalar {
    pub fn dtype(self) -> DType {
        match self {
            Scalar::F32(_) => DType::F32,
            Scalar::I32(_) => DType::I32,
            Scalar::I8(_) => DType::I8,
            Scalar::Bool(_) => DType::Bool,
        }
    }

    pub fn zero(dtype: DType) -> Scalar {
        match dtype {
            DType::F32 => Scalar::F32(0.0),
            DType::I32 => Scalar::I32(0),
            DType::I8 => Scalar::I8(0),
            DType::Bool => Scalar::Bool(false),
        }
    }

    /// Conversion table shared by the graph `Cast` kernel and the loop-IR
    /// `cast<..>` expression. Float-to-int truncates toward zero and
    /// saturates at the target bounds (NaN becomes 0); int-to-int wraps.
    pub fn cast_to(self, to: DType) -> Scalar {
        match (self, to) {
            (Scalar::F32(v), DType::F32) => Scalar::F32(v),
            (Scalar::F32(v), DType::I32) => Scalar::I32(v as i32),
            (Scalar::F32(v), DType::I8) => Scalar::I8(v as i8),
            (Scalar::F32(v), DType::Bool) => Scalar::Bool(v != 0.0),
            (Scalar::I32(v), DType::F32) => Scalar::F32(v as f32),
            (Scalar::I32(v), DType::I32) => Scalar::I32(v),
            (Scalar::I32(v), DType::I8) => Scalar::I8(v as i8),
            (Scalar::I32(v), DType::Bool) => Scalar::Bool(v != 0),
            (Scalar::I8(v), DType::F32) => Scalar::F32(v as f32),
            (Scalar::I8(v), DType::I32) => Scalar::I32(v as i32),
            (Scalar::I8(v), DType::I8) => Scalar::I8(v),
            (Scalar::I8(v), DType::Bool) => Scalar::Bool(v != 0),
            (Scalar::Bool(v), DType::F32) => Scalar::F32(if v { 1.0 } else { 0.0 }),
            (Scalar::Bool(v), DType::I32) => Scalar::I32(v as i32),
            (Scalar::Bool(v), DType::I8) => Scalar::I8(v as i8),
            (Scalar::Bool(v), DType::Bool) => Scalar::Bool(v),
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::F32(v) => {
                if v.is_finite() && v.fract() == 0.0 {
                    // Keep a decimal point so F32 payloads re-parse as floats.
                    write!(f, "{v:.1}")
                } else {
                    write!(f, "{v}")
                }
            }
            Scalar::I32(v) => write!(f, "{v}"),
            Scalar::I8(v) => write!(f, "{v}"),
            Scalar::Bool(v) => write!(f, "{v}"),
        }
    }
}

/// Dense row-major element storage, tagged by dtype.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I32(Vec<i32>),
    I8(Vec<i8>),
    Bool(Vec<bool>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::I32(_) => DType::I32,
            TensorData::I8(_) => DType::I8,
            TensorData::Bool(_) => DType::Bool,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::I32(v) => v.len(),
            TensorData::I8(v) => v.len(),
            TensorData::Bool(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zeros(dtype: DType, len: usize) -> TensorData {
        match dtype {
            DType::F32 => TensorData::F32(vec![0.0; len]),
            DType::I32 => TensorData::I32(vec![0; len]),
            DType::I8 => TensorData::I8(vec![0; len]),
            DType::Bool => TensorData::Bool(vec![false; len]),
        }
    }

    pub fn get(&self, i: usize) -> Scalar {
        match self {
            TensorData::F32(v) => Scalar::F32(v[i]),
            TensorData::I32(v) => Scalar::I32(v[i]),
            TensorData::I8(v) => Scalar::I8(v[i]),
            TensorData::Bool(v) => Scalar::Bool(v[i]),
        }
    }

    /// Stores `s` at `i`; panics if the scalar dtype does not match.
    pub fn set(&mut self, i: usize, s: Scalar) {
        match (self, s) {
            (TensorData::F32(v), Scalar::F32(x)) => v[i] = x,
            (TensorData::I32(v), Scalar::I32(x)) => v[i] = x,
            (TensorData::I8(v), Scalar::I8(x)) => v[i] = x,
            (TensorData::Bool(v), Scalar::Bool(x)) => v[i] = x,
            (data, s) => panic!("dtype mismatch storing {:?} into {}", s, data.dtype()),
        }
    }
}

/// A typed tensor value: type descriptor plus row-major data.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorValue {
    pub ttype: TensorType,
    pub data: TensorData,
}

impl TensorValue {
    pub fn new(ttype: TensorType, data: TensorData) -> Self {
        debug_assert_eq!(ttype.element_count(), data.len());
        debug_assert_eq!(ttype.dtype, data.dtype());
        Self { ttype, data }
    }

    pub fn zeros(ttype: TensorType) -> Self {
        let data = TensorData::zeros(ttype.dtype, ttype.element_count());
        Self { ttype, data }
    }

    pub fn scalar_f32(v: f32) -> Self {
        Self::new(TensorType::scalar(DType::F32), TensorData::F32(vec![v]))
    }

    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Self {
        Self::new(TensorType::new(DType::F32, shape), TensorData::F32(data))
    }

    pub fn from_i32(shape: Vec<usize>, data: Vec<i32>) -> Self {
        Self::new(TensorType::new(DType::I32, shape), TensorData::I32(data))
    }

    pub fn from_i8(shape: Vec<usize>, data: Vec<i8>) -> Self {
        Self::new(TensorType::new(DType::I8, shape), TensorData::I8(data))
    }

    /// Checks that data length and dtype agree with the declared type.
    pub fn check_consistent(&self) -> Result<(), String> {
        if self.data.dtype() != self.ttype.dtype {
            return Err(format!(
                "payload dtype {} does not match declared {}",
                self.data.dtype(),
                self.ttype.dtype
            ));
        }
        if self.data.len() != self.ttype.element_count() {
            return Err(format!(
                "payload has {} elements, type {} requires {}",
                self.data.len(),
                self.ttype,
                self.ttype.element_count()
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadcast_trailing_alignment() {
        assert_eq!(broadcast_shapes(&[2, 3], &[1, 3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shapes(&[2, 3], &[3]), Some(vec![2, 3]));
        assert_eq!(broadcast_shapes(&[4, 1], &[3]), Some(vec![4, 3]));
        assert_eq!(broadcast_shapes(&[], &[2, 2]), Some(vec![2, 2]));
        assert_eq!(broadcast_shapes(&[2, 3], &[2, 4]), None);
    }

    #[test]
    fn broadcast_zero_extent() {
        assert_eq!(broadcast_shapes(&[0], &[1]), Some(vec![0]));
        assert_eq!(broadcast_shapes(&[0], &[3]), None);
    }

    #[test]
    fn projection_pins_stretched_axes() {
        // out (2,3), operand (1,3): row index ignored.
        assert_eq!(project_coord(&[1, 2], &[2, 3], &[1, 3]), 2);
        // operand (3,): leading axis dropped.
        assert_eq!(project_coord(&[1, 2], &[2, 3], &[3]), 2);
        // exact shape: row-major.
        assert_eq!(project_coord(&[1, 2], &[2, 3], &[2, 3]), 5);
    }

    #[test]
    fn cast_saturates_float_to_int() {
        assert_eq!(Scalar::F32(300.0).cast_to(DType::I8), Scalar::I8(127));
        assert_eq!(Scalar::F32(-300.0).cast_to(DType::I8), Scalar::I8(-128));
        assert_eq!(Scalar::F32(f32::NAN).cast_to(DType::I32), Scalar::I32(0));
        assert_eq!(Scalar::F32(-2.7).cast_to(DType::I32), Scalar::I32(-2));
    }

    #[test]
    fn int_to_int_wraps() {
        assert_eq!(Scalar::I32(200).cast_to(DType::I8), Scalar::I8(-56));
    }

    #[test]
    fn scalar_display_keeps_float_mark() {
        assert_eq!(Scalar::F32(1.0).to_string(), "1.0");
        assert_eq!(Scalar::F32(1.5).to_string(), "1.5");
        assert_eq!(Scalar::I32(1).to_string(), "1");
    }
}
