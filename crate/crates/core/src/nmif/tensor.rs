use serde::{Deserialize, Serialize};

use super::NmifError;

/// Element type of a tensor payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DType {
    F32,
    I64,
}

impl DType {
    pub fn size_in_bytes(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::I64 => 8,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::I64 => 1,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::I64),
            _ => None,
        }
    }
}

impl std::fmt::Display for DType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DType::F32 => f.write_str("F32"),
            DType::I64 => f.write_str("I64"),
        }
    }
}

/// Flat row-major element buffer.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "dtype", content = "values")]
pub enum Values {
    F32(Vec<f32>),
    I64(Vec<i64>),
}

impl Values {
    pub fn dtype(&self) -> DType {
        match self {
            Values::F32(_) => DType::F32,
            Values::I64(_) => DType::I64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Values::F32(v) => v.len(),
            Values::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zeros(dtype: DType, len: usize) -> Self {
        match dtype {
            DType::F32 => Values::F32(vec![0.0; len]),
            DType::I64 => Values::I64(vec![0; len]),
        }
    }

    /// Builds a new buffer with `out[i] = self[indices[i]]`.
    pub fn gather(&self, indices: &[usize]) -> Self {
        match self {
            Values::F32(v) => Values::F32(indices.iter().map(|&i| v[i]).collect()),
            Values::I64(v) => Values::I64(indices.iter().map(|&i| v[i]).collect()),
        }
    }

    /// Bitwise equality: `-0.0 != 0.0` and identical NaN payloads compare equal.
    pub fn bit_eq(&self, other: &Values) -> bool {
        match (self, other) {
            (Values::F32(a), Values::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (Values::I64(a), Values::I64(b)) => a == b,
            _ => false,
        }
    }
}

/// A dense tensor: dtype, shape and row-major values.
///
/// An empty shape denotes a scalar holding exactly one element.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "TensorRepr")]
pub struct TensorData {
    shape: Vec<usize>,
    #[serde(flatten)]
    values: Values,
}

#[derive(Deserialize)]
struct TensorRepr {
    shape: Vec<usize>,
    #[serde(flatten)]
    values: Values,
}

impl TryFrom<TensorRepr> for TensorData {
    type Error = NmifError;

    fn try_from(r: TensorRepr) -> Result<Self, NmifError> {
        TensorData::new(r.shape, r.values)
    }
}

impl PartialEq for TensorData {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.values.bit_eq(&other.values)
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl TensorData {
    pub fn new(shape: Vec<usize>, values: Values) -> Result<Self, NmifError> {
        let expected = numel(&shape);
        if expected != values.len() {
            return Err(NmifError::ElementCount {
                expected,
                got: values.len(),
            });
        }
        Ok(Self { shape, values })
    }

    pub fn from_f32(shape: Vec<usize>, values: Vec<f32>) -> Result<Self, NmifError> {
        Self::new(shape, Values::F32(values))
    }

    pub fn from_i64(shape: Vec<usize>, values: Vec<i64>) -> Result<Self, NmifError> {
        Self::new(shape, Values::I64(values))
    }

    pub fn zeros(dtype: DType, shape: Vec<usize>) -> Self {
        let n = numel(&shape);
        Self {
            shape,
            values: Values::zeros(dtype, n),
        }
    }

    pub fn dtype(&self) -> DType {
        self.values.dtype()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &Values {
        &self.values
    }

    pub fn into_values(self) -> Values {
        self.values
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.values {
            Values::F32(v) => Some(v),
            Values::I64(_) => None,
        }
    }

    pub fn as_f32_mut(&mut self) -> Option<&mut [f32]> {
        match &mut self.values {
            Values::F32(v) => Some(v),
            Values::I64(_) => None,
        }
    }

    pub fn as_i64(&self) -> Option<&[i64]> {
        match &self.values {
            Values::I64(v) => Some(v),
            Values::F32(_) => None,
        }
    }

    /// Same buffer, new shape. Fails if the element count would change.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self, NmifError> {
        Self::new(shape, self.values.clone())
    }

    /// Axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.rank(), "permutation rank mismatch");
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let in_strides = strides(&self.shape);
        let mut indices = Vec::with_capacity(self.numel());
        let mut counter = vec![0usize; out_shape.len()];
        for _ in 0..self.numel() {
            let src: usize = counter
                .iter()
                .zip(perm)
                .map(|(&c, &p)| c * in_strides[p])
                .sum();
            indices.push(src);
            for axis in (0..counter.len()).rev() {
                counter[axis] += 1;
                if counter[axis] < out_shape[axis] {
                    break;
                }
                counter[axis] = 0;
            }
        }
        Self {
            shape: out_shape,
            values: self.values.gather(&indices),
        }
    }

    /// Number of NaN or infinite entries (always 0 for integer tensors).
    pub fn non_finite_count(&self) -> usize {
        match &self.values {
            Values::F32(v) => v.iter().filter(|x| !x.is_finite()).count(),
            Values::I64(_) => 0,
        }
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        match &self.values {
            Values::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            Values::I64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    pub fn from_le_bytes(dtype: DType, shape: Vec<usize>, bytes: &[u8]) -> Result<Self, NmifError> {
        let n = numel(&shape);
        let want = n * dtype.size_in_bytes();
        if bytes.len() != want {
            return Err(NmifError::ElementCount {
                expected: want,
                got: bytes.len(),
            });
        }
        let values = match dtype {
            DType::F32 => Values::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DType::I64 => Values::I64(
                bytes
                    .chunks_exact(8)
                    .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        Ok(Self { shape, values })
    }
}

/// Row-major strides for `shape`.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut out = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        out[i] = out[i + 1] * shape[i + 1];
    }
    out
}
