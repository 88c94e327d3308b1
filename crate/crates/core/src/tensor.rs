//! Named, shaped parameter tensors and ordered collections of them.

use std::fmt::Write as _;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A flat row-major `f64` buffer with a name and shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if shape.contains(&0) {
            return Err(Error::Shape(format!("tensor {name}: zero-sized dimension in {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(Error::Shape(format!(
                "tensor {name}: shape {shape:?} needs {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Tensor { name, shape, values })
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Tensor::new(name, shape, vec![0.0; n])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Views a rank-2 tensor as a matrix.
    pub fn matrix(&self) -> Result<ArrayView2<'_, f64>> {
        match self.shape[..] {
            [r, c] => Ok(ArrayView2::from_shape((r, c), &self.values).expect("shape checked")),
            _ => Err(Error::Shape(format!("{} is not a matrix: {:?}", self.name, self.shape))),
        }
    }

    pub fn matrix_mut(&mut self) -> Result<ArrayViewMut2<'_, f64>> {
        match self.shape[..] {
            [r, c] => Ok(ArrayViewMut2::from_shape((r, c), &mut self.values).expect("shape checked")),
            _ => Err(Error::Shape(format!("{} is not a matrix: {:?}", self.name, self.shape))),
        }
    }

    pub fn vector(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.values[..])
    }

    pub fn vector_mut(&mut self) -> ArrayViewMut1<'_, f64> {
        ArrayViewMut1::from(&mut self.values[..])
    }
}

/// Ordered list of uniquely named tensors; the unit that is trained,
/// exchanged and averaged.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParameterSet {
    tensors: Vec<Tensor>,
}

impl ParameterSet {
    pub fn new(tensors: Vec<Tensor>) -> Result<Self> {
        for (i, t) in tensors.iter().enumerate() {
            if tensors[..i].iter().any(|o| o.name == t.name) {
                return Err(Error::Shape(format!("duplicate tensor name {}", t.name)));
            }
        }
        Ok(ParameterSet { tensors })
    }

    pub fn empty() -> Self {
        ParameterSet::default()
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Shape(format!("missing tensor {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .iter_mut()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Shape(format!("missing tensor {name}")))
    }

    /// Hex digest of the ordered (name, shape) list. Two sets can be
    /// aggregated iff their schema ids agree.
    pub fn schema_id(&self) -> String {
        let mut hasher = Sha256::new();
        for t in &self.tensors {
            hasher.update(t.name.as_bytes());
            hasher.update([0u8]);
            for d in &t.shape {
                hasher.update((*d as u64).to_le_bytes());
            }
            hasher.update([0xff]);
        }
        let digest = hasher.finalize();
        digest[..8].iter().fold(String::with_capacity(16), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn same_schema(&self, other: &ParameterSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    pub fn ensure_same_schema(&self, other: &ParameterSet) -> Result<()> {
        if self.same_schema(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "schema mismatch: {} vs {}",
                self.schema_id(),
                other.schema_id()
            )))
        }
    }

    pub fn zeros_like(&self) -> ParameterSet {
        ParameterSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor { name: t.name.clone(), shape: t.shape.clone(), values: vec![0.0; t.len()] })
                .collect(),
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors.iter().flat_map(|t| t.values.iter().copied())
    }

    /// Flattened copy of every value in tensor order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.values().collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.tensors {
            t.values.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ParameterSet) -> Result<()> {
        self.ensure_same_schema(other)?;
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.values.iter_mut().zip(&b.values).for_each(|(x, y)| *x += alpha * y);
        }
        Ok(())
    }

    pub fn squared_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum()
    }

    /// Largest absolute element-wise difference; `None` on schema mismatch.
    pub fn max_abs_diff(&self, other: &ParameterSet) -> Option<f64> {
        if !self.same_schema(other) {
            return None;
        }
        Some(self.values().zip(other.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    /// Bit-level equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &ParameterSet) -> bool {
        self.same_schema(other) && self.values().zip(other.values()).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}
