//! Minimal tensor layers with hand-written backward passes.
//!
//! Activations are `(batch, channels, height, width)` arrays in standard
//! layout. Parameters live in a [`ParamStore`] addressed by [`ParamId`], and
//! gradients are accumulated into a second store of identical structure.
//! Everything is generic over [`Scalar`] so the same code trains in `f32`
//! and is gradient-checked in `f64`.

mod layers;

use std::fmt::{Debug, Display};

use ndarray::{ArrayD, IxDyn, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, NumAssign};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use layers::{
    concat_channels, leaky_relu, leaky_relu_backward, relu, relu_backward, sigmoid,
    sigmoid_backward, split_channels, Conv2d, ConvTranspose2x2, Linear, MaxPool2,
};

/// On-disk element type tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn tag(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

/// Floating point element type usable by the layers.
pub trait Scalar:
    Float
    + FromPrimitive
    + NumAssign
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + std::iter::Sum
    + 'static
{
    const DTYPE: DType;

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    fn write_le(self, out: &mut Vec<u8>);

    /// Reads one element from exactly `DTYPE.size()` bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: DType = DType::F32;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: DType = DType::F64;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Index of a tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: ArrayD<T>,
}

/// Ordered collection of named tensors. Used both for parameters and for
/// their gradients (see [`ParamStore::zeros_like`]).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: ArrayD<T>) -> ParamId {
        self.entries.push(Param {
            name: name.into(),
            value,
        });
        ParamId(self.entries.len() - 1)
    }

    /// Registers a tensor drawn from `U(-bound, bound)`.
    pub fn push_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut R,
    ) -> ParamId {
        let n: usize = shape.iter().product();
        let data: Vec<T> = (0..n)
            .map(|_| T::lit(rng.gen_range(-bound..=bound)))
            .collect();
        let value = ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape matches data");
        self.push(name, value)
    }

    pub fn push_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.push(name, ArrayD::zeros(IxDyn(shape)))
    }

    pub fn get(&self, id: ParamId) -> &ArrayD<T> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ArrayD<T> {
        &mut self.entries[id.0].value
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.entries.iter_mut()
    }

    pub fn by_name(&self, name: &str) -> Option<&ArrayD<T>> {
        self.entries.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    /// Same names and shapes, all values zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: ArrayD::zeros(p.value.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for p in &mut self.entries {
            p.value.fill(T::zero());
        }
    }

    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    /// SHA-256 over names, shapes and little-endian values.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        let mut buf = Vec::new();
        for p in &self.entries {
            hasher.update(p.name.as_bytes());
            for &d in p.value.shape() {
                hasher.update((d as u64).to_le_bytes());
            }
            buf.clear();
            for &v in p.value.iter() {
                v.write_le(&mut buf);
            }
            hasher.update(&buf);
        }
        format!("{:x}", hasher.finalize())
    }

    /// Converts every tensor to another element type.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.mapv(|v| U::lit(v.to_f64().unwrap_or(f64::NAN))),
                })
                .collect(),
        }
    }

    /// Checks that `other` declares exactly the same names and shapes.
    pub fn check_layout(&self, other: &ParamStore<T>) -> crate::Result<()> {
        if self.len() != other.len() {
            return Err(crate::Error::Tensor {
                name: "<all>".into(),
                reason: format!("expected {} tensors, found {}", self.len(), other.len()),
            });
        }
        for (a, b) in self.entries.iter().zip(other.entries.iter()) {
            if a.name != b.name {
                return Err(crate::Error::Tensor {
                    name: b.name.clone(),
                    reason: format!("expected tensor `{}` at this position", a.name),
                });
            }
            if a.value.shape() != b.value.shape() {
                return Err(crate::Error::Tensor {
                    name: b.name.clone(),
                    reason: format!(
                        "expected shape {:?}, found {:?}",
                        a.value.shape(),
                        b.value.shape()
                    ),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checksum_tracks_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = ParamStore::<f32>::new();
        a.push_uniform("w", &[2, 3], 1.0, &mut rng);
        let mut b = a.clone();
        assert_eq!(a.checksum(), b.checksum());
        b.iter_mut().next().unwrap().value[[0, 0]] += 1.0;
        assert_ne!(a.checksum(), b.checksum());
    }

    #[test]
    fn layout_check_names_offending_tensor() {
        let mut a = ParamStore::<f64>::new();
        a.push_zeros("conv.weight", &[4, 1, 3, 3]);
        let mut b = ParamStore::<f64>::new();
        b.push_zeros("conv.weight", &[4, 2, 3, 3]);
        let err = a.check_layout(&b).unwrap_err().to_string();
        assert!(err.contains("conv.weight"), "{err}");
    }
}
