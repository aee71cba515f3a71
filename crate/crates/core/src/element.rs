//! Element types carried by plans, generic over the scalar.

use std::fmt::Debug;

use num_traits::{NumCast, WrappingAdd, Zero};
use serde::{Deserialize, Serialize};

/// Runtime tag for the element type of a plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    I32,
    F32,
}

impl DType {
    /// Both supported element types are four bytes wide.
    pub const fn size(self) -> usize {
        4
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::I32 => "i32",
            DType::F32 => "f32",
        }
    }
}

impl std::fmt::Display for DType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for DType {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "i32" => Ok(DType::I32),
            "f32" => Ok(DType::F32),
            other => Err(crate::Error::Shape(format!("unknown dtype {other}"))),
        }
    }
}

/// A reducible four-byte scalar.
///
/// Integer sums wrap so that every summation order produces the same bits.
pub trait Element: Copy + Debug + PartialEq + Zero + NumCast + Send + Sync + 'static {
    const DTYPE: DType;

    fn sum(self, other: Self) -> Self;
    fn to_le(self) -> [u8; 4];
    fn from_le(bytes: [u8; 4]) -> Self;
}

impl Element for i32 {
    const DTYPE: DType = DType::I32;

    fn sum(self, other: Self) -> Self {
        WrappingAdd::wrapping_add(&self, &other)
    }
    fn to_le(self) -> [u8; 4] {
        self.to_le_bytes()
    }
    fn from_le(bytes: [u8; 4]) -> Self {
        i32::from_le_bytes(bytes)
    }
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;

    fn sum(self, other: Self) -> Self {
        self + other
    }
    fn to_le(self) -> [u8; 4] {
        self.to_le_bytes()
    }
    fn from_le(bytes: [u8; 4]) -> Self {
        f32::from_le_bytes(bytes)
    }
}

pub fn encode<T: Element>(values: &[T]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le()).collect()
}

pub fn decode<T: Element>(bytes: &[u8]) -> Vec<T> {
    bytes
        .chunks_exact(4)
        .map(|c| T::from_le([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// Element-wise `acc[i] = acc[i] + rhs[i]` over little-endian byte images.
pub fn reduce_bytes_into(dtype: DType, acc: &mut [u8], rhs: &[u8]) {
    match dtype {
        DType::I32 => reduce_typed::<i32>(acc, rhs),
        DType::F32 => reduce_typed::<f32>(acc, rhs),
    }
}

fn reduce_typed<T: Element>(acc: &mut [u8], rhs: &[u8]) {
    for (a, b) in acc.chunks_exact_mut(4).zip(rhs.chunks_exact(4)) {
        let x = T::from_le([a[0], a[1], a[2], a[3]]);
        let y = T::from_le([b[0], b[1], b[2], b[3]]);
        a.copy_from_slice(&x.sum(y).to_le());
    }
}
