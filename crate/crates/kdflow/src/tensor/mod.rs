//! Dense tensor numerics: two precision modes, fixed accumulation order,
//! and a reverse-mode gradient tape.
//!
//! Everything here is deliberately scalar and deterministic. All reductions
//! run row-major, left to right, so any two code paths that compute the same
//! mathematical quantity produce the same f32 bits. That reproducibility is
//! what the pipeline-vs-monolithic equivalence tests lean on.

mod kernels;
mod tape;

pub use kernels::{
    gelu_scalar, lm_head_matmul, lm_head_matmul_src, matmul, rmsnorm, softmax, softmax_in_place,
};
pub use tape::{Gradients, Slot, Tape};

use std::fmt;
use std::io::{self, Read, Write};
use std::sync::Arc;

use thiserror::Error;

/// Maximum tensor rank supported anywhere in the system.
pub const MAX_RANK: usize = 4;

/// Tensor file magic ("KDT1").
pub const TENSOR_MAGIC: [u8; 4] = *b"KDT1";

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {context}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        context: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },
    #[error("dtype mismatch: {0:?} vs {1:?}")]
    DTypeMismatch(DType, DType),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("{0}")]
    Contract(String),
    #[error("tensor io: {0}")]
    Io(#[from] io::Error),
    #[error("bad tensor encoding: {0}")]
    Encoding(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Scalar precision of a tensor.
///
/// `Bf16e` emulates bfloat16 by truncating the f32 mantissa after every
/// arithmetic store; values remain ordinary f32 in memory, so the projection
/// is idempotent and serialization needs no second format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    Bf16e,
}

impl DType {
    pub fn as_u8(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::Bf16e => 1,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(DType::F32),
            1 => Ok(DType::Bf16e),
            other => Err(TensorError::Encoding(format!("unknown dtype byte {other}"))),
        }
    }
}

/// Truncate an f32 to the bfloat16-representable grid (top 16 bits kept).
/// NaN is passed through unchanged so the mask cannot turn it into infinity.
#[inline]
pub fn bf16e_project(x: f32) -> f32 {
    if x.is_nan() {
        return x;
    }
    f32::from_bits(x.to_bits() & 0xFFFF_0000)
}

/// Project a value into `dtype`'s representable set.
#[inline]
pub fn store(dtype: DType, x: f32) -> f32 {
    match dtype {
        DType::F32 => x,
        DType::Bf16e => bf16e_project(x),
    }
}

/// Dense row-major tensor. Immutable after construction; cloning shares the
/// underlying buffer.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    dtype: DType,
    data: Arc<Vec<f32>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}<{:?}>", self.shape, self.dtype)
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(TensorError::InvalidShape {
            shape: shape.to_vec(),
            reason: format!("rank must be 1..={MAX_RANK}"),
        });
    }
    let mut n = 1usize;
    for &d in shape {
        if d == 0 {
            return Err(TensorError::InvalidShape {
                shape: shape.to_vec(),
                reason: "zero-sized dimension".into(),
            });
        }
        n = n.checked_mul(d).ok_or_else(|| TensorError::InvalidShape {
            shape: shape.to_vec(),
            reason: "element count overflow".into(),
        })?;
    }
    Ok(n)
}

impl Tensor {
    pub fn new(shape: &[usize], dtype: DType, mut data: Vec<f32>) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != data.len() {
            return Err(TensorError::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("shape wants {n} elements, buffer has {}", data.len()),
            });
        }
        if dtype == DType::Bf16e {
            for x in &mut data {
                *x = bf16e_project(*x);
            }
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            dtype,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: &[usize], dtype: DType) -> Self {
        let n = check_shape(shape).expect("valid shape");
        Tensor {
            shape: shape.to_vec(),
            dtype,
            data: Arc::new(vec![0.0; n]),
        }
    }

    pub fn full(shape: &[usize], dtype: DType, value: f32) -> Self {
        let n = check_shape(shape).expect("valid shape");
        Tensor {
            shape: shape.to_vec(),
            dtype,
            data: Arc::new(vec![store(dtype, value); n]),
        }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor::new(&[1], DType::F32, vec![value]).expect("scalar")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Mutable access for the single owner (optimizer updates). Copies only
    /// if the buffer is shared. Callers must re-project Bf16e stores.
    pub fn data_mut(&mut self) -> &mut [f32] {
        Arc::make_mut(&mut self.data)
    }

    /// Same buffer under a new shape with an equal element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Tensor> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(TensorError::ShapeMismatch {
                context: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            dtype: self.dtype,
            data: Arc::clone(&self.data),
        })
    }

    /// Reinterpret precision without changing stored values. Projecting into
    /// Bf16e rewrites the buffer; widening to F32 is free.
    pub fn cast(&self, dtype: DType) -> Tensor {
        if dtype == self.dtype {
            return self.clone();
        }
        match dtype {
            DType::F32 => Tensor {
                shape: self.shape.clone(),
                dtype,
                data: Arc::clone(&self.data),
            },
            DType::Bf16e => {
                let data = self.data.iter().map(|&x| bf16e_project(x)).collect();
                Tensor {
                    shape: self.shape.clone(),
                    dtype,
                    data: Arc::new(data),
                }
            }
        }
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Flat offset of a 2-D index.
    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> f32 {
        debug_assert_eq!(self.rank(), 2);
        self.data[i * self.shape[1] + j]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f32> {
        self.data.iter()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Raw little-endian payload bytes (the serialization payload layout).
    pub fn payload_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 4);
        for x in self.data.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    /// Serialize in the binary tensor format:
    /// magic "KDT1", dtype u8, rank u8, dims u32 x rank, raw f32 LE payload.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&TENSOR_MAGIC)?;
        w.write_all(&[self.dtype.as_u8(), self.rank() as u8])?;
        for &d in &self.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for x in self.data.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Tensor> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != TENSOR_MAGIC {
            return Err(TensorError::Encoding(format!(
                "bad tensor magic {magic:?}, expected {TENSOR_MAGIC:?}"
            )));
        }
        let mut hdr = [0u8; 2];
        r.read_exact(&mut hdr)?;
        let dtype = DType::from_u8(hdr[0])?;
        let rank = hdr[1] as usize;
        if rank == 0 || rank > MAX_RANK {
            return Err(TensorError::Encoding(format!("bad rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            shape.push(u32::from_le_bytes(b) as usize);
        }
        let n = check_shape(&shape).map_err(|e| TensorError::Encoding(e.to_string()))?;
        let mut data = Vec::with_capacity(n);
        let mut b = [0u8; 4];
        for _ in 0..n {
            r.read_exact(&mut b)?;
            data.push(f32::from_le_bytes(b));
        }
        Tensor::new(&shape, dtype, data)
    }

    /// Fill with uniform values in [-bound, bound), projected to `dtype`.
    pub fn uniform(
        shape: &[usize],
        dtype: DType,
        bound: f32,
        rng: &mut crate::rng::CounterRng,
    ) -> Tensor {
        let n = check_shape(shape).expect("valid shape");
        let data = (0..n).map(|_| store(dtype, rng.next_symmetric(bound))).collect();
        Tensor {
            shape: shape.to_vec(),
            dtype,
            data: Arc::new(data),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    #[test]
    fn bf16e_projection_is_idempotent() {
        let mut rng = CounterRng::new(11);
        for _ in 0..10_000 {
            let x = rng.next_symmetric(1.0e20);
            let once = bf16e_project(x);
            assert_eq!(once.to_bits(), bf16e_project(once).to_bits());
        }
        // Representative exact values survive the projection.
        for x in [0.0f32, -0.0, 1.0, -2.0, 0.5, 256.0] {
            assert_eq!(bf16e_project(x), x);
        }
        assert!(bf16e_project(f32::NAN).is_nan());
        assert_eq!(bf16e_project(f32::INFINITY), f32::INFINITY);
    }

    #[test]
    fn bf16e_tensor_elements_satisfy_projection() {
        let mut rng = CounterRng::new(3);
        let t = Tensor::uniform(&[4, 5], DType::Bf16e, 3.0, &mut rng);
        for &x in t.data() {
            assert_eq!(x.to_bits(), bf16e_project(x).to_bits());
        }
    }

    #[test]
    fn shape_validation() {
        assert!(Tensor::new(&[2, 3], DType::F32, vec![0.0; 6]).is_ok());
        assert!(Tensor::new(&[2, 3], DType::F32, vec![0.0; 5]).is_err());
        assert!(Tensor::new(&[0], DType::F32, vec![]).is_err());
        assert!(Tensor::new(&[1, 1, 1, 1, 1], DType::F32, vec![0.0]).is_err());
    }

    #[test]
    fn serialization_round_trips() {
        let mut rng = CounterRng::new(5);
        for shape in [vec![7], vec![3, 4], vec![2, 3, 4], vec![2, 2, 2, 2]] {
            for dtype in [DType::F32, DType::Bf16e] {
                let t = Tensor::uniform(&shape, dtype, 2.0, &mut rng);
                let mut buf = Vec::new();
                t.write_to(&mut buf).unwrap();
                let back = Tensor::read_from(&mut buf.as_slice()).unwrap();
                assert_eq!(back.shape(), t.shape());
                assert_eq!(back.dtype(), t.dtype());
                assert_eq!(back.data(), t.data());
            }
        }
    }

    #[test]
    fn serialized_header_layout_is_pinned() {
        let t = Tensor::new(&[1, 2], DType::F32, vec![1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(&buf[0..4], b"KDT1");
        assert_eq!(buf[4], 0); // dtype
        assert_eq!(buf[5], 2); // rank
        assert_eq!(&buf[6..10], &1u32.to_le_bytes());
        assert_eq!(&buf[10..14], &2u32.to_le_bytes());
        assert_eq!(&buf[14..18], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 14 + 8);
    }

    #[test]
    fn reshape_shares_buffer() {
        let t = Tensor::new(&[2, 3], DType::F32, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let r = t.reshaped(&[3, 2]).unwrap();
        assert_eq!(r.data().as_ptr(), t.data().as_ptr());
        assert!(t.reshaped(&[4, 2]).is_err());
    }
}
