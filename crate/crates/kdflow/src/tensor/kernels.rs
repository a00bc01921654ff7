//! Scalar compute kernels shared by every code path that must agree bitwise.
//!
//! Accumulation order contract: every reduction visits elements row-major,
//! left to right. Matmul accumulates over k in ascending order per output
//! element (the i/k/j loop nest below preserves exactly that order while
//! staying cache-friendly). No fused multiply-add anywhere.

use super::{store, DType, Result, Tensor, TensorError};

/// `a [M,K] x b [K,N] -> [M,N]`. Accumulates in f32; Bf16e projects the
/// final store only.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(TensorError::ShapeMismatch {
            context: "matmul expects rank-2 operands",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    if a.shape()[1] != b.shape()[0] {
        return Err(TensorError::ShapeMismatch {
            context: "matmul inner dimension",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    if a.dtype() != b.dtype() {
        return Err(TensorError::DTypeMismatch(a.dtype(), b.dtype()));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let ad = a.data();
    let out = matmul_raw(|flat| ad[flat], m, k, n, b.data(), a.dtype());
    Tensor::new(&[m, n], a.dtype(), out)
}

/// Matmul with the left operand read through `a_at` (flat row-major index).
/// Lets zero-copy transport views feed the same arithmetic sequence as an
/// in-memory tensor, so both paths produce identical bits.
pub fn lm_head_matmul_src(
    a_at: impl Fn(usize) -> f32,
    rows: usize,
    inner: usize,
    head: &Tensor,
    dtype: DType,
) -> Result<Tensor> {
    if head.rank() != 2 || head.shape()[0] != inner {
        return Err(TensorError::ShapeMismatch {
            context: "lm head inner dimension",
            lhs: vec![rows, inner],
            rhs: head.shape().to_vec(),
        });
    }
    if head.dtype() != dtype {
        return Err(TensorError::DTypeMismatch(dtype, head.dtype()));
    }
    let n = head.shape()[1];
    let out = matmul_raw(a_at, rows, inner, n, head.data(), dtype);
    Tensor::new(&[rows, n], dtype, out)
}

/// Hidden states `[.., d]` (any leading shape) times head `[d, V]`, flattened
/// to rows. Returns `[rows, V]`; callers reshape back.
pub fn lm_head_matmul(hidden: &Tensor, head: &Tensor) -> Result<Tensor> {
    let d = *hidden.shape().last().expect("nonempty shape");
    let rows = hidden.len() / d;
    let hd = hidden.data();
    lm_head_matmul_src(|flat| hd[flat], rows, d, head, hidden.dtype())
}

fn matmul_raw(
    a_at: impl Fn(usize) -> f32,
    m: usize,
    k: usize,
    n: usize,
    b: &[f32],
    dtype: DType,
) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for kk in 0..k {
            let aik = a_at(i * k + kk);
            let brow = &b[kk * n..(kk + 1) * n];
            for (c, &bv) in row.iter_mut().zip(brow) {
                *c += aik * bv;
            }
        }
    }
    if dtype == DType::Bf16e {
        for x in &mut out {
            *x = store(dtype, *x);
        }
    }
    out
}

/// Numerically stable softmax over the last dimension with temperature.
/// Rejects non-finite inputs and temperatures <= 0.
pub fn softmax(z: &Tensor, temperature: f32) -> Result<Tensor> {
    if !(temperature > 0.0) {
        return Err(TensorError::Contract(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    if !z.all_finite() {
        return Err(TensorError::NonFinite("softmax input"));
    }
    let v = *z.shape().last().expect("nonempty shape");
    let mut out = z.data().to_vec();
    for row in out.chunks_mut(v) {
        softmax_row(row, temperature);
    }
    if z.dtype() == DType::Bf16e {
        for x in &mut out {
            *x = store(DType::Bf16e, *x);
        }
    }
    Tensor::new(z.shape(), z.dtype(), out)
}

/// In-place f32 softmax of one row. Scale by 1/T, subtract the max,
/// exponentiate, normalize — in that order, left to right.
pub fn softmax_in_place(row: &mut [f32], temperature: f32) {
    softmax_row(row, temperature);
}

fn softmax_row(row: &mut [f32], temperature: f32) {
    for x in row.iter_mut() {
        *x /= temperature;
    }
    let mut max = f32::NEG_INFINITY;
    for &x in row.iter() {
        if x > max {
            max = x;
        }
    }
    let mut sum = 0.0f32;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// RMS normalization over the last dimension with a learned gain.
/// `y = x / sqrt(mean(x^2) + eps) * gain`.
pub const RMSNORM_EPS: f32 = 1e-6;

pub fn rmsnorm(x: &Tensor, gain: &Tensor) -> Result<Tensor> {
    let d = *x.shape().last().expect("nonempty shape");
    if gain.rank() != 1 || gain.shape()[0] != d {
        return Err(TensorError::ShapeMismatch {
            context: "rmsnorm gain",
            lhs: x.shape().to_vec(),
            rhs: gain.shape().to_vec(),
        });
    }
    if x.dtype() != gain.dtype() {
        return Err(TensorError::DTypeMismatch(x.dtype(), gain.dtype()));
    }
    let g = gain.data();
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(d) {
        let mut ss = 0.0f32;
        for &v in row {
            ss += v * v;
        }
        let inv = 1.0 / (ss / d as f32 + RMSNORM_EPS).sqrt();
        for (j, &v) in row.iter().enumerate() {
            out.push(store(x.dtype(), v * inv * g[j]));
        }
    }
    Tensor::new(x.shape(), x.dtype(), out)
}

/// GELU, tanh approximation. Used as the MLP activation.
#[inline]
pub fn gelu_scalar(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

/// d/dx of `gelu_scalar`.
#[inline]
pub fn gelu_grad_scalar(x: f32) -> f32 {
    const C: f32 = 0.797_884_6;
    let u = C * (x + 0.044_715 * x * x * x);
    let t = u.tanh();
    let du = C * (1.0 + 3.0 * 0.044_715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}
