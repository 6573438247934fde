//! Minimal dense/convolutional network toolkit with explicit backward passes.
//!
//! Convolutional activations are laid out channel-major as `[C, N, H, W]` so a
//! whole batch lowers to one GEMM per layer. Dense activations are `[N, F]`.
//! Everything is generic over [`Real`] so the same networks run in `f32` for
//! training and in `f64` for finite-difference gradient checks.

mod layers;
mod optim;

pub use layers::{Conv2d, ConvTranspose2d, Layer, Linear, Sequential, Trace};
pub use optim::{Adam, AdamConfig};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

/// Floating point scalar usable by the network code.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    /// `c = op(a) * op(b) + beta * c` on row-major buffers, where `op(a)` is
    /// `m x k` and `op(b)` is `k x n`. A transposed operand is stored with its
    /// dimensions swapped.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_trans: bool,
        b: &[Self],
        b_trans: bool,
        c: &mut [Self],
        beta: Self,
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }
}

fn strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    // element (i, j) of op(x); x stored rows x cols (or cols x rows if trans)
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_real {
    ($t:ty, $f:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_trans: bool,
                b: &[Self],
                b_trans: bool,
                c: &mut [Self],
                beta: Self,
            ) {
                assert!(a.len() >= m * k, "gemm: lhs too short");
                assert!(b.len() >= k * n, "gemm: rhs too short");
                assert!(c.len() >= m * n, "gemm: output too short");
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = strides(m, k, a_trans);
                let (rsb, csb) = strides(k, n, b_trans);
                // SAFETY: bounds asserted above; strides describe the buffers.
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Dense buffer with an explicit shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Self {
        assert_eq!(
            dims.iter().product::<usize>(),
            data.len(),
            "tensor shape {dims:?} does not match buffer length"
        );
        Self { dims, data }
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Self {
            dims,
            data: vec![T::zero(); len],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, dims: Vec<usize>) -> Self {
        assert_eq!(dims.iter().product::<usize>(), self.data.len());
        self.dims = dims;
        self
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }
}

/// `[N, F]` matrix helpers for splitting and joining feature columns.
pub fn split_columns<T: Real>(x: &Tensor<T>, widths: &[usize]) -> Vec<Tensor<T>> {
    let (n, f) = (x.dims[0], x.dims[1]);
    assert_eq!(widths.iter().sum::<usize>(), f, "column split mismatch");
    let mut out: Vec<Vec<T>> = widths.iter().map(|w| Vec::with_capacity(n * w)).collect();
    for row in x.data.chunks_exact(f) {
        let mut off = 0;
        for (buf, &w) in out.iter_mut().zip(widths) {
            buf.extend_from_slice(&row[off..off + w]);
            off += w;
        }
    }
    out.into_iter()
        .zip(widths)
        .map(|(d, &w)| Tensor::new(vec![n, w], d))
        .collect()
}

pub fn concat_columns<T: Real>(parts: &[&Tensor<T>]) -> Tensor<T> {
    let n = parts[0].dims[0];
    let widths: Vec<usize> = parts
        .iter()
        .map(|p| {
            assert_eq!(p.dims[0], n, "row count mismatch in concat");
            p.dims[1]
        })
        .collect();
    let f: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(n * f);
    for i in 0..n {
        for (p, &w) in parts.iter().zip(&widths) {
            data.extend_from_slice(&p.data[i * w..(i + 1) * w]);
        }
    }
    Tensor::new(vec![n, f], data)
}

/// Convert `[N, C, H, W]` (sample-major) into the channel-major layout used by
/// the convolution layers.
pub fn nchw_to_cnhw<T: Real>(data: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); data.len()];
    for ni in 0..n {
        for ci in 0..c {
            let src = (ni * c + ci) * hw;
            let dst = (ci * n + ni) * hw;
            out[dst..dst + hw].copy_from_slice(&data[src..src + hw]);
        }
    }
    out
}

pub fn cnhw_to_nchw<T: Real>(data: &[T], n: usize, c: usize, hw: usize) -> Vec<T> {
    let mut out = vec![T::zero(); data.len()];
    for ci in 0..c {
        for ni in 0..n {
            let src = (ci * n + ni) * hw;
            let dst = (ni * c + ci) * hw;
            out[dst..dst + hw].copy_from_slice(&data[src..src + hw]);
        }
    }
    out
}
