//! A small CPU tensor engine with explicit backward passes.
//!
//! Layers own their parameters, gradient buffers, and whatever forward
//! activations their backward pass needs. Everything is generic over
//! [`Real`] so training runs in `f32` while gradient checks run in `f64`.

mod batchnorm;
mod conv;
mod linear;
mod lstm;
mod pool;

pub use batchnorm::BatchNorm2d;
pub use conv::Conv2d;
pub use linear::{Linear, Mlp};
pub use lstm::Lstm;
pub use pool::AdaptiveAvgPool2d;

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + Sum + std::ops::AddAssign + 'static
{
    /// Raw strided GEMM: `c = alpha * a * b + beta * c`.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-aliasing matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major `c (m x n) (+)= op(a) (m x k) * op(b) (k x n)`.
///
/// `trans_a` means `a` is stored as `k x m`; `trans_b` means `b` is stored
/// as `n x k`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: bounds asserted above; `c` is a unique borrow.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
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
        )
    }
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub dims: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            dims: dims.to_vec(),
            data: vec![T::zero(); dims.iter().product()],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!("{dims:?} needs {n} values, got {}", data.len())));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data,
        })
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.dims[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(format!("expected NCHW tensor, got {:?}", self.dims))),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.dims[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::shape(format!("expected matrix, got {:?}", self.dims))),
        }
    }

    pub fn row(&self, r: usize) -> &[T] {
        let w = self.dims[1..].iter().product::<usize>();
        &self.data[r * w..(r + 1) * w]
    }

    pub fn scaled(&self, k: T) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| v * k).collect(),
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64().unwrap().powi(2)).sum()
    }
}

/// A trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn zeros(name: impl Into<String>, dims: &[usize]) -> Self {
        let n = dims.iter().product();
        Self {
            name: name.into(),
            dims: dims.to_vec(),
            value: vec![T::zero(); n],
            grad: vec![T::zero(); n],
        }
    }

    pub fn filled(name: impl Into<String>, dims: &[usize], v: T) -> Self {
        let mut p = Self::zeros(name, dims);
        p.value.iter_mut().for_each(|x| *x = v);
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn init_uniform(&mut self, bound: f64, rng: &mut impl Rng) {
        for v in &mut self.value {
            *v = T::lit(rng.random_range(-bound..=bound));
        }
    }
}

/// Non-trainable state saved with a model (batch-norm running statistics).
#[derive(Debug, Clone)]
pub struct Buffer<T> {
    pub name: String,
    pub value: Vec<T>,
}

/// Visitor over parameters and buffers in a fixed order.
pub trait Module<T: Real> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));
    fn visit_buffers_mut(&mut self, _f: &mut dyn FnMut(&str, &mut Vec<T>)) {}
    fn visit_buffers<'a>(&'a self, _f: &mut dyn FnMut(&str, &'a Vec<T>)) {}

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.len());
        n
    }

    fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |p| p.zero_grad());
    }
}

pub(crate) fn relu_inplace<T: Real>(x: &mut [T]) {
    for v in x.iter_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes `grad` wherever the post-ReLU activation is not positive.
pub(crate) fn relu_backward_inplace<T: Real>(grad: &mut [T], activated: &[T]) {
    for (g, a) in grad.iter_mut().zip(activated) {
        if *a <= T::zero() {
            *g = T::zero();
        }
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Orthogonal `n x n` matrix from the QR factorization of a Gaussian matrix,
/// with column signs fixed by `diag(R) > 0`.
pub fn orthogonal(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let g = nalgebra::DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            for i in 0..n {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = q[(i, j)];
        }
    }
    out
}
