//! Float abstraction for the differentiable substrate.
//!
//! Models train in `f32` (the [`Real`] alias). The same generic code
//! instantiates with `f64` in gradient-check tests, where finite differences
//! need more headroom than single precision offers.

use num_traits::Float;

/// Scalar type usable by tensors, layers and the autodiff graph.
pub trait Scalar: Float + Send + Sync + Default + std::fmt::Debug + std::fmt::Display + 'static {
    /// General matrix multiply `C = alpha * A * B + beta * C` with explicit
    /// row/column strides, dispatching to the matching BLAS-style kernel.
    ///
    /// # Safety
    /// Pointers must be valid for the implied index ranges.
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

    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
    fn from_f32(x: f32) -> Self;
    fn as_f32(self) -> f32;
}

impl Scalar for f32 {
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
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        f64::from(self)
    }
    fn from_f32(x: f32) -> Self {
        x
    }
    fn as_f32(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
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
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }

    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn from_f32(x: f32) -> Self {
        f64::from(x)
    }
    fn as_f32(self) -> f32 {
        self as f32
    }
}

/// Precision used by trained models and persisted checkpoints.
pub type Real = f32;

/// Shorthand for converting literals inside generic code.
#[inline]
pub fn c<T: Scalar>(x: f64) -> T {
    T::from_f64(x)
}
