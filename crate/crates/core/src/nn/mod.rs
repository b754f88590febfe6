//! A small deterministic CNN framework: declarative layer graphs, exact
//! backpropagation, He initialization, Adam and finite-difference checks.
//!
//! Activations are NHWC. Everything is generic over [`Real`], so the same
//! graph runs in `f32` for training and in `f64` for gradient checks.

mod adam;
mod gradcheck;
mod graph;
mod ops;
mod params;
mod spec;
mod tensor;

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

pub use adam::{adam_step, AdamHyper, AdamState};
pub use gradcheck::{finite_diff_check, GradCheckReport};
pub use graph::{backward, forward, loss_and_logits, ForwardCache, Graph, Mode};
pub use ops::softmax;
pub use params::{
    he_init, init_params, param_count, read_checkpoint, write_checkpoint, ParamBlock, Params,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use spec::{LayerKind, NetworkSpec, Node, Pathway, ResidualSpec, Shape};
pub use tensor::Tensor;

/// Floating-point element type of activations and parameters.
pub trait Real: Float + Default + Debug + Send + Sync + Sum + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c <- alpha * a * b + beta * c` over strided row/column views.
    ///
    /// # Safety
    /// Every index reachable through the dimensions and strides must lie in
    /// the corresponding buffer.
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
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

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
    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

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

/// Row/column strides of a matrix view.
#[derive(Debug, Clone, Copy)]
pub(crate) struct View {
    pub rs: usize,
    pub cs: usize,
}

impl View {
    pub fn row_major(cols: usize) -> Self {
        View { rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn transposed(cols: usize) -> Self {
        View { rs: 1, cs: cols }
    }

    fn max_index(self, rows: usize, cols: usize) -> usize {
        (rows - 1) * self.rs + (cols - 1) * self.cs
    }
}

/// Safe front end to [`Real::gemm_raw`]: `c (m x n) = alpha a (m x k) b (k x n) + beta c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    av: View,
    b: &[T],
    bv: View,
    beta: T,
    c: &mut [T],
    cv: View,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        // nothing to multiply; only the beta scaling remains
        for i in 0..m {
            for j in 0..n {
                let idx = i * cv.rs + j * cv.cs;
                c[idx] = if beta == T::zero() { T::zero() } else { beta * c[idx] };
            }
        }
        return;
    }
    assert!(av.max_index(m, k) < a.len(), "gemm: A out of bounds");
    assert!(bv.max_index(k, n) < b.len(), "gemm: B out of bounds");
    assert!(cv.max_index(m, n) < c.len(), "gemm: C out of bounds");
    // SAFETY: the asserts above bound every reachable index.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr(),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr(),
            cv.rs as isize,
            cv.cs as isize,
        )
    }
}
