//! Element type abstraction and strided matrix products.
//!
//! Training runs in `f32`; gradient checks run the identical code in `f64`.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Send + Sync + 'static
{
    /// # Safety
    /// Pointers and strides must describe matrices inside live allocations;
    /// `c` must not alias `a` or `b`.
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

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("finite constant")
    }
}

impl Scalar for f32 {
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
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
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
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Read-only strided view of a `rows × cols` matrix.
#[derive(Clone, Copy)]
pub struct MatRef<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, T> MatRef<'a, T> {
    /// Row-major matrix whose rows are `stride` elements apart.
    pub fn rows(data: &'a [T], rows: usize, cols: usize, stride: usize) -> Self {
        let m = Self {
            data,
            rows,
            cols,
            rs: stride,
            cs: 1,
        };
        m.check();
        m
    }

    pub fn dense(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self::rows(data, rows, cols, cols)
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view exceeds its buffer");
        }
    }
}

/// Mutable row-major strided view.
pub struct MatMut<'a, T> {
    data: &'a mut [T],
    rows: usize,
    cols: usize,
    rs: usize,
}

impl<'a, T> MatMut<'a, T> {
    pub fn rows(data: &'a mut [T], rows: usize, cols: usize, stride: usize) -> Self {
        if rows > 0 && cols > 0 {
            assert!((rows - 1) * stride + cols <= data.len(), "matrix view exceeds its buffer");
        }
        Self { data, rows, cols, rs: stride }
    }

    pub fn dense(data: &'a mut [T], rows: usize, cols: usize) -> Self {
        Self::rows(data, rows, cols, cols)
    }
}

/// `c ← alpha · a · b + beta · c`.
pub fn gemm<T: Scalar>(alpha: T, a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, c: MatMut<'_, T>) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    assert_eq!((a.rows, b.cols), (c.rows, c.cols), "output shape differs");
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    if a.cols == 0 {
        for r in 0..c.rows {
            for v in &mut c.data[r * c.rs..r * c.rs + c.cols] {
                *v = *v * beta;
            }
        }
        return;
    }
    // SAFETY: every view was bounds-checked on construction and `c` is a
    // unique borrow, so it cannot alias the shared inputs.
    unsafe {
        T::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr(),
            c.rs as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matches_naive_product_and_transposes() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut c = vec![0.0; m * n];
        gemm(1.0, MatRef::dense(&a, m, k), MatRef::dense(&b, k, n), 0.0, MatMut::dense(&mut c, m, n));
        let expect = naive(&a, &b, m, k, n);
        for (x, y) in c.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
        // (Aᵀ)ᵀ through a transposed copy
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut c2 = vec![1.0; m * n];
        gemm(1.0, MatRef::dense(&at, k, m).t(), MatRef::dense(&b, k, n), 0.0, MatMut::dense(&mut c2, m, n));
        assert_eq!(c, c2);
    }

    proptest::proptest! {
        #[test]
        fn accumulating_gemm_matches_naive(
            m in 1usize..9, k in 1usize..9, n in 1usize..9,
            alpha in -2.0f64..2.0, beta in -2.0f64..2.0, seed in 0u64..1000,
        ) {
            let val = |i: usize, s: f64| ((i as f64 + seed as f64) * s).sin();
            let a: Vec<f64> = (0..m * k).map(|i| val(i, 0.37)).collect();
            let b: Vec<f64> = (0..k * n).map(|i| val(i, 0.11)).collect();
            let c0: Vec<f64> = (0..m * n).map(|i| val(i, 0.53)).collect();
            let mut c = c0.clone();
            gemm(alpha, MatRef::dense(&a, m, k), MatRef::dense(&b, k, n), beta, MatMut::dense(&mut c, m, n));
            for ((got, ab), old) in c.iter().zip(naive(&a, &b, m, k, n)).zip(&c0) {
                proptest::prop_assert!((got - (alpha * ab + beta * old)).abs() < 1e-10);
            }
        }
    }

    #[test]
    #[should_panic(expected = "exceeds")]
    fn out_of_bounds_view_panics() {
        let a = vec![0.0f32; 5];
        let _ = MatRef::dense(&a, 2, 3);
    }
}
