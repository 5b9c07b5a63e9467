//! Element type and the handful of transcendental functions the crate needs.
//!
//! `Scalar` is `f64` unless the `f32` feature is enabled.

#[cfg(not(feature = "f32"))]
pub type Scalar = f64;
#[cfg(feature = "f32")]
pub type Scalar = f32;

/// `true` when the build uses 64-bit elements.
pub const IS_F64: bool = cfg!(not(feature = "f32"));

#[cfg(not(feature = "f32"))]
mod imp {
    use super::Scalar;

    #[inline]
    pub fn exp(x: Scalar) -> Scalar {
        libm::exp(x)
    }
    #[inline]
    pub fn ln(x: Scalar) -> Scalar {
        libm::log(x)
    }
    #[inline]
    pub fn sqrt(x: Scalar) -> Scalar {
        libm::sqrt(x)
    }

    /// `c <- alpha * a * b + beta * c` with explicit row/column strides.
    ///
    /// # Safety
    /// Strides and extents must stay inside the given slices; callers in
    /// this crate go through [`super::gemm`], which checks that.
    #[inline]
    #[allow(clippy::too_many_arguments)]
    pub unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Scalar,
        a: *const Scalar,
        rsa: isize,
        csa: isize,
        b: *const Scalar,
        rsb: isize,
        csb: isize,
        beta: Scalar,
        c: *mut Scalar,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

#[cfg(feature = "f32")]
mod imp {
    use super::Scalar;

    #[inline]
    pub fn exp(x: Scalar) -> Scalar {
        libm::expf(x)
    }
    #[inline]
    pub fn ln(x: Scalar) -> Scalar {
        libm::logf(x)
    }
    #[inline]
    pub fn sqrt(x: Scalar) -> Scalar {
        libm::sqrtf(x)
    }

    #[inline]
    #[allow(clippy::too_many_arguments)]
    pub unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Scalar,
        a: *const Scalar,
        rsa: isize,
        csa: isize,
        b: *const Scalar,
        rsb: isize,
        csb: isize,
        beta: Scalar,
        c: *mut Scalar,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

pub use imp::{exp, ln, sqrt};

/// A strided, read-only matrix view over a slice.
#[derive(Clone, Copy)]
pub struct MatRef<'a> {
    pub data: &'a [Scalar],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> MatRef<'a> {
    /// Row-major `rows x cols` matrix.
    pub fn row_major(data: &'a [Scalar], rows: usize, cols: usize) -> Self {
        MatRef {
            data,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// The transpose of a row-major `rows x cols` matrix, seen as `cols x rows`.
    pub fn transposed(data: &'a [Scalar], rows: usize, cols: usize) -> Self {
        MatRef {
            data,
            rows: cols,
            cols: rows,
            row_stride: 1,
            col_stride: cols,
        }
    }

    fn fits(&self) -> bool {
        self.rows == 0
            || self.cols == 0
            || (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride
                < self.data.len()
    }
}

/// `out (row-major, m x n) <- alpha * a * b + beta * out`.
///
/// Summation order is fixed by the matrix extents, so the result is
/// bitwise reproducible for identical inputs.
pub fn gemm(alpha: Scalar, a: MatRef<'_>, b: MatRef<'_>, beta: Scalar, out: &mut [Scalar]) {
    assert_eq!(a.cols, b.rows, "gemm: inner dimensions differ");
    assert!(a.fits() && b.fits(), "gemm: operand view out of bounds");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(out.len() >= m * n, "gemm: output too small");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: every index touched is bounded by the `fits` checks above and
    // the output length assertion.
    unsafe {
        imp::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_loops() {
        let a: alloc::vec::Vec<Scalar> = (0..6).map(|v| v as Scalar).collect(); // 2x3
        let b: alloc::vec::Vec<Scalar> = (0..12).map(|v| (v as Scalar) * 0.5).collect(); // 3x4
        let mut out = [0.0; 8];
        gemm(
            1.0,
            MatRef::row_major(&a, 2, 3),
            MatRef::row_major(&b, 3, 4),
            0.0,
            &mut out,
        );
        for i in 0..2 {
            for j in 0..4 {
                let want: Scalar = (0..3).map(|p| a[i * 3 + p] * b[p * 4 + j]).sum();
                assert_eq!(out[i * 4 + j], want);
            }
        }
        // a^T (3x2) * a (2x3)
        let mut out = [0.0; 9];
        gemm(
            1.0,
            MatRef::transposed(&a, 2, 3),
            MatRef::row_major(&a, 2, 3),
            0.0,
            &mut out,
        );
        assert_eq!(out[0], 9.0);
        assert_eq!(out[4], 1.0 + 16.0);
    }
}
