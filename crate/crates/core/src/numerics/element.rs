use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar type a [`Tensor`](super::Tensor) can hold.
///
/// `f32` is the training precision; `f64` exists for finite-difference
/// gradient checks, which are unreliable at single precision.
pub trait Element:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    const NAME: &'static str;

    /// Raw strided GEMM: `C = alpha * A * B + beta * C`.
    ///
    /// # Safety
    /// Pointers and strides must address valid memory for the given sizes.
    #[allow(clippy::too_many_arguments)]
    unsafe fn raw_gemm(
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

    fn erf(self) -> Self;

    #[inline]
    fn from_f64_lossy(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite cast")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite cast")
    }
}

impl Element for f32 {
    const NAME: &'static str = "f32";

    unsafe fn raw_gemm(
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

    fn erf(self) -> f32 {
        libm::erff(self)
    }
}

impl Element for f64 {
    const NAME: &'static str = "f64";

    unsafe fn raw_gemm(
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

    fn erf(self) -> f64 {
        libm::erf(self)
    }
}

/// Row-major GEMM on slices with BLAS-style transposes and leading dimensions.
///
/// `op(A)` is `m x k`, `op(B)` is `k x n`, `C` is `m x n` with row stride `ldc`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<E: Element>(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    n: usize,
    k: usize,
    alpha: E,
    a: &[E],
    lda: usize,
    b: &[E],
    ldb: usize,
    beta: E,
    c: &mut [E],
    ldc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    // Extents actually touched, checked up front so the unsafe call is sound.
    let a_need = if k == 0 {
        0
    } else if trans_a {
        (k - 1) * lda + m
    } else {
        (m - 1) * lda + k
    };
    let b_need = if k == 0 {
        0
    } else if trans_b {
        (n - 1) * ldb + k
    } else {
        (k - 1) * ldb + n
    };
    assert!(a.len() >= a_need, "gemm: A too short ({} < {})", a.len(), a_need);
    assert!(b.len() >= b_need, "gemm: B too short ({} < {})", b.len(), b_need);
    assert!(c.len() >= (m - 1) * ldc + n, "gemm: C too short");
    if k == 0 {
        for i in 0..m {
            for v in &mut c[i * ldc..i * ldc + n] {
                *v = if beta == E::zero() { E::zero() } else { *v * beta };
            }
        }
        return;
    }
    // Packing dominates for vector-matrix products (recurrent steps).
    if m <= SMALL_M {
        small_gemm(trans_a, trans_b, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
        return;
    }
    let (rsa, csa) = if trans_a { (1, lda as isize) } else { (lda as isize, 1) };
    let (rsb, csb) = if trans_b { (1, ldb as isize) } else { (ldb as isize, 1) };
    // SAFETY: extents verified above.
    unsafe {
        E::raw_gemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

const SMALL_M: usize = 4;

#[allow(clippy::too_many_arguments)]
fn small_gemm<E: Element>(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    n: usize,
    k: usize,
    alpha: E,
    a: &[E],
    lda: usize,
    b: &[E],
    ldb: usize,
    beta: E,
    c: &mut [E],
    ldc: usize,
) {
    let a_at = |i: usize, p: usize| if trans_a { a[p * lda + i] } else { a[i * lda + p] };
    for i in 0..m {
        let row = &mut c[i * ldc..i * ldc + n];
        if beta == E::zero() {
            row.iter_mut().for_each(|v| *v = E::zero());
        } else if beta != E::one() {
            row.iter_mut().for_each(|v| *v = *v * beta);
        }
        if trans_b {
            for (j, v) in row.iter_mut().enumerate() {
                let bj = &b[j * ldb..j * ldb + k];
                let mut acc = E::zero();
                for (p, &bv) in bj.iter().enumerate() {
                    acc += a_at(i, p) * bv;
                }
                *v += alpha * acc;
            }
        } else {
            for p in 0..k {
                let s = alpha * a_at(i, p);
                for (v, &bv) in row.iter_mut().zip(&b[p * ldb..p * ldb + n]) {
                    *v += s * bv;
                }
            }
        }
    }
}
