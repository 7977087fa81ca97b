//! Float abstraction over the `matrixmultiply` kernels.

use num_traits::Float;

/// Element type of the network: `f32` for training, `f64` for gradient checks.
pub trait Scalar: Float + Default + Send + Sync + std::fmt::Debug + std::iter::Sum + 'static {
    /// # Safety
    /// All strided accesses of the three operands must be in bounds.
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

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `exp` used by the gate activations.
    #[inline]
    fn act_exp(self) -> Self {
        self.exp()
    }
}

impl Scalar for f32 {
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
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn from_f64(v: f64) -> f32 {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    /// Branch-free `exp` (range reduction plus a degree-7 polynomial, within
    /// a few ulp of `f32::exp` over the clamped range) so activation loops
    /// vectorize instead of calling libm per element.
    #[inline]
    fn act_exp(self) -> f32 {
        const ROUND: f32 = 12_582_912.0;
        let x = self.clamp(-87.0, 88.0);
        let n = (x * std::f32::consts::LOG2_E + ROUND) - ROUND;
        let r = x - n * 0.693_145_75 - n * 1.428_606_8e-6;
        let mut p = 1.0 / 5040.0;
        p = p * r + 1.0 / 720.0;
        p = p * r + 1.0 / 120.0;
        p = p * r + 1.0 / 24.0;
        p = p * r + 1.0 / 6.0;
        p = p * r + 0.5;
        p = p * r + 1.0;
        p = p * r + 1.0;
        p * f32::from_bits(((n as i32 + 127) as u32) << 23)
    }
}

impl Scalar for f64 {
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
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    fn from_f64(v: f64) -> f64 {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}

/// Strided matrix view: element `(i, j)` lives at `off + i * rs + j * cs`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct View {
    pub off: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    /// Row-major matrix with `width` columns starting at `off`.
    pub fn rows(off: usize, width: usize) -> Self {
        View { off, rs: width, cs: 1 }
    }

    /// Transpose of a row-major matrix with `width` columns.
    pub fn transposed(off: usize, width: usize) -> Self {
        View { off, rs: 1, cs: width }
    }

    fn last(&self, r: usize, c: usize) -> usize {
        self.off + r.saturating_sub(1) * self.rs + c.saturating_sub(1) * self.cs
    }
}

/// `C = alpha * A B + beta * C` with A `m x k`, B `k x n`, C `m x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    alpha: S,
    a: &[S],
    av: View,
    b: &[S],
    bv: View,
    beta: S,
    c: &mut [S],
    cv: View,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || av.last(m, k) < a.len(), "gemm: A out of bounds");
    assert!(k == 0 || bv.last(k, n) < b.len(), "gemm: B out of bounds");
    assert!(cv.last(m, n) < c.len(), "gemm: C out of bounds");
    // SAFETY: bounds of every strided operand checked above.
    unsafe {
        S::raw_gemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(av.off),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr().add(bv.off),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr().add(cv.off),
            cv.rs as isize,
            cv.cs as isize,
        )
    }
}

#[inline]
pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).act_exp())
}

/// `tanh(x) = 2 sigmoid(2x) - 1`.
#[inline]
pub(crate) fn tanh<S: Scalar>(x: S) -> S {
    let two = S::one() + S::one();
    two * sigmoid(two * x) - S::one()
}

pub(crate) fn sigmoid_slice<S: Scalar>(v: &mut [S]) {
    for x in v {
        *x = sigmoid(*x);
    }
}

pub(crate) fn tanh_slice<S: Scalar>(v: &mut [S]) {
    for x in v {
        *x = tanh(*x);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strided_gemm_matches_naive() {
        // A is 2x3 row-major, B^T stored as 4x3 row-major
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect();
        let bt: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5 - 2.0).collect();
        let mut c = vec![1.0; 8];
        gemm(2, 3, 4, 1.0, &a, View::rows(0, 3), &bt, View::transposed(0, 3), 2.0, &mut c, View::rows(0, 4));
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|p| a[i * 3 + p] * bt[j * 3 + p]).sum::<f64>() + 2.0;
                assert!((c[i * 4 + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fast_exp_matches_std() {
        let mut worst = 0f32;
        for k in -8700..=8800 {
            let x = k as f32 * 0.01;
            let (a, b) = (x.act_exp(), x.exp());
            worst = worst.max((a - b).abs() / b);
        }
        assert!(worst < 4e-7, "{worst}");
        assert_eq!(0f32.act_exp(), 1.0);
        assert!((-200f32).act_exp() > 0.0 && (200f32).act_exp().is_finite());
    }

    #[test]
    fn activations_match_std() {
        for k in -300..=300 {
            let x = k as f64 * 0.05;
            assert!((tanh(x) - x.tanh()).abs() < 1e-15);
            assert!((tanh(x as f32) - (x as f32).tanh()).abs() < 3e-7);
            assert!((sigmoid(x as f32) as f64 - 1.0 / (1.0 + (-x).exp())).abs() < 2e-7);
        }
    }

    #[test]
    #[should_panic(expected = "out of bounds")]
    fn gemm_checks_bounds() {
        let a = vec![0f32; 5];
        let mut c = vec![0f32; 4];
        gemm(2, 3, 2, 1.0, &a, View::rows(0, 3), &a, View::rows(0, 2), 0.0, &mut c, View::rows(0, 2));
    }
}
