//! Dense tensors and a reverse-mode tape, sized for the routing policy.
//!
//! Values are stored row-major. Reductions over sets (attention weights,
//! normalization statistics, dot products) accumulate in `f64` regardless of
//! the storage precision, which keeps results independent of row order.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{gradient_check, GradCheckReport};
pub use tape::{BatchStats, Gradients, NormMode, Tape, Var};
pub use tensor::Tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Storage precision of a tensor.
pub trait Scalar:
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
    + 'static
{
    /// Value written into masked logits.
    const MASKED: Self;
    const NAME: &'static str;

    /// `c = alpha * a * b + beta * c` for an `m x k` by `k x n` product with
    /// arbitrary strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("representable")
    }
}

fn check_extent(len: usize, m: usize, n: usize, rs: isize, cs: isize) {
    if m == 0 || n == 0 {
        return;
    }
    let last = (m as isize - 1) * rs + (n as isize - 1) * cs;
    assert!(rs >= 0 && cs >= 0 && (last as usize) < len, "gemm operand out of bounds");
}

impl Scalar for f32 {
    const MASKED: f32 = -1e30;
    const NAME: &'static str = "f32";

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f32],
        rsa: isize,
        csa: isize,
        b: &[f32],
        rsb: isize,
        csb: isize,
        beta: f32,
        c: &mut [f32],
        rsc: isize,
        csc: isize,
    ) {
        check_extent(a.len(), m, k, rsa, csa);
        check_extent(b.len(), k, n, rsb, csb);
        check_extent(c.len(), m, n, rsc, csc);
        // SAFETY: extents checked above.
        unsafe {
            matrixmultiply::sgemm(
                m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), rsc, csc,
            );
        }
    }
}

impl Scalar for f64 {
    const MASKED: f64 = f64::NEG_INFINITY;
    const NAME: &'static str = "f64";

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[f64],
        rsa: isize,
        csa: isize,
        b: &[f64],
        rsb: isize,
        csb: isize,
        beta: f64,
        c: &mut [f64],
        rsc: isize,
        csc: isize,
    ) {
        check_extent(a.len(), m, k, rsa, csa);
        check_extent(b.len(), k, n, rsb, csb);
        check_extent(c.len(), m, n, rsc, csc);
        // SAFETY: extents checked above.
        unsafe {
            matrixmultiply::dgemm(
                m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), rsc, csc,
            );
        }
    }
}

/// Softmax of one row where `false` entries of `mask` (or `-inf` values)
/// receive probability zero. Returns `None` when nothing is selectable.
pub fn masked_softmax_row<T: Scalar>(values: &[T], mask: Option<&[bool]>) -> Option<Vec<f64>> {
    let open = |j: usize| mask.is_none_or(|m| m[j]) && values[j].f64() != f64::NEG_INFINITY;
    let max = (0..values.len())
        .filter(|&j| open(j))
        .map(|j| values[j].f64())
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let mut out: Vec<f64> = (0..values.len())
        .map(|j| if open(j) { (values[j].f64() - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    Some(out)
}
