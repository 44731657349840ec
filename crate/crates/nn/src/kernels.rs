//! Strided float64 GEMM. Large products go to `matrixmultiply`; tiny ones
//! (attention heads) use a plain loop, which avoids packing overhead.

const SMALL_GEMM: usize = 4096;

#[derive(Clone, Copy, Debug)]
pub struct Layout {
    pub row_stride: usize,
    pub col_stride: usize,
}

impl Layout {
    pub const fn row_major(cols: usize) -> Self {
        Self { row_stride: cols, col_stride: 1 }
    }

    /// Row-major storage of a `cols × rows` matrix read as its transpose.
    pub const fn transposed(stored_cols: usize) -> Self {
        Self { row_stride: 1, col_stride: stored_cols }
    }

    fn extent(&self, rows: usize, cols: usize) -> usize {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * self.row_stride + (cols - 1) * self.col_stride + 1
        }
    }
}

/// `C ← A·B` (or `C ← C + A·B` when `accumulate`), `A` is `m × k`, `B` is
/// `k × n`, `C` is contiguous row-major `m × n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    la: Layout,
    b: &[f64],
    lb: Layout,
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= la.extent(m, k), "gemm: A too short");
    assert!(b.len() >= lb.extent(k, n), "gemm: B too short");
    assert!(c.len() >= m * n, "gemm: C too short");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    if m * n * k <= SMALL_GEMM {
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * la.row_stride + p * la.col_stride] * b[p * lb.row_stride + j * lb.col_stride];
                }
                let cij = &mut c[i * n + j];
                *cij = if accumulate { *cij + s } else { s };
            }
        }
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index dgemm touches for the
    // given dimensions and strides; `c` does not alias `a` or `b` because it
    // is borrowed mutably.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            la.row_stride as isize,
            la.col_stride as isize,
            b.as_ptr(),
            lb.row_stride as isize,
            lb.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
