//! Dense kernels shared by the differentiable ops: strided GEMM and the
//! im2col / col2im lowering used by convolutions.

/// Row-major matrix view with arbitrary strides.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f32],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f32], cols: usize) -> Self {
        Self { data, rs: cols, cs: 1 }
    }

    pub fn transposed(data: &'a [f32], cols_of_stored: usize) -> Self {
        Self { data, rs: 1, cs: cols_of_stored }
    }

    fn check(&self, rows: usize, cols: usize) {
        if rows > 0 && cols > 0 {
            let last = (rows - 1) * self.rs + (cols - 1) * self.cs;
            assert!(last < self.data.len(), "gemm operand out of bounds");
        }
    }
}

/// `c = alpha * a(m×k) * b(k×n) + beta * c`, with `c` row-major of width `n`.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f32,
    a: MatRef<'_>,
    b: MatRef<'_>,
    beta: f32,
    c: &mut [f32],
) {
    if m == 0 || n == 0 {
        return;
    }
    a.check(m, k);
    b.check(k, n);
    assert!(c.len() >= m * n, "gemm output too small");
    if k == 0 {
        for v in c[..m * n].iter_mut() {
            *v *= beta;
        }
        return;
    }
    // SAFETY: operand extents were checked above against the slice lengths.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a 2-D convolution window over one `C×H×W` plane stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(channels: usize, height: usize, width: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        assert!(
            height + 2 * pad >= kernel && width + 2 * pad >= kernel,
            "kernel {kernel} larger than padded input {height}x{width}"
        );
        Self {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            out_h: (height + 2 * pad - kernel) / stride + 1,
            out_w: (width + 2 * pad - kernel) / stride + 1,
        }
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// 1×1 kernel, unit stride and no padding: the column matrix is the input itself.
    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output columns `[lo, hi)` whose input column `ox * stride + kj - pad` is in bounds.
fn valid_cols(g: &ConvGeom, kj: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kj).div_ceil(g.stride);
    let hi = if g.width + g.pad > kj { ((g.width + g.pad - kj - 1) / g.stride + 1).min(g.out_w) } else { 0 };
    (lo.min(hi), hi)
}

pub(crate) fn im2col(x: &[f32], g: &ConvGeom, col: &mut [f32]) {
    let cols = g.col_cols();
    debug_assert_eq!(col.len(), g.col_rows() * cols);
    let plane = g.height * g.width;
    for ci in 0..g.channels {
        let src = &x[ci * plane..(ci + 1) * plane];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (ci * g.kernel + ki) * g.kernel + kj;
                let dst = &mut col[row * cols..(row + 1) * cols];
                let (lo, hi) = valid_cols(g, kj);
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src_row = &src[iy as usize * g.width..(iy as usize + 1) * g.width];
                    out_row[..lo].fill(0.0);
                    out_row[hi..].fill(0.0);
                    let base = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        out_row[lo..hi].copy_from_slice(&src_row[base..base + (hi - lo)]);
                    } else {
                        for (i, o) in out_row[lo..hi].iter_mut().enumerate() {
                            *o = src_row[base + i * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column matrix back onto the input planes (adjoint of [`im2col`]).
pub(crate) fn col2im(col: &[f32], g: &ConvGeom, x: &mut [f32]) {
    let cols = g.col_cols();
    let plane = g.height * g.width;
    for ci in 0..g.channels {
        let dst = &mut x[ci * plane..(ci + 1) * plane];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (ci * g.kernel + ki) * g.kernel + kj;
                let src = &col[row * cols..(row + 1) * cols];
                let (lo, hi) = valid_cols(g, kj);
                if lo >= hi {
                    continue;
                }
                let base = lo * g.stride + kj - g.pad;
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let src_row = &src[oy * g.out_w + lo..oy * g.out_w + hi];
                    if g.stride == 1 {
                        for (d, &v) in dst_row[base..base + (hi - lo)].iter_mut().zip(src_row) {
                            *d += v;
                        }
                    } else {
                        for (i, &v) in src_row.iter().enumerate() {
                            dst_row[base + i * g.stride] += v;
                        }
                    }
                }
            }
        }
    }
}
