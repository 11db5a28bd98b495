//! Low-level dense kernels. Matrix products go through `matrixmultiply`;
//! convolutions are lowered onto them with im2col/col2im.

/// Row-major view of a matrix with explicit strides, so transposes are free.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert!(data.len() >= rows * cols);
        Self {
            data,
            rows,
            cols,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }
}

/// `c = alpha * a * b + beta * c` where `c` is a contiguous `a.rows x b.cols` matrix.
pub(crate) fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c[..m * n].iter_mut() {
            *v *= beta;
        }
        return;
    }
    // SAFETY: the slices outlive the call and the asserted extents keep every
    // strided access inside them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a strided 2-D convolution window.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeom {
    pub fn cols_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn cols_cols(&self) -> usize {
        self.out_height * self.out_width
    }
}

/// Unfolds `image` (`[C, H, W]`) into `cols` (`[C*k*k, OH*OW]`).
pub(crate) fn im2col(g: &ConvGeom, image: &[f64], cols: &mut [f64]) {
    let ohw = g.cols_cols();
    let k = g.kernel;
    for c in 0..g.channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * ohw..(row + 1) * ohw];
                for oh in 0..g.out_height {
                    let ih = (oh * g.stride + ki) as isize - g.padding as isize;
                    let line = &mut dst[oh * g.out_width..(oh + 1) * g.out_width];
                    if ih < 0 || ih >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[ih as usize * g.width..(ih as usize + 1) * g.width];
                    for (ow, v) in line.iter_mut().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - g.padding as isize;
                        *v = if iw < 0 || iw >= g.width as isize {
                            0.0
                        } else {
                            src[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `cols` back into `image` (which is overwritten).
pub(crate) fn col2im(g: &ConvGeom, cols: &[f64], image: &mut [f64]) {
    image.fill(0.0);
    let ohw = g.cols_cols();
    let k = g.kernel;
    for c in 0..g.channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * ohw..(row + 1) * ohw];
                for oh in 0..g.out_height {
                    let ih = (oh * g.stride + ki) as isize - g.padding as isize;
                    if ih < 0 || ih >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * g.width..(ih as usize + 1) * g.width];
                    let line = &src[oh * g.out_width..(oh + 1) * g.out_width];
                    for (ow, v) in line.iter().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - g.padding as isize;
                        if iw >= 0 && iw < g.width as isize {
                            dst[iw as usize] += v;
                        }
                    }
                }
            }
        }
    }
}
