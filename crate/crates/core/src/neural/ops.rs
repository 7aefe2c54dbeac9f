//! Convolution lowering to matrix products.

use super::Scalar;

/// Geometry of a strided, zero-padded 2D correlation.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    #[inline]
    fn source(&self, o: usize, k: usize, size: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < size).then_some(pos as usize)
    }
}

/// Unfolds `image` (`[C, H, W]`) into `[C*k*k, OH*OW]`.
pub(crate) fn im2col<T: Scalar>(image: &[T], g: &ConvGeom, cols: &mut [T]) {
    let ncols = g.cols();
    for c in 0..g.channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.out_h {
                    let sy = g.source(oy, ki, g.height);
                    for ox in 0..g.out_w {
                        dst[oy * g.out_w + ox] = match (sy, g.source(ox, kj, g.width)) {
                            (Some(sy), Some(sx)) => image[(c * g.height + sy) * g.width + sx],
                            _ => T::zero(),
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `image`.
pub(crate) fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, image: &mut [T]) {
    let ncols = g.cols();
    for c in 0..g.channels {
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = (c * g.kernel + ki) * g.kernel + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.out_h {
                    let Some(sy) = g.source(oy, ki, g.height) else {
                        continue;
                    };
                    for ox in 0..g.out_w {
                        if let Some(sx) = g.source(ox, kj, g.width) {
                            image[(c * g.height + sy) * g.width + sx] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Row-major matrix operand: data plus (row stride, column stride).
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a, T> {
    pub data: &'a [T],
    pub rs: isize,
    pub cs: isize,
}

impl<'a, T> Mat<'a, T> {
    /// `rows x cols` row-major matrix.
    pub fn new(data: &'a [T], cols: usize) -> Self {
        Mat {
            data,
            rs: cols as isize,
            cs: 1,
        }
    }

    /// Transposed view of a `rows x cols` row-major matrix.
    pub fn t(data: &'a [T], cols: usize) -> Self {
        Mat {
            data,
            rs: 1,
            cs: cols as isize,
        }
    }
}

/// `c = alpha * a(m x k) * b(k x n) + beta * c`, with `c` row-major `m x n`.
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: Mat<'_, T>,
    b: Mat<'_, T>,
    beta: T,
    c: &mut [T],
) {
    debug_assert!(c.len() >= m * n);
    T::gemm(m, k, n, a.data, a.rs, a.cs, b.data, b.rs, b.cs, beta, c, n as isize, 1);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = ConvGeom {
            channels: 2,
            height: 5,
            width: 4,
            kernel: 3,
            stride: 2,
            padding: 1,
            out_h: 3,
            out_w: 2,
        };
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..g.rows() * g.cols()).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut cols = vec![0.0; g.rows() * g.cols()];
        im2col(&x, &g, &mut cols);
        let mut back = vec![0.0; 40];
        col2im(&y, &g, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn gemm_with_transposed_operand() {
        // a = [[1, 2], [3, 4]], b^T where b = [[5, 6], [7, 8]]
        let a = [1.0f32, 2.0, 3.0, 4.0];
        let b = [5.0f32, 6.0, 7.0, 8.0];
        let mut c = [0.0f32; 4];
        gemm(2, 2, 2, Mat::new(&a, 2), Mat::t(&b, 2), 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }
}
