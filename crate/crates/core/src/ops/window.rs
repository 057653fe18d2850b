//! Patch extraction (`im2col`) and its adjoint (`col2im`) for strided,
//! padded, dilated square kernels.

use crate::real::Real;

#[derive(Clone, Copy, Debug)]
pub(crate) struct Window {
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn col_rows(&self, channels: usize) -> usize {
        channels * self.k * self.k
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// True when `im2col` is the identity map.
    pub fn is_pointwise(&self) -> bool {
        self.k == 1
            && self.stride == 1
            && self.pad == 0
            && self.in_h == self.out_h
            && self.in_w == self.out_w
    }

    #[inline]
    fn source(&self, o: usize, kk: usize, len: usize) -> Option<usize> {
        let pos = (o * self.stride + kk * self.dilation) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
    }
}

/// `col[(c*k*k + ky*k + kx), (oy*out_w + ox)] = x[c, oy*s - p + ky*r, ox*s - p + kx*r]`.
pub(crate) fn im2col<F: Real>(x: &[F], channels: usize, win: &Window, col: &mut [F]) {
    let plane = win.in_h * win.in_w;
    let cols = win.col_cols();
    let mut row = 0;
    for c in 0..channels {
        let xc = &x[c * plane..(c + 1) * plane];
        for ky in 0..win.k {
            for kx in 0..win.k {
                let dst = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..win.out_h {
                    let d = &mut dst[oy * win.out_w..(oy + 1) * win.out_w];
                    match win.source(oy, ky, win.in_h) {
                        None => d.fill(F::zero()),
                        Some(iy) => {
                            let src = &xc[iy * win.in_w..(iy + 1) * win.in_w];
                            for (ox, v) in d.iter_mut().enumerate() {
                                *v = match win.source(ox, kx, win.in_w) {
                                    Some(ix) => src[ix],
                                    None => F::zero(),
                                };
                            }
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into `x`.
pub(crate) fn col2im<F: Real>(col: &[F], channels: usize, win: &Window, x: &mut [F]) {
    let plane = win.in_h * win.in_w;
    let cols = win.col_cols();
    let mut row = 0;
    for c in 0..channels {
        let xc = &mut x[c * plane..(c + 1) * plane];
        for ky in 0..win.k {
            for kx in 0..win.k {
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..win.out_h {
                    let Some(iy) = win.source(oy, ky, win.in_h) else {
                        continue;
                    };
                    let s = &src[oy * win.out_w..(oy + 1) * win.out_w];
                    let dst = &mut xc[iy * win.in_w..(iy + 1) * win.in_w];
                    for (ox, &v) in s.iter().enumerate() {
                        if let Some(ix) = win.source(ox, kx, win.in_w) {
                            dst[ix] += v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let win = Window {
            k: 3,
            stride: 2,
            pad: 2,
            dilation: 2,
            in_h: 7,
            in_w: 6,
            out_h: 4,
            out_w: 3,
        };
        let c = 2;
        let x: Vec<f64> = (0..c * 42).map(|i| ((i * 7 % 13) as f64) - 6.0).collect();
        let y: Vec<f64> = (0..win.col_rows(c) * win.col_cols())
            .map(|i| ((i * 5 % 11) as f64) * 0.5)
            .collect();
        let mut col = vec![0.0; y.len()];
        im2col(&x, c, &win, &mut col);
        let mut back = vec![0.0; x.len()];
        col2im(&y, c, &win, &mut back);
        let lhs: f64 = col.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
