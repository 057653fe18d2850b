//! Dilated 2-D cross-correlation and its transpose.
//!
//! Both run one `im2col` + GEMM per batch item. Items are processed in
//! parallel; weight gradients are reduced over fixed-size item chunks in
//! chunk order, so results do not depend on the worker count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ops::gemm::gemm;
use crate::ops::window::{col2im, im2col, Window};
use crate::real::Real;
use crate::tensor::{Shape4, Tensor4};

/// Items per weight-gradient partial sum.
const GRAD_CHUNK: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    /// Stride 1, "same" padding.
    pub fn same(kernel: usize, in_channels: usize, out_channels: usize) -> Self {
        Self::dilated(kernel, in_channels, out_channels, 1)
    }

    /// Stride 1 with padding `r*(k-1)/2`, which keeps the spatial size.
    pub fn dilated(kernel: usize, in_channels: usize, out_channels: usize, dilation: usize) -> Self {
        ConvSpec {
            kernel,
            in_channels,
            out_channels,
            stride: 1,
            padding: dilation * (kernel.saturating_sub(1)) / 2,
            dilation,
        }
    }

    /// The exact 2x upsampling transposed convolution: k=4, s=2, p=1.
    pub fn upsample2x(in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            kernel: 4,
            in_channels,
            out_channels,
            stride: 2,
            padding: 1,
            dilation: 1,
        }
    }

    fn check_common(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || self.dilation == 0 {
            return Err(Error::Config(format!(
                "kernel, stride and dilation must be >= 1 ({self:?})"
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config(format!("channel counts must be >= 1 ({self:?})")));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check_common()?;
        if self.kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "convolution kernel must be odd, got {}",
                self.kernel
            )));
        }
        Ok(())
    }

    /// `floor((len + 2p - r(k-1) - 1)/s) + 1`.
    pub fn output_len(&self, len: usize) -> Result<usize> {
        let span = self.dilation * (self.kernel - 1) + 1;
        let padded = len + 2 * self.padding;
        if padded < span {
            return Err(Error::Config(format!(
                "input extent {len} too small for receptive span {span} with padding {}",
                self.padding
            )));
        }
        Ok((padded - span) / self.stride + 1)
    }

    pub fn transpose_output_len(&self, len: usize) -> Result<usize> {
        let span = self.dilation * (self.kernel - 1) + 1;
        let grown = (len - 1) * self.stride + span;
        grown
            .checked_sub(2 * self.padding)
            .filter(|&v| v >= 1)
            .ok_or_else(|| Error::Config(format!("transposed convolution collapses extent {len}")))
    }

    /// Transposed convolutions here must exactly double the spatial extent.
    pub fn validate_upsample(&self, len: usize) -> Result<()> {
        self.check_common()?;
        let out = self.transpose_output_len(len)?;
        if out != 2 * len {
            return Err(Error::Config(format!(
                "transposed convolution must double spatial size: {len} -> {out} with {self:?}"
            )));
        }
        Ok(())
    }

    /// `(C_out, C_in, k, k)`.
    pub fn weight_shape(&self) -> Shape4 {
        Shape4::new(self.out_channels, self.in_channels, self.kernel, self.kernel)
    }

    /// `(C_in, C_out, k, k)` for transposed convolutions.
    pub fn transpose_weight_shape(&self) -> Shape4 {
        Shape4::new(self.in_channels, self.out_channels, self.kernel, self.kernel)
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn window(&self, in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Window {
        Window {
            k: self.kernel,
            stride: self.stride,
            pad: self.padding,
            dilation: self.dilation,
            in_h,
            in_w,
            out_h,
            out_w,
        }
    }
}

pub fn conv_output_shape(input: Shape4, spec: &ConvSpec) -> Result<Shape4> {
    spec.validate()?;
    if input.c != spec.in_channels {
        return Err(Error::dim("input channels", spec.in_channels, input.c));
    }
    Ok(Shape4::new(
        input.n,
        spec.out_channels,
        spec.output_len(input.h)?,
        spec.output_len(input.w)?,
    ))
}

pub fn transpose_output_shape(input: Shape4, spec: &ConvSpec) -> Result<Shape4> {
    if input.c != spec.in_channels {
        return Err(Error::dim("input channels", spec.in_channels, input.c));
    }
    spec.validate_upsample(input.h)?;
    spec.validate_upsample(input.w)?;
    Ok(Shape4::new(input.n, spec.out_channels, 2 * input.h, 2 * input.w))
}

fn check_weights<F: Real>(weights: &Tensor4<F>, want: Shape4) -> Result<()> {
    weights.expect_shape(want, "weights")
}

/// Dilated cross-correlation: `out[c,y,x] = sum w[c,ci,m,n] * in[ci, y*s-p+m*r, x*s-p+n*r]`.
pub fn conv2d_forward<F: Real>(
    input: &Tensor4<F>,
    weights: &Tensor4<F>,
    spec: &ConvSpec,
) -> Result<Tensor4<F>> {
    let is = input.shape();
    let os = conv_output_shape(is, spec)?;
    check_weights(weights, spec.weight_shape())?;
    let win = spec.window(is.h, is.w, os.h, os.w);
    let (rows, cols) = (win.col_rows(is.c), win.col_cols());
    let mut out = Tensor4::zeros(os);
    let w = weights.data();
    out.data_mut()
        .par_chunks_mut(os.item_len())
        .enumerate()
        .for_each_init(Vec::new, |col, (b, o)| {
            let x = input.item(b);
            let patches: &[F] = if win.is_pointwise() {
                x
            } else {
                col.resize(rows * cols, F::zero());
                im2col(x, is.c, &win, col);
                col
            };
            gemm(false, false, os.c, cols, rows, F::one(), w, patches, F::zero(), o);
        });
    Ok(out)
}

/// Exact gradients of [`conv2d_forward`] with respect to input and weights.
pub fn conv2d_backward<F: Real>(
    input: &Tensor4<F>,
    weights: &Tensor4<F>,
    grad_out: &Tensor4<F>,
    spec: &ConvSpec,
) -> Result<(Tensor4<F>, Tensor4<F>)> {
    let (gi, gw) = conv2d_backward_impl(input, weights, grad_out, spec, true)?;
    Ok((gi.expect("input gradient requested"), gw))
}

pub(crate) fn conv2d_backward_impl<F: Real>(
    input: &Tensor4<F>,
    weights: &Tensor4<F>,
    grad_out: &Tensor4<F>,
    spec: &ConvSpec,
    want_input: bool,
) -> Result<(Option<Tensor4<F>>, Tensor4<F>)> {
    let is = input.shape();
    let os = conv_output_shape(is, spec)?;
    check_weights(weights, spec.weight_shape())?;
    grad_out.expect_shape(os, "grad_out")?;
    let win = spec.window(is.h, is.w, os.h, os.w);
    let (rows, cols) = (win.col_rows(is.c), win.col_cols());
    let w = weights.data();
    let wlen = w.len();
    let mut grad_in = want_input.then(|| Tensor4::zeros(is));

    let chunk_job = |first: usize, gin: Option<&mut [F]>| -> Vec<F> {
        let mut gw = vec![F::zero(); wlen];
        let mut col = Vec::new();
        let mut gcol = Vec::new();
        let count = (is.n - first).min(GRAD_CHUNK);
        let mut gin = gin;
        for b in first..first + count {
            let x = input.item(b);
            let go = grad_out.item(b);
            let patches: &[F] = if win.is_pointwise() {
                x
            } else {
                col.resize(rows * cols, F::zero());
                im2col(x, is.c, &win, &mut col);
                &col
            };
            gemm(false, true, os.c, rows, cols, F::one(), go, patches, F::one(), &mut gw);
            if let Some(g) = gin.as_deref_mut() {
                let gx = &mut g[(b - first) * is.item_len()..(b - first + 1) * is.item_len()];
                if win.is_pointwise() {
                    gemm(true, false, rows, cols, os.c, F::one(), w, go, F::zero(), gx);
                } else {
                    gcol.resize(rows * cols, F::zero());
                    gemm(true, false, rows, cols, os.c, F::one(), w, go, F::zero(), &mut gcol);
                    col2im(&gcol, is.c, &win, gx);
                }
            }
        }
        gw
    };

    let partials: Vec<Vec<F>> = match grad_in.as_mut() {
        Some(g) => g
            .data_mut()
            .par_chunks_mut(GRAD_CHUNK * is.item_len())
            .enumerate()
            .map(|(ci, gin)| chunk_job(ci * GRAD_CHUNK, Some(gin)))
            .collect(),
        None => (0..is.n.div_ceil(GRAD_CHUNK))
            .into_par_iter()
            .map(|ci| chunk_job(ci * GRAD_CHUNK, None))
            .collect(),
    };
    let grad_w = reduce_partials(partials, spec.weight_shape());
    Ok((grad_in, grad_w))
}

fn reduce_partials<F: Real>(partials: Vec<Vec<F>>, shape: Shape4) -> Tensor4<F> {
    let mut it = partials.into_iter();
    let mut acc = it.next().unwrap_or_else(|| vec![F::zero(); shape.len()]);
    for p in it {
        for (a, b) in acc.iter_mut().zip(p) {
            *a += b;
        }
    }
    Tensor4::from_vec(shape, acc).expect("partial gradient has weight shape")
}

/// Transposed convolution (adjoint of a strided convolution); weights are
/// `(C_in, C_out, k, k)`.
pub fn transpose_conv_forward<F: Real>(
    input: &Tensor4<F>,
    weights: &Tensor4<F>,
    spec: &ConvSpec,
) -> Result<Tensor4<F>> {
    let is = input.shape();
    let os = transpose_output_shape(is, spec)?;
    check_weights(weights, spec.transpose_weight_shape())?;
    let win = spec.window(os.h, os.w, is.h, is.w);
    let (rows, cols) = (win.col_rows(os.c), win.col_cols());
    let w = weights.data();
    let mut out = Tensor4::zeros(os);
    out.data_mut()
        .par_chunks_mut(os.item_len())
        .enumerate()
        .for_each_init(Vec::new, |col, (b, o)| {
            col.resize(rows * cols, F::zero());
            gemm(true, false, rows, cols, is.c, F::one(), w, input.item(b), F::zero(), col);
            col2im(col, os.c, &win, o);
        });
    Ok(out)
}

pub fn transpose_conv_backward<F: Real>(
    input: &Tensor4<F>,
    weights: &Tensor4<F>,
    grad_out: &Tensor4<F>,
    spec: &ConvSpec,
) -> Result<(Tensor4<F>, Tensor4<F>)> {
    let is = input.shape();
    let os = transpose_output_shape(is, spec)?;
    check_weights(weights, spec.transpose_weight_shape())?;
    grad_out.expect_shape(os, "grad_out")?;
    let win = spec.window(os.h, os.w, is.h, is.w);
    let (rows, cols) = (win.col_rows(os.c), win.col_cols());
    let w = weights.data();
    let wlen = w.len();
    let mut grad_in = Tensor4::zeros(is);
    let partials: Vec<Vec<F>> = grad_in
        .data_mut()
        .par_chunks_mut(GRAD_CHUNK * is.item_len())
        .enumerate()
        .map(|(ci, gin)| {
            let first = ci * GRAD_CHUNK;
            let mut gw = vec![F::zero(); wlen];
            let mut col = vec![F::zero(); rows * cols];
            for (j, gx) in gin.chunks_mut(is.item_len()).enumerate() {
                let b = first + j;
                im2col(grad_out.item(b), os.c, &win, &mut col);
                gemm(false, false, is.c, cols, rows, F::one(), w, &col, F::zero(), gx);
                gemm(false, true, is.c, rows, cols, F::one(), input.item(b), &col, F::one(), &mut gw);
            }
            gw
        })
        .collect();
    Ok((grad_in, reduce_partials(partials, spec.transpose_weight_shape())))
}
