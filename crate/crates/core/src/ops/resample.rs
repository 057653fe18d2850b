//! 2x2 average pooling and align-corners bilinear upsampling.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Shape4, Tensor4};

pub fn avg_pool2<F: Real>(input: &Tensor4<F>) -> Result<Tensor4<F>> {
    let s = input.shape();
    if s.h % 2 != 0 {
        return Err(Error::dim("pool rows (must be even)", s.h + 1, s.h));
    }
    if s.w % 2 != 0 {
        return Err(Error::dim("pool cols (must be even)", s.w + 1, s.w));
    }
    let (oh, ow) = (s.h / 2, s.w / 2);
    let mut out = Tensor4::zeros(Shape4::new(s.n, s.c, oh, ow));
    let quarter = F::of(0.25);
    let src = input.data();
    let dst = out.data_mut();
    for (o, i) in dst.chunks_mut(oh * ow).zip(src.chunks(s.plane())) {
        for y in 0..oh {
            let r0 = &i[(2 * y) * s.w..(2 * y + 1) * s.w];
            let r1 = &i[(2 * y + 1) * s.w..(2 * y + 2) * s.w];
            for x in 0..ow {
                o[y * ow + x] = (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]) * quarter;
            }
        }
    }
    Ok(out)
}

/// Spreads each output gradient uniformly (1/4) over its window.
pub fn avg_pool2_backward<F: Real>(grad_out: &Tensor4<F>, input_shape: Shape4) -> Result<Tensor4<F>> {
    let s = input_shape;
    let go = grad_out.shape();
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(Error::dim("pool input (must be even)", s.h + s.h % 2, s.h));
    }
    grad_out.expect_shape(Shape4::new(s.n, s.c, s.h / 2, s.w / 2), "grad_out")?;
    let quarter = F::of(0.25);
    let mut gi = Tensor4::zeros(s);
    for (g, i) in grad_out
        .data()
        .chunks(go.plane())
        .zip(gi.data_mut().chunks_mut(s.plane()))
    {
        for y in 0..go.h {
            for x in 0..go.w {
                let v = g[y * go.w + x] * quarter;
                i[(2 * y) * s.w + 2 * x] = v;
                i[(2 * y) * s.w + 2 * x + 1] = v;
                i[(2 * y + 1) * s.w + 2 * x] = v;
                i[(2 * y + 1) * s.w + 2 * x + 1] = v;
            }
        }
    }
    Ok(gi)
}

/// Source index pair and weight of the upper neighbour for one output coordinate.
fn taps(out_len: usize, in_len: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|o| {
            if out_len == 1 || in_len == 1 {
                return (0, 0, 0.0);
            }
            let src = o as f64 * (in_len - 1) as f64 / (out_len - 1) as f64;
            let lo = (src.floor() as usize).min(in_len - 1);
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

fn check_upsample(s: Shape4, out_h: usize, out_w: usize) -> Result<()> {
    if out_h < s.h || out_w < s.w {
        return Err(Error::Config(format!(
            "bilinear upsampling cannot shrink {}x{} to {out_h}x{out_w}",
            s.h, s.w
        )));
    }
    Ok(())
}

/// Align-corners bilinear interpolation to `(out_h, out_w)`.
pub fn bilinear_upsample<F: Real>(input: &Tensor4<F>, out_h: usize, out_w: usize) -> Result<Tensor4<F>> {
    let s = input.shape();
    check_upsample(s, out_h, out_w)?;
    if (out_h, out_w) == (s.h, s.w) {
        return Ok(input.clone());
    }
    let ty = taps(out_h, s.h);
    let tx = taps(out_w, s.w);
    let mut out = Tensor4::zeros(Shape4::new(s.n, s.c, out_h, out_w));
    for (o, i) in out
        .data_mut()
        .chunks_mut(out_h * out_w)
        .zip(input.data().chunks(s.plane()))
    {
        for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = F::of(fy);
            for (x, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = F::of(fx);
                let top = i[y0 * s.w + x0] * (F::one() - fx) + i[y0 * s.w + x1] * fx;
                let bot = i[y1 * s.w + x0] * (F::one() - fx) + i[y1 * s.w + x1] * fx;
                o[y * out_w + x] = top * (F::one() - fy) + bot * fy;
            }
        }
    }
    Ok(out)
}

/// Transpose of the interpolation weights used by [`bilinear_upsample`].
pub fn bilinear_upsample_backward<F: Real>(
    grad_out: &Tensor4<F>,
    input_shape: Shape4,
) -> Result<Tensor4<F>> {
    let s = input_shape;
    let go = grad_out.shape();
    check_upsample(s, go.h, go.w)?;
    grad_out.expect_shape(Shape4::new(s.n, s.c, go.h, go.w), "grad_out")?;
    if (go.h, go.w) == (s.h, s.w) {
        return Ok(grad_out.clone());
    }
    let ty = taps(go.h, s.h);
    let tx = taps(go.w, s.w);
    let mut gi = Tensor4::zeros(s);
    for (g, i) in grad_out
        .data()
        .chunks(go.plane())
        .zip(gi.data_mut().chunks_mut(s.plane()))
    {
        for (y, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = F::of(fy);
            for (x, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = F::of(fx);
                let v = g[y * go.w + x];
                let top = v * (F::one() - fy);
                let bot = v * fy;
                i[y0 * s.w + x0] += top * (F::one() - fx);
                i[y0 * s.w + x1] += top * fx;
                i[y1 * s.w + x0] += bot * (F::one() - fx);
                i[y1 * s.w + x1] += bot * fx;
            }
        }
    }
    Ok(gi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_constant_and_window_mean() {
        let c = Tensor4::<f32>::full(Shape4::new(1, 2, 4, 4), 3.5);
        assert!(avg_pool2(&c).unwrap().data().iter().all(|&v| v == 3.5));
        let w = Tensor4::<f32>::from_vec(Shape4::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(avg_pool2(&w).unwrap().data(), &[2.5]);
    }

    #[test]
    fn pool_backward_spreads_quarters() {
        let g = Tensor4::<f32>::full(Shape4::new(1, 1, 1, 1), 1.0);
        let gi = avg_pool2_backward(&g, Shape4::new(1, 1, 2, 2)).unwrap();
        assert_eq!(gi.data(), &[0.25; 4]);
    }

    #[test]
    fn pool_rejects_odd() {
        let x = Tensor4::<f32>::zeros(Shape4::new(1, 1, 3, 4));
        assert!(matches!(avg_pool2(&x), Err(Error::Dimension { .. })));
    }

    #[test]
    fn bilinear_identity_and_ramp() {
        let x = Tensor4::<f64>::from_vec(Shape4::new(1, 1, 2, 2), vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(bilinear_upsample(&x, 2, 2).unwrap(), x);
        let y = bilinear_upsample(&x, 4, 4).unwrap();
        for r in 0..4 {
            let row: Vec<f64> = (0..4).map(|c| y.at(0, 0, r, c)).collect();
            for (a, b) in row.iter().zip([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]) {
                assert!((a - b).abs() < 1e-12, "{row:?}");
            }
        }
    }

    #[test]
    fn bilinear_rejects_shrinking() {
        let x = Tensor4::<f32>::zeros(Shape4::new(1, 1, 4, 4));
        assert!(matches!(bilinear_upsample(&x, 2, 8), Err(Error::Config(_))));
    }
}
