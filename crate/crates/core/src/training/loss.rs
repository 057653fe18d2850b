use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor4;

#[derive(Clone, Debug)]
pub struct LossValue<F> {
    /// Mean over non-ignored pixels.
    pub loss: F,
    /// Per-pixel negative log-likelihood `(N, H, W)`, zero where ignored.
    pub pixel_loss: Vec<F>,
    /// Number of non-ignored pixels.
    pub count: usize,
    /// d loss / d logits.
    pub grad: Tensor4<F>,
}

/// Softmax cross-entropy over the channel axis, averaged over every pixel of
/// the batch whose label differs from `ignore_index`.
pub fn spatial_cross_entropy<F: Real>(logits: &Tensor4<F>, labels: &[u8], ignore_index: u8) -> Result<LossValue<F>> {
    let s = logits.shape();
    let plane = s.plane();
    if labels.len() != s.n * plane {
        return Err(Error::dim("label pixels", s.n * plane, labels.len()));
    }
    let mut pixel_loss = vec![F::zero(); labels.len()];
    let mut grad = Tensor4::zeros(s);
    let mut count = 0usize;
    let mut probs = vec![F::zero(); s.c];
    for n in 0..s.n {
        let item = logits.item(n);
        for px in 0..plane {
            let label = labels[n * plane + px];
            if label == ignore_index {
                continue;
            }
            if label as usize >= s.c {
                return Err(Error::Validation(format!(
                    "label {label} out of range for {} classes",
                    s.c
                )));
            }
            count += 1;
            let max = (0..s.c).map(|c| item[c * plane + px]).fold(F::neg_infinity(), F::max);
            let mut z = F::zero();
            for (c, p) in probs.iter_mut().enumerate() {
                *p = (item[c * plane + px] - max).exp();
                z += *p;
            }
            let log_z = z.ln() + max;
            pixel_loss[n * plane + px] = log_z - item[label as usize * plane + px];
            let g = grad.item_mut(n);
            for (c, p) in probs.iter().enumerate() {
                g[c * plane + px] = *p / z;
            }
            g[label as usize * plane + px] -= F::one();
        }
    }
    let loss = if count == 0 {
        F::zero()
    } else {
        let inv = F::one() / F::of(count as f64);
        grad.scale(inv);
        F::of(pixel_loss.iter().map(|v| v.as_f64()).sum::<f64>() / count as f64)
    };
    Ok(LossValue {
        loss,
        pixel_loss,
        count,
        grad,
    })
}
