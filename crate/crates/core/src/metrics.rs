//! Segmentation accuracy.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor4;

pub const IGNORE_INDEX: u8 = 255;

/// Class-by-class pixel counts, `matrix[label * k + pred]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Confusion {
    pub num_classes: usize,
    pub matrix: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MiouResult {
    /// `None` for classes absent from both prediction and label.
    pub per_class: Vec<Option<f64>>,
    /// Mean over present classes; 0 when none is present.
    pub mean: f64,
}

impl Confusion {
    pub fn new(num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Validation(format!("mIoU needs >= 2 classes, got {num_classes}")));
        }
        Ok(Confusion {
            num_classes,
            matrix: vec![0; num_classes * num_classes],
        })
    }

    pub fn add(&mut self, pred: &[u8], label: &[u8], ignore_index: u8) -> Result<()> {
        if pred.len() != label.len() {
            return Err(Error::dim("label map length", pred.len(), label.len()));
        }
        let k = self.num_classes;
        for (&p, &l) in pred.iter().zip(label) {
            if l == ignore_index {
                continue;
            }
            let (p, l) = (p as usize, l as usize);
            if p >= k || l >= k {
                return Err(Error::Validation(format!("class id {} out of range 0..{k}", p.max(l))));
            }
            self.matrix[l * k + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Confusion) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::dim("classes", self.num_classes, other.num_classes));
        }
        for (a, b) in self.matrix.iter_mut().zip(&other.matrix) {
            *a += b;
        }
        Ok(())
    }

    pub fn result(&self) -> MiouResult {
        let k = self.num_classes;
        let per_class: Vec<Option<f64>> = (0..k)
            .map(|c| {
                let tp = self.matrix[c * k + c];
                let fn_: u64 = (0..k).map(|p| self.matrix[c * k + p]).sum::<u64>() - tp;
                let fp: u64 = (0..k).map(|l| self.matrix[l * k + c]).sum::<u64>() - tp;
                let denom = tp + fp + fn_;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        let mean = if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        MiouResult { per_class, mean }
    }

    /// Fraction of non-ignored pixels classified correctly.
    pub fn pixel_accuracy(&self) -> f64 {
        let k = self.num_classes;
        let total: u64 = self.matrix.iter().sum();
        let hit: u64 = (0..k).map(|c| self.matrix[c * k + c]).sum();
        if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        }
    }
}

/// Per-class IoU `TP / (TP + FP + FN)` over non-ignored pixels.
pub fn miou(pred: &[u8], label: &[u8], num_classes: usize, ignore_index: u8) -> Result<MiouResult> {
    let mut c = Confusion::new(num_classes)?;
    c.add(pred, label, ignore_index)?;
    Ok(c.result())
}

/// Per-pixel arg-max over the channel axis, `(N, H, W)` flattened. Ties go to
/// the lower class index.
pub fn argmax<F: Real>(logits: &Tensor4<F>) -> Vec<u8> {
    let s = logits.shape();
    let plane = s.plane();
    let mut out = vec![0u8; s.n * plane];
    for n in 0..s.n {
        let item = logits.item(n);
        for px in 0..plane {
            let mut best = 0;
            let mut best_v = item[px];
            for c in 1..s.c {
                let v = item[c * plane + px];
                if v > best_v {
                    best = c;
                    best_v = v;
                }
            }
            out[n * plane + px] = best as u8;
        }
    }
    out
}
