//! Central finite-difference oracles for checking analytic gradients.

use crate::encoding::SpikeTrain;
use crate::error::Result;
use crate::network::{forward_any, ForwardOptions, ModelParams, NetworkSpec};
use crate::tensor::Tensor4;
use crate::training::{bptt_backward, spatial_cross_entropy};

/// Denominator floor for relative errors of near-zero gradients.
pub const REL_FLOOR: f64 = 1e-8;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// Location of the worst entry.
    pub worst: String,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

impl GradCheck {
    fn new() -> Self {
        GradCheck {
            max_rel_err: 0.0,
            worst: String::new(),
            analytic: 0.0,
            numeric: 0.0,
            checked: 0,
        }
    }

    fn record(&mut self, at: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let e = rel_err(analytic, numeric);
        self.checked += 1;
        if e > self.max_rel_err || self.worst.is_empty() {
            self.max_rel_err = e;
            self.worst = at();
            self.analytic = analytic;
            self.numeric = numeric;
        }
    }

    pub fn merge(&mut self, other: GradCheck) {
        let checked = self.checked + other.checked;
        if other.max_rel_err > self.max_rel_err || self.worst.is_empty() {
            *self = other;
        }
        self.checked = checked;
    }
}

/// Compares `analytic = d f / d x` against central differences of the scalar
/// function `f` at every entry of `x`.
pub fn check_tensor(
    x: &Tensor4<f64>,
    analytic: &Tensor4<f64>,
    eps: f64,
    mut f: impl FnMut(&Tensor4<f64>) -> Result<f64>,
) -> Result<GradCheck> {
    analytic.expect_shape(x.shape(), "analytic gradient")?;
    let mut report = GradCheck::new();
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        report.record(|| format!("[{i}]"), analytic.data()[i], (up - down) / (2.0 * eps));
    }
    Ok(report)
}

fn loss_of(spec: &NetworkSpec, params: &ModelParams<f64>, input: &SpikeTrain<f64>, labels: &[u8], ignore: u8) -> Result<f64> {
    let opts = ForwardOptions {
        training: true,
        keep_cache: false,
    };
    let out = forward_any(spec, params, input, opts)?;
    Ok(spatial_cross_entropy(&out.logits, labels, ignore)?.loss)
}

/// Checks every trainable parameter entry of a network (training-mode
/// normalization, cross-entropy loss) against central differences.
pub fn check_network(
    spec: &NetworkSpec,
    params: &ModelParams<f64>,
    input: &SpikeTrain<f64>,
    labels: &[u8],
    ignore_index: u8,
    eps: f64,
) -> Result<GradCheck> {
    let (_, grads) = bptt_backward(spec, params, input, labels, ignore_index)?;
    let mut analytic: Vec<(String, Vec<f64>)> = Vec::new();
    grads.visit(params, |n, g| analytic.push((n.to_string(), g.to_vec())));
    let mut report = GradCheck::new();
    for (k, (name, g)) in analytic.iter().enumerate() {
        for (i, &a) in g.iter().enumerate() {
            let shifted = |delta: f64| -> Result<f64> {
                let mut p = params.clone();
                let mut j = 0;
                p.visit_trainable_mut(|_, d| {
                    if j == k {
                        d[i] += delta;
                    }
                    j += 1;
                });
                loss_of(spec, &p, input, labels, ignore_index)
            };
            let numeric = (shifted(eps)? - shifted(-eps)?) / (2.0 * eps);
            report.record(|| format!("{name}[{i}]"), a, numeric);
        }
    }
    Ok(report)
}
