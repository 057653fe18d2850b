use crate::error::{Error, Result};
use crate::network::{Gradients, ModelParams};
use crate::real::Real;

/// Learning rate divided by `factor` once `milestone` of the epochs are done.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepDecay {
    pub factor: f64,
    pub milestone: f64,
}

impl Default for StepDecay {
    fn default() -> Self {
        StepDecay {
            factor: 10.0,
            milestone: 0.5,
        }
    }
}

impl StepDecay {
    /// Learning rate for 1-based `epoch` out of `total`.
    pub fn lr(&self, base: f64, epoch: usize, total: usize) -> f64 {
        let boundary = (self.milestone * total as f64).floor() as usize;
        if epoch > boundary {
            base / self.factor
        } else {
            base
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimState<F = f32> {
    pub names: Vec<String>,
    pub m: Vec<Vec<F>>,
    pub v: Vec<Vec<F>>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: StepDecay,
}

impl<F: Real> OptimState<F> {
    pub fn new(params: &ModelParams<F>, lr: f64) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {lr}")));
        }
        let mut names = Vec::new();
        let mut m = Vec::new();
        let mut p = params.clone();
        p.visit_trainable_mut(|n, d| {
            names.push(n.to_string());
            m.push(vec![F::zero(); d.len()]);
        });
        Ok(OptimState {
            names,
            v: m.clone(),
            m,
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule: StepDecay::default(),
        })
    }
}

/// Fails with the offending buffer's name if any gradient is NaN or infinite.
pub fn check_finite<F: Real>(params: &ModelParams<F>, grads: &Gradients<F>) -> Result<()> {
    let mut bad = None;
    grads.visit(params, |name, g| {
        if bad.is_none() && g.iter().any(|v| !v.is_finite()) {
            bad = Some(name.to_string());
        }
    });
    match bad {
        Some(name) => Err(Error::NonFinite(name)),
        None => Ok(()),
    }
}

/// Bias-corrected Adam update with the current `state.lr`.
pub fn adam_step<F: Real>(params: &mut ModelParams<F>, grads: &Gradients<F>, state: &mut OptimState<F>) -> Result<()> {
    check_finite(params, grads)?;
    let mut flat: Vec<(String, Vec<F>)> = Vec::new();
    grads.visit(params, |n, g| flat.push((n.to_string(), g.to_vec())));
    if flat.len() != state.names.len() || flat.iter().zip(&state.names).any(|((a, _), b)| a != b) {
        return Err(Error::State("gradient layout differs from optimizer state".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let (lr, eps) = (state.lr, state.eps);
    let mut k = 0;
    let mut err = None;
    params.visit_trainable_mut(|name, p| {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        let g = &flat[k].1;
        k += 1;
        if p.len() != g.len() {
            err.get_or_insert(Error::dim(name.to_string(), p.len(), g.len()));
            return;
        }
        for i in 0..p.len() {
            let gi = g[i].as_f64();
            let mi = b1 * m[i].as_f64() + (1.0 - b1) * gi;
            let vi = b2 * v[i].as_f64() + (1.0 - b2) * gi * gi;
            m[i] = F::of(mi);
            v[i] = F::of(vi);
            let update = lr * (mi / c1) / ((vi / c2).sqrt() + eps);
            p[i] -= F::of(update);
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}
