//! ANN→SNN conversion by threshold balancing.
//!
//! Batch norm is folded into the ANN weights first. Each ReLU layer then
//! becomes a layer of integrate-and-fire neurons (no leak, soft reset) whose
//! threshold is a high percentile of that layer's calibration activations.
//! Spikes carry their neuron's threshold as amplitude, so the next layer sees
//! currents on the ANN's scale. This is equivalent to normalizing every
//! layer's weights by `scale_in / scale_out` with unit thresholds, but leaves
//! the weights untouched.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::network::{forward_ann, ForwardOptions, LayerParams, ModelParams, Mode, NetworkSpec, Norm, SpikeGain, NORM_EPS};
use crate::neuron::Threshold;
use crate::real::Real;
use crate::training::{evaluate, Dataset, EvalConfig, InputPipeline};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BalanceMode {
    Layerwise,
    Channelwise,
}

impl BalanceMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "layerwise" | "layer" => Ok(BalanceMode::Layerwise),
            "channelwise" | "channel" => Ok(BalanceMode::Channelwise),
            _ => Err(Error::Config(format!("unknown balancing mode `{s}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BalanceMode::Layerwise => "layerwise",
            BalanceMode::Channelwise => "channelwise",
        }
    }
}

pub const DEFAULT_PERCENTILE: f64 = 99.7;

#[derive(Clone, Debug, PartialEq)]
pub struct BalanceProfile {
    pub mode: BalanceMode,
    pub percentile: f64,
    pub samples: usize,
    /// Per spec layer: one scale (layerwise) or one per output channel.
    /// `None` for layers that do not fire.
    pub scales: Vec<Option<Vec<f64>>>,
    /// Firing layers that never activated during calibration.
    pub dead_layers: Vec<String>,
}

impl BalanceProfile {
    /// Unit scales everywhere: converted thresholds all equal 1.
    pub fn identity(spec: &NetworkSpec, mode: BalanceMode) -> Self {
        let scales = spec
            .layers
            .iter()
            .map(|l| {
                l.is_lif().then(|| {
                    let c = l.conv().expect("weighted").out_channels;
                    vec![1.0; if mode == BalanceMode::Channelwise { c } else { 1 }]
                })
            })
            .collect();
        BalanceProfile {
            mode,
            percentile: 100.0,
            samples: 0,
            scales,
            dead_layers: Vec::new(),
        }
    }

    /// Scales of spec layer `i`, if it fires.
    pub fn layer(&self, i: usize) -> Option<&[f64]> {
        self.scales.get(i)?.as_deref()
    }
}

/// Replaces every batch norm by an equivalent per-channel rescaling of the
/// weights plus a bias, using the running statistics.
pub fn fold_bn<F: Real>(spec: &NetworkSpec, params: &ModelParams<F>) -> Result<ModelParams<F>> {
    if params.mode != Mode::Ann {
        return Err(Error::Mode(format!(
            "batch-norm folding needs ann parameters, got {}",
            params.mode.name()
        )));
    }
    params.validate(spec)?;
    let mut out = params.clone();
    for (l, p) in spec.layers.iter().zip(out.layers.iter_mut()) {
        let Some(p) = p else { continue };
        let Norm::Batch(bn) = &p.norm else { continue };
        let c = bn.channels;
        let mut bias = p.bias.clone().unwrap_or_else(|| vec![F::zero(); c]);
        let scale: Vec<F> = (0..c)
            .map(|k| bn.gamma[k] / (bn.running_var[k] + F::of(NORM_EPS)).sqrt())
            .collect();
        for k in 0..c {
            bias[k] = (bias[k] - bn.running_mean[k]) * scale[k] + bn.beta[k];
        }
        let ws = p.weight.shape();
        let plane = ws.plane();
        for (i, tap) in p.weight.data_mut().chunks_mut(plane).enumerate() {
            // output channel is axis 0, or axis 1 for transposed weights
            let k = if l.is_transpose() { i % ws.c } else { i / ws.c };
            tap.iter_mut().for_each(|w| *w *= scale[k]);
        }
        p.bias = Some(bias);
        p.norm = Norm::None;
    }
    Ok(out)
}

/// Linear-interpolated percentile (`p` in `(0, 100]`) of unsorted values.
pub fn percentile(values: &mut [f32], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let rank = p / 100.0 * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    let (_, v_lo, rest) = values.select_nth_unstable_by(lo, f32::total_cmp);
    let v_lo = *v_lo as f64;
    if frac == 0.0 || rest.is_empty() {
        return v_lo;
    }
    let v_hi = rest.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    v_lo + frac * (v_hi - v_lo)
}

/// Records activation percentiles of every ReLU layer over `data`.
pub fn calibrate<F: Real>(
    spec: &NetworkSpec,
    params: &ModelParams<F>,
    data: &Dataset,
    mode: BalanceMode,
    percentile_p: f64,
    batch_size: usize,
) -> Result<BalanceProfile> {
    if !(percentile_p > 0.0 && percentile_p <= 100.0) {
        return Err(Error::Config(format!("percentile must lie in (0, 100], got {percentile_p}")));
    }
    if params.mode != Mode::Ann {
        return Err(Error::Mode(format!("calibration needs ann parameters, got {}", params.mode.name())));
    }
    if data.is_empty() || batch_size == 0 {
        return Err(Error::Config("calibration needs data and a batch size >= 1".into()));
    }
    let lif = spec.lif_layers();
    let mut acts: Vec<Vec<Vec<f32>>> = lif
        .iter()
        .map(|&i| {
            let c = spec.layers[i].conv().expect("weighted").out_channels;
            vec![Vec::new(); if mode == BalanceMode::Channelwise { c } else { 1 }]
        })
        .collect();
    let pipe = InputPipeline {
        mode: Mode::Ann,
        timesteps: 1,
        range: Default::default(),
        noise_sigma: 0.0,
        noise_salt: 0,
    };
    let order: Vec<usize> = (0..data.len()).collect();
    let opts = ForwardOptions {
        training: false,
        keep_cache: true,
    };
    for idx in order.chunks(batch_size) {
        let batch = pipe.batch::<F>(data, idx, 0)?;
        let out = forward_ann(spec, params, batch.input.frames(), opts)?;
        for (slot, &i) in acts.iter_mut().zip(&lif) {
            let a = out.activation(spec, i)?;
            let s = a.shape();
            for (k, plane) in a.data().chunks(s.plane()).enumerate() {
                let bucket = if slot.len() == 1 { 0 } else { k % s.c };
                slot[bucket].extend(plane.iter().map(|v| v.as_f64().max(0.0) as f32));
            }
        }
    }
    let mut scales = vec![None; spec.layers.len()];
    let mut dead_layers = Vec::new();
    for (slot, &i) in acts.iter_mut().zip(&lif) {
        let mut v = Vec::with_capacity(slot.len());
        let mut dead = false;
        for bucket in slot.iter_mut() {
            let s = percentile(bucket, percentile_p);
            if s > 0.0 && s.is_finite() {
                v.push(s);
            } else {
                dead = true;
                v.push(1.0);
            }
        }
        if dead {
            log::warn!("layer `{}` has no positive calibration activity; using scale 1", spec.layers[i].name);
            dead_layers.push(spec.layers[i].name.clone());
        }
        scales[i] = Some(v);
    }
    Ok(BalanceProfile {
        mode,
        percentile: percentile_p,
        samples: data.len(),
        scales,
        dead_layers,
    })
}

/// Builds the spiking twin: weights and biases copied bit-exactly, ReLU
/// layers turned into IF neurons with the profile's thresholds.
pub fn convert<F: Real>(spec: &NetworkSpec, folded: &ModelParams<F>, profile: &BalanceProfile) -> Result<ModelParams<F>> {
    if folded.mode != Mode::Ann {
        return Err(Error::Mode(format!("conversion needs ann parameters, got {}", folded.mode.name())));
    }
    if profile.scales.len() != spec.layers.len() {
        return Err(Error::Config(format!(
            "profile covers {} layers, network has {}",
            profile.scales.len(),
            spec.layers.len()
        )));
    }
    folded.validate(spec)?;
    let mut layers = Vec::with_capacity(spec.layers.len());
    for ((l, p), scale) in spec.layers.iter().zip(&folded.layers).zip(&profile.scales) {
        let Some(p) = p else {
            layers.push(None);
            continue;
        };
        if !matches!(p.norm, Norm::None) {
            return Err(Error::Config(format!("layer `{}` still has batch norm; fold it first", l.name)));
        }
        let threshold = match (l.is_lif(), scale) {
            (true, Some(s)) => {
                let c = l.conv().expect("weighted").out_channels;
                let expected = if profile.mode == BalanceMode::Channelwise { c } else { 1 };
                if s.len() != expected {
                    return Err(Error::Config(format!(
                        "{} profile gives {} scales for layer `{}`",
                        profile.mode.name(),
                        s.len(),
                        l.name
                    )));
                }
                Threshold::from_values(&s.iter().map(|&v| F::of(v)).collect::<Vec<F>>())
            }
            (false, None) => p.threshold.clone(),
            _ => return Err(Error::Config(format!("profile does not match layer `{}`", l.name))),
        };
        layers.push(Some(LayerParams {
            name: p.name.clone(),
            weight: p.weight.clone(),
            bias: p.bias.clone(),
            norm: Norm::None,
            threshold,
            leak: F::one(),
        }));
    }
    let out = ModelParams {
        mode: Mode::Spiking,
        spike_gain: SpikeGain::Threshold,
        layers,
    };
    out.validate(spec)?;
    Ok(out)
}

/// mIoU of a converted network at each simulation length.
pub fn sweep_timesteps<F: Real>(
    spec: &NetworkSpec,
    params: &ModelParams<F>,
    data: &Dataset,
    steps: &[usize],
    base: &EvalConfig,
) -> Result<Vec<(usize, f64)>> {
    if steps.is_empty() || steps.contains(&0) {
        return Err(Error::Validation("time-step list must be non-empty and >= 1".into()));
    }
    if steps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Validation("time-step list must be ascending".into()));
    }
    steps
        .iter()
        .map(|&t| {
            let cfg = EvalConfig {
                timesteps: t,
                ..base.clone()
            };
            Ok((t, evaluate(spec, params, data, &cfg)?.miou()))
        })
        .collect()
}

pub fn sweep_csv(rows: &[(usize, f64)]) -> String {
    let mut s = String::from("timesteps,miou\n");
    for (t, m) in rows {
        let _ = writeln!(s, "{t},{m:.6}");
    }
    s
}
