//! Learnable and buffered state of a network, plus matching gradient storage.

use rand::Rng as _;

use super::spec::NetworkSpec;
use crate::error::{Error, Result};
use crate::neuron::Threshold;
use crate::real::Real;
use crate::rng::{derive_seed, rng_from};
use crate::tensor::{Shape4, Tensor4};

pub const NORM_MOMENTUM: f64 = 0.1;
pub const NORM_EPS: f64 = 1e-5;

/// How a network is executed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Spiking,
    /// Non-spiking twin: BN + ReLU in place of BNTT + LIF.
    Ann,
    /// Spiking graph with the piecewise-quadratic activation; only used to
    /// check gradients.
    Relaxed,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Spiking => "spiking",
            Mode::Ann => "ann",
            Mode::Relaxed => "relaxed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "spiking" | "snn" => Ok(Mode::Spiking),
            "ann" => Ok(Mode::Ann),
            "relaxed" => Ok(Mode::Relaxed),
            _ => Err(Error::Config(format!("unknown mode `{s}`"))),
        }
    }

    pub fn is_temporal(self) -> bool {
        !matches!(self, Mode::Ann)
    }
}

/// Amplitude of an emitted spike.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SpikeGain {
    Unit,
    /// Spikes carry the firing threshold of their channel (converted networks).
    Threshold,
}

/// Batch normalization through time: one scale per step and channel, no shift.
#[derive(Clone, Debug, PartialEq)]
pub struct Bntt<F> {
    pub steps: usize,
    pub channels: usize,
    /// `steps x channels`, step-major.
    pub gamma: Vec<F>,
    pub running_mean: Vec<F>,
    pub running_var: Vec<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<F> {
    pub channels: usize,
    pub gamma: Vec<F>,
    pub beta: Vec<F>,
    pub running_mean: Vec<F>,
    pub running_var: Vec<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Norm<F> {
    None,
    Bntt(Bntt<F>),
    Batch(BatchNorm<F>),
}

impl<F: Real> Norm<F> {
    pub fn bntt(steps: usize, channels: usize) -> Self {
        Norm::Bntt(Bntt {
            steps,
            channels,
            gamma: vec![F::one(); steps * channels],
            running_mean: vec![F::zero(); steps * channels],
            running_var: vec![F::one(); steps * channels],
        })
    }

    pub fn batch(channels: usize) -> Self {
        Norm::Batch(BatchNorm {
            channels,
            gamma: vec![F::one(); channels],
            beta: vec![F::zero(); channels],
            running_mean: vec![F::zero(); channels],
            running_var: vec![F::one(); channels],
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<F> {
    pub name: String,
    pub weight: Tensor4<F>,
    pub bias: Option<Vec<F>>,
    pub norm: Norm<F>,
    pub threshold: Threshold<F>,
    pub leak: F,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeuronConfig {
    pub leak: f64,
    pub threshold: f64,
    /// Number of BNTT steps (spiking and relaxed modes).
    pub steps: usize,
}

impl Default for NeuronConfig {
    fn default() -> Self {
        NeuronConfig {
            leak: 0.99,
            threshold: 1.0,
            steps: 20,
        }
    }
}

/// A flat named buffer, the unit of checkpoint storage.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor<F> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

impl<F> NamedTensor<F> {
    fn new(name: String, shape: Vec<usize>, data: Vec<F>) -> Self {
        NamedTensor { name, shape, data }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<F = f32> {
    pub mode: Mode,
    pub spike_gain: SpikeGain,
    /// One entry per layer of the spec; `None` for weightless layers.
    pub layers: Vec<Option<LayerParams<F>>>,
}

fn init_bound(fan_in: usize) -> f64 {
    (1.0 / fan_in.max(1) as f64).sqrt()
}

impl<F: Real> ModelParams<F> {
    /// Weights uniform in `[-b, b)` with `b = sqrt(1 / fan_in)`, each layer
    /// drawing from its own derived stream; zero biases on accumulating
    /// layers; unit norm scales. A transposed convolution's fan-in counts the
    /// taps that reach one output pixel, `C_in * (k / stride)^2`.
    pub fn init(spec: &NetworkSpec, mode: Mode, neuron: NeuronConfig, seed: u64) -> Result<Self> {
        spec.validate()?;
        if !(0.0..=1.0).contains(&neuron.leak) {
            return Err(Error::Config(format!("leak must lie in [0, 1], got {}", neuron.leak)));
        }
        if !(neuron.threshold > 0.0) {
            return Err(Error::Config("threshold must be > 0".into()));
        }
        if mode.is_temporal() && neuron.steps == 0 {
            return Err(Error::Config("timesteps must be >= 1".into()));
        }
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, l) in spec.layers.iter().enumerate() {
            let (Some(conv), Some(wshape)) = (l.conv(), l.weight_shape()) else {
                layers.push(None);
                continue;
            };
            let fan_in = if l.is_transpose() {
                conv.in_channels * (conv.kernel / conv.stride.max(1)).pow(2)
            } else {
                conv.fan_in()
            };
            let b = init_bound(fan_in);
            let mut rng = rng_from(derive_seed(seed, i as u64));
            let data = (0..wshape.len()).map(|_| F::of(rng.random_range(-b..b))).collect();
            let weight = Tensor4::from_vec(wshape, data)?;
            let c = conv.out_channels;
            let (norm, bias, threshold) = if l.accumulate {
                (Norm::None, Some(vec![F::zero(); c]), Threshold::Uniform(F::infinity()))
            } else {
                let norm = match mode {
                    Mode::Ann => Norm::batch(c),
                    Mode::Spiking | Mode::Relaxed => Norm::bntt(neuron.steps, c),
                };
                (norm, None, Threshold::Uniform(F::of(neuron.threshold)))
            };
            let leak = if l.accumulate { F::one() } else { F::of(neuron.leak) };
            layers.push(Some(LayerParams {
                name: l.name.clone(),
                weight,
                bias,
                norm,
                threshold,
                leak,
            }));
        }
        Ok(ModelParams {
            mode,
            spike_gain: SpikeGain::Unit,
            layers,
        })
    }

    /// Switches between the spiking and relaxed executors, which share
    /// parameters.
    pub fn with_mode(mut self, mode: Mode) -> Result<Self> {
        if (self.mode == Mode::Ann) != (mode == Mode::Ann) {
            return Err(Error::Mode(format!(
                "cannot reinterpret {} parameters as {}",
                self.mode.name(),
                mode.name()
            )));
        }
        self.mode = mode;
        Ok(self)
    }

    pub fn layer(&self, i: usize) -> Option<&LayerParams<F>> {
        self.layers.get(i).and_then(Option::as_ref)
    }

    /// Number of BNTT steps, if any layer uses BNTT.
    pub fn bntt_steps(&self) -> Option<usize> {
        self.layers.iter().flatten().find_map(|l| match &l.norm {
            Norm::Bntt(b) => Some(b.steps),
            _ => None,
        })
    }

    /// Checks every tensor against `spec`.
    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        if self.layers.len() != spec.layers.len() {
            return Err(Error::dim("layer count", spec.layers.len(), self.layers.len()));
        }
        for (l, p) in spec.layers.iter().zip(&self.layers) {
            match (l.weight_shape(), p) {
                (None, None) => {}
                (Some(ws), Some(p)) => {
                    p.weight.expect_shape(ws, &format!("{} weight", l.name))?;
                    let c = l.conv().expect("weighted").out_channels;
                    if let Some(b) = &p.bias {
                        if b.len() != c {
                            return Err(Error::dim(format!("{} bias", l.name), c, b.len()));
                        }
                    }
                    let norm_c = match &p.norm {
                        Norm::None => c,
                        Norm::Bntt(b) => {
                            if b.gamma.len() != b.steps * b.channels {
                                return Err(Error::dim(
                                    format!("{} bntt gamma", l.name),
                                    b.steps * b.channels,
                                    b.gamma.len(),
                                ));
                            }
                            b.channels
                        }
                        Norm::Batch(b) => b.channels,
                    };
                    if norm_c != c {
                        return Err(Error::dim(format!("{} norm channels", l.name), c, norm_c));
                    }
                    p.threshold.validate(c)?;
                    if !(p.leak >= F::zero() && p.leak <= F::one()) {
                        return Err(Error::Validation(format!("{} leak outside [0, 1]", l.name)));
                    }
                }
                _ => {
                    return Err(Error::Validation(format!(
                        "layer `{}` has mismatched parameter presence",
                        l.name
                    )))
                }
            }
        }
        Ok(())
    }

    /// Visits every trainable buffer in a fixed order.
    pub fn visit_trainable_mut(&mut self, mut f: impl FnMut(&str, &mut [F])) {
        for p in self.layers.iter_mut().flatten() {
            f(&format!("{}.weight", p.name), p.weight.data_mut());
            if let Some(b) = &mut p.bias {
                f(&format!("{}.bias", p.name), b);
            }
            match &mut p.norm {
                Norm::None => {}
                Norm::Bntt(b) => f(&format!("{}.bntt.gamma", p.name), &mut b.gamma),
                Norm::Batch(b) => {
                    f(&format!("{}.bn.gamma", p.name), &mut b.gamma);
                    f(&format!("{}.bn.beta", p.name), &mut b.beta);
                }
            }
        }
    }

    pub fn trainable_count(&self) -> usize {
        let mut n = 0;
        let mut me = self.clone();
        me.visit_trainable_mut(|_, d| n += d.len());
        n
    }

    /// Every buffer, trainable or not, as a flat list.
    pub fn to_named(&self) -> Vec<NamedTensor<F>> {
        let mut out = Vec::new();
        for p in self.layers.iter().flatten() {
            let n = &p.name;
            let s = p.weight.shape();
            out.push(NamedTensor::new(
                format!("{n}.weight"),
                vec![s.n, s.c, s.h, s.w],
                p.weight.data().to_vec(),
            ));
            if let Some(b) = &p.bias {
                out.push(NamedTensor::new(format!("{n}.bias"), vec![b.len()], b.clone()));
            }
            match &p.norm {
                Norm::None => {}
                Norm::Bntt(b) => {
                    let sh = vec![b.steps, b.channels];
                    out.push(NamedTensor::new(format!("{n}.bntt.gamma"), sh.clone(), b.gamma.clone()));
                    out.push(NamedTensor::new(
                        format!("{n}.bntt.running_mean"),
                        sh.clone(),
                        b.running_mean.clone(),
                    ));
                    out.push(NamedTensor::new(format!("{n}.bntt.running_var"), sh, b.running_var.clone()));
                }
                Norm::Batch(b) => {
                    let sh = vec![b.channels];
                    out.push(NamedTensor::new(format!("{n}.bn.gamma"), sh.clone(), b.gamma.clone()));
                    out.push(NamedTensor::new(format!("{n}.bn.beta"), sh.clone(), b.beta.clone()));
                    out.push(NamedTensor::new(
                        format!("{n}.bn.running_mean"),
                        sh.clone(),
                        b.running_mean.clone(),
                    ));
                    out.push(NamedTensor::new(format!("{n}.bn.running_var"), sh, b.running_var.clone()));
                }
            }
            let th = match &p.threshold {
                Threshold::Uniform(v) => vec![*v],
                Threshold::PerChannel(vs) => vs.clone(),
            };
            out.push(NamedTensor::new(format!("{n}.threshold"), vec![th.len()], th));
            out.push(NamedTensor::new(format!("{n}.leak"), vec![1], vec![p.leak]));
        }
        out
    }

    /// Inverse of [`to_named`](Self::to_named); every buffer must be present
    /// exactly once and nothing else may be.
    pub fn from_named(
        spec: &NetworkSpec,
        mode: Mode,
        spike_gain: SpikeGain,
        tensors: Vec<NamedTensor<F>>,
    ) -> Result<Self> {
        let mut map: std::collections::BTreeMap<String, NamedTensor<F>> = std::collections::BTreeMap::new();
        for t in tensors {
            let expected: usize = t.shape.iter().product();
            if expected != t.data.len() {
                return Err(Error::dim(format!("tensor `{}`", t.name), expected, t.data.len()));
            }
            if map.insert(t.name.clone(), t).is_some() {
                return Err(Error::Validation("duplicate tensor name".into()));
            }
        }
        let mut take = |name: String| -> Result<NamedTensor<F>> {
            map.remove(&name)
                .ok_or_else(|| Error::Validation(format!("missing tensor `{name}`")))
        };
        let mut layers = Vec::with_capacity(spec.layers.len());
        for l in &spec.layers {
            let Some(ws) = l.weight_shape() else {
                layers.push(None);
                continue;
            };
            let n = &l.name;
            let w = take(format!("{n}.weight"))?;
            if w.shape != [ws.n, ws.c, ws.h, ws.w] {
                return Err(Error::Validation(format!("tensor `{n}.weight` has shape {:?}", w.shape)));
            }
            let weight = Tensor4::from_vec(ws, w.data)?;
            let bias = take(format!("{n}.bias")).ok().map(|t| t.data);
            let norm = if let Ok(g) = take(format!("{n}.bntt.gamma")) {
                let (steps, channels) = match g.shape[..] {
                    [s, c] => (s, c),
                    _ => return Err(Error::Validation(format!("bad bntt shape for `{n}`"))),
                };
                Norm::Bntt(Bntt {
                    steps,
                    channels,
                    gamma: g.data,
                    running_mean: take(format!("{n}.bntt.running_mean"))?.data,
                    running_var: take(format!("{n}.bntt.running_var"))?.data,
                })
            } else if let Ok(g) = take(format!("{n}.bn.gamma")) {
                Norm::Batch(BatchNorm {
                    channels: g.data.len(),
                    gamma: g.data,
                    beta: take(format!("{n}.bn.beta"))?.data,
                    running_mean: take(format!("{n}.bn.running_mean"))?.data,
                    running_var: take(format!("{n}.bn.running_var"))?.data,
                })
            } else {
                Norm::None
            };
            let threshold = Threshold::from_values(&take(format!("{n}.threshold"))?.data);
            let leak = *take(format!("{n}.leak"))?
                .data
                .first()
                .ok_or_else(|| Error::Validation(format!("empty leak for `{n}`")))?;
            layers.push(Some(LayerParams {
                name: n.clone(),
                weight,
                bias,
                norm,
                threshold,
                leak,
            }));
        }
        if let Some(extra) = map.keys().next() {
            return Err(Error::Validation(format!("unexpected tensor `{extra}`")));
        }
        let params = ModelParams {
            mode,
            spike_gain,
            layers,
        };
        params.validate(spec)?;
        Ok(params)
    }

    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        let v = |xs: &Vec<F>| xs.iter().map(|x| G::of(x.as_f64())).collect::<Vec<G>>();
        ModelParams {
            mode: self.mode,
            spike_gain: self.spike_gain,
            layers: self
                .layers
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| LayerParams {
                        name: p.name.clone(),
                        weight: p.weight.cast(),
                        bias: p.bias.as_ref().map(v),
                        norm: match &p.norm {
                            Norm::None => Norm::None,
                            Norm::Bntt(b) => Norm::Bntt(Bntt {
                                steps: b.steps,
                                channels: b.channels,
                                gamma: v(&b.gamma),
                                running_mean: v(&b.running_mean),
                                running_var: v(&b.running_var),
                            }),
                            Norm::Batch(b) => Norm::Batch(BatchNorm {
                                channels: b.channels,
                                gamma: v(&b.gamma),
                                beta: v(&b.beta),
                                running_mean: v(&b.running_mean),
                                running_var: v(&b.running_var),
                            }),
                        },
                        threshold: match &p.threshold {
                            Threshold::Uniform(t) => Threshold::Uniform(G::of(t.as_f64())),
                            Threshold::PerChannel(ts) => Threshold::PerChannel(v(ts)),
                        },
                        leak: G::of(p.leak.as_f64()),
                    })
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads<F> {
    pub weight: Tensor4<F>,
    pub bias: Option<Vec<F>>,
    pub gamma: Option<Vec<F>>,
    pub beta: Option<Vec<F>>,
}

/// Gradients laid out exactly like the trainable buffers of [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<F = f32> {
    pub layers: Vec<Option<LayerGrads<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn zeros_like(params: &ModelParams<F>) -> Self {
        let z = |v: &Vec<F>| vec![F::zero(); v.len()];
        Gradients {
            layers: params
                .layers
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| {
                        let (gamma, beta) = match &p.norm {
                            Norm::None => (None, None),
                            Norm::Bntt(b) => (Some(z(&b.gamma)), None),
                            Norm::Batch(b) => (Some(z(&b.gamma)), Some(z(&b.beta))),
                        };
                        LayerGrads {
                            weight: Tensor4::zeros(p.weight.shape()),
                            bias: p.bias.as_ref().map(z),
                            gamma,
                            beta,
                        }
                    })
                })
                .collect(),
        }
    }

    /// Same order as [`ModelParams::visit_trainable_mut`].
    pub fn visit(&self, params: &ModelParams<F>, mut f: impl FnMut(&str, &[F])) {
        for (g, p) in self.layers.iter().zip(&params.layers) {
            let (Some(g), Some(p)) = (g, p) else { continue };
            f(&format!("{}.weight", p.name), g.weight.data());
            if let Some(b) = &g.bias {
                f(&format!("{}.bias", p.name), b);
            }
            let norm = match &p.norm {
                Norm::Bntt(_) => "bntt",
                _ => "bn",
            };
            if let Some(b) = &g.gamma {
                f(&format!("{}.{norm}.gamma", p.name), b);
            }
            if let Some(b) = &g.beta {
                f(&format!("{}.bn.beta", p.name), b);
            }
        }
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(&mut [F])) {
        for g in self.layers.iter_mut().flatten() {
            f(g.weight.data_mut());
            for b in [&mut g.bias, &mut g.gamma, &mut g.beta].into_iter().flatten() {
                f(b);
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        let mut me = self.clone();
        let mut s = 0.0;
        me.visit_mut(|d| s += d.iter().map(|v| v.as_f64().powi(2)).sum::<f64>());
        s.sqrt()
    }

    pub fn scale(&mut self, k: F) {
        self.visit_mut(|d| d.iter_mut().for_each(|v| *v *= k));
    }
}

/// Shape helper for callers that need per-channel broadcasting.
pub(crate) fn channel_of(i: usize, shape: Shape4) -> usize {
    (i / shape.plane()) % shape.c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::spec::{spiking_deeplab, spiking_fcn, ArchOptions, InputDims};

    #[test]
    fn init_is_seeded() {
        let spec = spiking_fcn(3, InputDims::new(1, 16, 16), ArchOptions { width_divisor: 16, dilation: [2, 2] })
            .unwrap();
        let a = ModelParams::<f32>::init(&spec, Mode::Spiking, NeuronConfig::default(), 7).unwrap();
        let b = ModelParams::<f32>::init(&spec, Mode::Spiking, NeuronConfig::default(), 7).unwrap();
        let c = ModelParams::<f32>::init(&spec, Mode::Spiking, NeuronConfig::default(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        a.validate(&spec).unwrap();
    }

    #[test]
    fn named_round_trip() {
        let spec = spiking_deeplab(3, InputDims::new(2, 8, 8), ArchOptions { width_divisor: 32, dilation: [2, 2] })
            .unwrap();
        for mode in [Mode::Spiking, Mode::Ann] {
            let p = ModelParams::<f32>::init(&spec, mode, NeuronConfig::default(), 1).unwrap();
            let back = ModelParams::from_named(&spec, mode, SpikeGain::Unit, p.to_named()).unwrap();
            assert_eq!(back, p);
        }
    }

    #[test]
    fn from_named_rejects_missing_and_extra() {
        let spec = spiking_deeplab(3, InputDims::new(1, 8, 8), ArchOptions { width_divisor: 32, dilation: [2, 2] })
            .unwrap();
        let p = ModelParams::<f32>::init(&spec, Mode::Spiking, NeuronConfig::default(), 1).unwrap();
        let mut named = p.to_named();
        named.pop();
        assert!(ModelParams::from_named(&spec, Mode::Spiking, SpikeGain::Unit, named).is_err());
        let mut named = p.to_named();
        named.push(NamedTensor::new("ghost".into(), vec![1], vec![0.0]));
        assert!(ModelParams::from_named(&spec, Mode::Spiking, SpikeGain::Unit, named).is_err());
    }

    #[test]
    fn gradient_visit_matches_params() {
        let spec = spiking_deeplab(3, InputDims::new(1, 8, 8), ArchOptions { width_divisor: 32, dilation: [2, 2] })
            .unwrap();
        let mut p = ModelParams::<f32>::init(&spec, Mode::Ann, NeuronConfig::default(), 1).unwrap();
        let g = Gradients::zeros_like(&p);
        let mut a = Vec::new();
        p.visit_trainable_mut(|n, d| a.push((n.to_string(), d.len())));
        let mut b = Vec::new();
        g.visit(&p, |n, d| b.push((n.to_string(), d.len())));
        assert_eq!(a, b);
    }
}
