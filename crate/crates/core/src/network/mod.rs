//! Network description, parameters and the spiking / ANN executors.

mod exec;
mod params;
mod spec;

pub use exec::{backward, forward_ann, forward_any, forward_relaxed, forward_spiking, ForwardOptions, ForwardOutput, NormStats};
pub use params::{
    BatchNorm, Bntt, Gradients, LayerGrads, LayerParams, ModelParams, Mode, NamedTensor, NeuronConfig, Norm,
    SpikeGain, NORM_EPS, NORM_MOMENTUM,
};
pub use spec::{spiking_deeplab, spiking_fcn, ArchOptions, InputDims, LayerKind, LayerSpec, NetworkSpec};

use crate::error::Result;
use crate::real::Real;

/// Architecture plus freshly initialized parameters.
pub fn build_spiking_deeplab<F: Real>(
    num_classes: usize,
    input: InputDims,
    opts: ArchOptions,
    mode: Mode,
    neuron: NeuronConfig,
    seed: u64,
) -> Result<(NetworkSpec, ModelParams<F>)> {
    let spec = spiking_deeplab(num_classes, input, opts)?;
    let params = ModelParams::init(&spec, mode, neuron, seed)?;
    Ok((spec, params))
}

pub fn build_spiking_fcn<F: Real>(
    num_classes: usize,
    input: InputDims,
    opts: ArchOptions,
    mode: Mode,
    neuron: NeuronConfig,
    seed: u64,
) -> Result<(NetworkSpec, ModelParams<F>)> {
    let spec = spiking_fcn(num_classes, input, opts)?;
    let params = ModelParams::init(&spec, mode, neuron, seed)?;
    Ok((spec, params))
}
