//! Surrogate-gradient training: loss, optimizer, data pipeline, epoch loop.

mod data;
mod loss;
mod optim;
mod trainer;

pub use data::{item_shape, Batch, Dataset, InputPipeline, Sample, SampleInput};
pub use loss::{spatial_cross_entropy, LossValue};
pub use optim::{adam_step, check_finite, OptimState, StepDecay};
pub use trainer::{evaluate, train, EpochReport, EvalConfig, EvalResult, LogRow, TrainConfig, TrainLog, TrainOutcome};

use crate::encoding::SpikeTrain;
use crate::error::Result;
use crate::network::{backward, forward_any, ForwardOptions, Gradients, ModelParams, NetworkSpec};
use crate::real::Real;

/// One forward/backward pass on a prepared batch; returns the loss value and
/// the gradients of every trainable buffer.
pub fn bptt_backward<F: Real>(
    spec: &NetworkSpec,
    params: &ModelParams<F>,
    input: &SpikeTrain<F>,
    labels: &[u8],
    ignore_index: u8,
) -> Result<(LossValue<F>, Gradients<F>)> {
    let out = forward_any(spec, params, input, ForwardOptions::train())?;
    let lv = spatial_cross_entropy(&out.logits, labels, ignore_index)?;
    let grads = backward(spec, params, &out, &lv.grad)?;
    Ok((lv, grads))
}
