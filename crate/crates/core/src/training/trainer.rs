//! The epoch loop: encode, run all steps, loss on the accumulated classifier
//! membrane, backpropagate through time, update.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::data::{Dataset, InputPipeline};
use super::loss::spatial_cross_entropy;
use super::optim::{adam_step, OptimState, StepDecay};
use crate::encoding::IntensityRange;
use crate::energy::SpikeTrace;
use crate::error::{Error, Result};
use crate::metrics::{argmax, Confusion, IGNORE_INDEX};
use crate::network::{backward, forward_any, ForwardOptions, ModelParams, Mode, NetworkSpec};
use crate::real::Real;
use crate::rng::{derive_path, rng_from};

const SHUFFLE: u64 = 1;
const ENCODE: u64 = 2;
const EVAL: u64 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub schedule: StepDecay,
    /// Poisson steps for image data; must match the BNTT steps.
    pub timesteps: usize,
    pub seed: u64,
    pub range: IntensityRange,
    /// Rescale the global gradient norm down to this value.
    pub grad_clip: Option<f64>,
    /// End training once the validation mIoU reaches this value.
    pub stop_at_miou: Option<f64>,
    /// Record real elapsed time in the log (makes logs non-reproducible).
    pub wall_clock: bool,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 16,
            lr: 3e-3,
            schedule: StepDecay::default(),
            timesteps: 20,
            seed: 0,
            range: IntensityRange::default(),
            grad_clip: None,
            stop_at_miou: None,
            wall_clock: false,
            eval_batch_size: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    pub miou: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub const HEADER: &'static str = "epoch,split,loss,miou,lr,wall_ms";

    pub fn row_csv(r: &LogRow) -> String {
        format!("{},{},{:.6},{:.6},{:e},{}", r.epoch, r.split, r.loss, r.miou, r.lr, r.wall_ms)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{}", Self::row_csv(r));
        }
        s
    }
}

pub struct TrainOutcome<F> {
    pub params: ModelParams<F>,
    /// Parameters of the epoch with the highest validation (or training) mIoU.
    pub best: ModelParams<F>,
    pub best_miou: f64,
    pub best_epoch: usize,
    pub log: TrainLog,
    pub optim: OptimState<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub timesteps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub range: IntensityRange,
    pub noise_sigma: f64,
    pub noise_salt: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            timesteps: 20,
            batch_size: 32,
            seed: 0,
            range: IntensityRange::default(),
            noise_sigma: 0.0,
            noise_salt: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalResult {
    pub loss: f64,
    pub confusion: Confusion,
    pub trace: SpikeTrace,
    /// Arg-max class per pixel for every sample, in dataset order.
    pub predictions: Vec<u8>,
}

impl EvalResult {
    pub fn miou(&self) -> f64 {
        self.confusion.result().mean
    }
}

fn check_data(spec: &NetworkSpec, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    if data.num_classes != spec.num_classes {
        return Err(Error::Validation(format!(
            "dataset has {} classes, network {}",
            data.num_classes, spec.num_classes
        )));
    }
    if data.input != spec.input {
        return Err(Error::Validation(format!(
            "dataset input {:?} differs from network input {:?}",
            data.input, spec.input
        )));
    }
    Ok(())
}

/// Inference over a whole dataset with running normalization statistics.
pub fn evaluate<F: Real>(
    spec: &NetworkSpec,
    params: &ModelParams<F>,
    data: &Dataset,
    cfg: &EvalConfig,
) -> Result<EvalResult> {
    check_data(spec, data)?;
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    let pipe = InputPipeline {
        mode: params.mode,
        timesteps: cfg.timesteps,
        range: cfg.range,
        noise_sigma: cfg.noise_sigma,
        noise_salt: cfg.noise_salt,
    };
    let mut confusion = Confusion::new(spec.num_classes)?;
    let mut trace = SpikeTrace::default();
    let mut predictions = Vec::new();
    let (mut loss_sum, mut count) = (0.0, 0usize);
    let order: Vec<usize> = (0..data.len()).collect();
    for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
        let batch = pipe.batch::<F>(data, idx, derive_path(cfg.seed, &[EVAL, b as u64]))?;
        let out = forward_any(spec, params, &batch.input, ForwardOptions::eval())?;
        let lv = spatial_cross_entropy(&out.logits, &batch.labels, IGNORE_INDEX)?;
        loss_sum += lv.loss.as_f64() * lv.count as f64;
        count += lv.count;
        let pred = argmax(&out.logits);
        confusion.add(&pred, &batch.labels, IGNORE_INDEX)?;
        predictions.extend_from_slice(&pred);
        trace.merge(&out.trace)?;
    }
    Ok(EvalResult {
        loss: if count == 0 { 0.0 } else { loss_sum / count as f64 },
        confusion,
        trace,
        predictions,
    })
}

/// Summary handed to the progress callback after each epoch.
pub struct EpochReport<'a> {
    pub train: &'a LogRow,
    pub val: Option<&'a LogRow>,
}

/// Algorithm 1 with Adam and a step-decay schedule. Fully determined by
/// `(params, data, cfg)`.
pub fn train<F: Real>(
    spec: &NetworkSpec,
    params: ModelParams<F>,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport<'_>),
) -> Result<TrainOutcome<F>> {
    check_data(spec, train_set)?;
    if let Some(v) = val_set {
        check_data(spec, v)?;
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("epochs and batch size must be >= 1".into()));
    }
    let steps = match (params.mode, train_set.frame_count()) {
        (Mode::Ann, _) => 1,
        (_, Some(f)) => f,
        (_, None) => cfg.timesteps,
    };
    if let Some(b) = params.bntt_steps() {
        if b != steps {
            return Err(Error::Config(format!(
                "network normalizes {b} time-steps, input provides {steps}"
            )));
        }
    }
    let mut params = params;
    let mut optim = OptimState::new(&params, cfg.lr)?;
    optim.schedule = cfg.schedule;
    let pipe = InputPipeline {
        mode: params.mode,
        timesteps: cfg.timesteps,
        range: cfg.range,
        noise_sigma: 0.0,
        noise_salt: 0,
    };
    let eval_cfg = EvalConfig {
        timesteps: cfg.timesteps,
        batch_size: cfg.eval_batch_size,
        seed: cfg.seed,
        range: cfg.range,
        noise_sigma: 0.0,
        noise_salt: 0,
    };
    let start = Instant::now();
    let wall = |start: &Instant| {
        if cfg.wall_clock {
            start.elapsed().as_millis() as u64
        } else {
            0
        }
    };
    let mut log = TrainLog::default();
    let mut best = (f64::NEG_INFINITY, 0usize, params.clone());
    for epoch in 1..=cfg.epochs {
        optim.lr = cfg.schedule.lr(cfg.lr, epoch, cfg.epochs);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut rng_from(derive_path(cfg.seed, &[SHUFFLE, epoch as u64])));
        let mut confusion = Confusion::new(spec.num_classes)?;
        let (mut loss_sum, mut count) = (0.0, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let seed = derive_path(cfg.seed, &[ENCODE, epoch as u64, b as u64]);
            let batch = pipe.batch::<F>(train_set, idx, seed)?;
            let out = forward_any(spec, &params, &batch.input, ForwardOptions::train())?;
            let lv = spatial_cross_entropy(&out.logits, &batch.labels, IGNORE_INDEX)?;
            loss_sum += lv.loss.as_f64() * lv.count as f64;
            count += lv.count;
            confusion.add(&argmax(&out.logits), &batch.labels, IGNORE_INDEX)?;
            let mut grads = backward(spec, &params, &out, &lv.grad)?;
            if let Some(max) = cfg.grad_clip {
                let norm = grads.global_norm();
                if norm > max {
                    grads.scale(F::of(max / norm));
                }
            }
            adam_step(&mut params, &grads, &mut optim)?;
            params.update_running_stats(&out.norm_stats);
        }
        let train_row = LogRow {
            epoch,
            split: "train",
            loss: if count == 0 { 0.0 } else { loss_sum / count as f64 },
            miou: confusion.result().mean,
            lr: optim.lr,
            wall_ms: wall(&start),
        };
        let val_row = match val_set {
            Some(v) => {
                let r = evaluate(spec, &params, v, &eval_cfg)?;
                Some(LogRow {
                    epoch,
                    split: "val",
                    loss: r.loss,
                    miou: r.miou(),
                    lr: optim.lr,
                    wall_ms: wall(&start),
                })
            }
            None => None,
        };
        on_epoch(&EpochReport {
            train: &train_row,
            val: val_row.as_ref(),
        });
        let score = val_row.as_ref().unwrap_or(&train_row).miou;
        if score > best.0 {
            best = (score, epoch, params.clone());
        }
        log.rows.push(train_row);
        if let Some(r) = val_row {
            log.rows.push(r);
        }
        if cfg.stop_at_miou.is_some_and(|target| score >= target) {
            break;
        }
    }
    Ok(TrainOutcome {
        params,
        best: best.2,
        best_miou: best.0,
        best_epoch: best.1,
        log,
        optim,
    })
}
