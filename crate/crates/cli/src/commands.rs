//! Subcommand implementations. Each writes its report to `out` and its
//! artifacts atomically to disk; none of them prints timing.

use std::io::Write;
use std::path::{Path, PathBuf};

use spikeseg::conversion::{calibrate, convert, fold_bn, sweep_csv, sweep_timesteps, BalanceProfile};
use spikeseg::encoding::{dvs_accumulate, poisson_encode, EventStream};
use spikeseg::energy::{ann_energy, energy, EnergyReport};
use spikeseg::network::{build_spiking_deeplab, build_spiking_fcn, ModelParams, NetworkSpec};
use spikeseg::robustness::{robustness_csv, robustness_sweep, NamedModel, RobustnessRow};
use spikeseg::training::{evaluate, train, Dataset, EvalResult, SampleInput};
use spikeseg::{Mode, Tensor4};

use crate::checkpoint::Checkpoint;
use crate::config::{Arch, ExperimentConfig};
use crate::dataset;
use crate::error::{CliError, Result};
use crate::fsio;
use crate::pnm::{palette, Image};
use crate::synth::image_tensor;

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Io {
            path: PathBuf::from("<stdout>"),
            source: e,
        })
}

/// Network and freshly initialized parameters for the configured model.
pub fn build_model(cfg: &ExperimentConfig) -> Result<(NetworkSpec, ModelParams<f32>)> {
    let build = match cfg.arch {
        Arch::DeepLab => build_spiking_deeplab::<f32>,
        Arch::Fcn => build_spiking_fcn::<f32>,
    };
    let (spec, params) = build(
        cfg.num_classes,
        cfg.input(),
        cfg.arch_options(),
        cfg.mode,
        cfg.neuron(),
        cfg.seed,
    )?;
    Ok((spec, params))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub best_miou: f64,
    pub best_epoch: usize,
    pub log_csv: String,
}

/// Writes `config.txt`, `train_log.csv`, `best.sseg` and `final.sseg` into
/// the output directory.
pub fn cmd_train(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<TrainSummary> {
    let dir = cfg.output_dir();
    let text = cfg.to_text();
    emit(out, &format!("# resolved config\n{text}# end config\n"))?;
    fsio::write_atomic(&dir.join("config.txt"), text.as_bytes())?;
    let (train_set, eval_set) = dataset::load(cfg)?;
    let (spec, params) = build_model(cfg)?;
    emit(
        out,
        &format!(
            "{} layers, {} parameters, {} training / {} eval samples\n",
            spec.layers.len(),
            params.trainable_count(),
            train_set.len(),
            eval_set.len()
        ),
    )?;
    let mut failed = None;
    let outcome = train(&spec, params, &train_set, Some(&eval_set), &cfg.train_config(), |r| {
        let mut line = format!(
            "epoch {:>3}  loss {:.4}  train_miou {:.4}",
            r.train.epoch, r.train.loss, r.train.miou
        );
        if let Some(v) = r.val {
            line += &format!("  eval_loss {:.4}  eval_miou {:.4}", v.loss, v.miou);
        }
        line += &format!("  lr {:e}\n", r.train.lr);
        if failed.is_none() {
            failed = emit(out, &line).and_then(|_| out.flush().map_err(|e| CliError::io("<stdout>", e))).err();
        }
    })?;
    if let Some(e) = failed {
        return Err(e);
    }
    let log_csv = outcome.log.to_csv();
    fsio::write_atomic(&dir.join("train_log.csv"), log_csv.as_bytes())?;
    Checkpoint {
        spec: spec.clone(),
        params: outcome.best,
        optim: None,
    }
    .save(&dir.join("best.sseg"))?;
    Checkpoint {
        spec,
        params: outcome.params,
        optim: Some(outcome.optim),
    }
    .save(&dir.join("final.sseg"))?;
    emit(
        out,
        &format!("best eval_miou {:.4} at epoch {}\n", outcome.best_miou, outcome.best_epoch),
    )?;
    Ok(TrainSummary {
        best_miou: outcome.best_miou,
        best_epoch: outcome.best_epoch,
        log_csv,
    })
}

fn check_classes(ck: &Checkpoint, data: &Dataset) -> Result<()> {
    if ck.spec.num_classes != data.num_classes {
        return Err(spikeseg::Error::Validation(format!(
            "checkpoint predicts {} classes, dataset has {}",
            ck.spec.num_classes, data.num_classes
        ))
        .into());
    }
    Ok(())
}

pub fn miou_table(result: &EvalResult) -> String {
    let r = result.confusion.result();
    let mut s = String::from("class  iou\n");
    for (c, iou) in r.per_class.iter().enumerate() {
        let v = iou.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        s += &format!("{c:<5}  {v}\n");
    }
    s += &format!("mean   {:.4}\n", r.mean);
    s
}

/// Prints the per-class IoU table. With `overlays`, writes one
/// `NNNN.ppm` per sample: input, prediction and ground truth side by side.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    split: &str,
    overlays: Option<&Path>,
    out: &mut dyn Write,
) -> Result<EvalResult> {
    let ck = Checkpoint::load(checkpoint)?;
    let data = dataset::load_split(cfg, split)?;
    check_classes(&ck, &data)?;
    let result = evaluate(&ck.spec, &ck.params, &data, &cfg.eval_config())?;
    emit(out, &format!("{} samples, split {split}\n", data.len()))?;
    emit(out, &miou_table(&result))?;
    if let Some(dir) = overlays {
        let px = data.input.height * data.input.width;
        for (i, sample) in data.samples.iter().enumerate() {
            let pred = &result.predictions[i * px..(i + 1) * px];
            overlay(cfg, &sample.input, pred, &sample.label, data.input.width).write(&dir.join(format!("{i:04}.ppm")))?;
        }
        emit(out, &format!("{} overlays written to {}\n", data.len(), dir.display()))?;
    }
    Ok(result)
}

fn overlay(cfg: &ExperimentConfig, input: &SampleInput, pred: &[u8], label: &[u8], w: usize) -> Image {
    let h = label.len() / w;
    let gray: Vec<u8> = match input {
        SampleInput::Image(t) => {
            let span = cfg.range[1] - cfg.range[0];
            (0..h * w)
                .map(|p| {
                    let v = (f64::from(t.at(0, 0, p / w, p % w)) - cfg.range[0]) / span;
                    (v.clamp(0.0, 1.0) * 255.0).round() as u8
                })
                .collect()
        }
        SampleInput::Frames(fs) => {
            let counts: Vec<f32> = (0..h * w)
                .map(|p| fs.iter().map(|f| (0..f.shape().c).map(|c| f.at(0, c, p / w, p % w)).sum::<f32>()).sum())
                .collect();
            let peak = counts.iter().cloned().fold(0.0f32, f32::max).max(1.0);
            counts.iter().map(|c| (c / peak * 255.0).round() as u8).collect()
        }
    };
    let mut img = Image::new(3 * w, h, 3);
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            for c in 0..3 {
                img.set(x, y, c, gray[p]);
                img.set(w + x, y, c, palette(pred[p])[c]);
                img.set(2 * w + x, y, c, palette(label[p])[c]);
            }
        }
    }
    img
}

/// Energy report of a checkpoint; spiking runs are traced over `split`.
pub fn cmd_profile(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    split: &str,
    csv_out: Option<&Path>,
    out: &mut dyn Write,
) -> Result<EnergyReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let report = if ck.params.mode == Mode::Ann {
        emit(out, "notice: ann checkpoint, reporting E_ANN only\n")?;
        ann_energy(&ck.spec)?
    } else {
        let data = dataset::load_split(cfg, split)?;
        check_classes(&ck, &data)?;
        let result = evaluate(&ck.spec, &ck.params, &data, &cfg.eval_config())?;
        energy(&ck.spec, &result.trace)?
    };
    let csv = report.to_csv();
    match csv_out {
        Some(p) => {
            fsio::write_atomic(p, csv.as_bytes())?;
            let ratio = report.ratio().map_or_else(|| "-".into(), |r| format!("{r:.3}"));
            emit(out, &format!("E_ANN/E_SNN {ratio}; report written to {}\n", p.display()))?;
        }
        None => emit(out, &csv)?,
    }
    Ok(report)
}

/// Folds normalization, calibrates on the training split and writes the
/// converted spiking checkpoint.
pub fn cmd_convert(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    dest: &Path,
    out: &mut dyn Write,
) -> Result<BalanceProfile> {
    let ck = Checkpoint::load(checkpoint)?;
    if ck.params.mode != Mode::Ann {
        return Err(spikeseg::Error::Mode(format!(
            "conversion needs an ann checkpoint, {} is {}",
            checkpoint.display(),
            ck.params.mode.name()
        ))
        .into());
    }
    let data = dataset::load_split(cfg, "train")?;
    check_classes(&ck, &data)?;
    let calib: Vec<usize> = (0..data.len().min(cfg.calib_samples.max(1))).collect();
    let calib = data.subset(&calib);
    let folded = fold_bn(&ck.spec, &ck.params)?;
    let profile = calibrate(&ck.spec, &folded, &calib, cfg.balance, cfg.percentile, cfg.eval_batch_size)?;
    let params = convert(&ck.spec, &folded, &profile)?;
    Checkpoint {
        spec: ck.spec.clone(),
        params,
        optim: None,
    }
    .save(dest)?;
    let mut s = format!(
        "{} balancing at percentile {} over {} samples\n",
        profile.mode.name(),
        profile.percentile,
        profile.samples
    );
    for (l, scales) in ck.spec.layers.iter().zip(&profile.scales) {
        if let Some(v) = scales {
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            s += &if v.len() == 1 {
                format!("{:<12} threshold {lo:.6}\n", l.name)
            } else {
                format!("{:<12} thresholds {} in [{lo:.6}, {hi:.6}]\n", l.name, v.len())
            };
        }
    }
    for d in &profile.dead_layers {
        s += &format!("warning: layer {d} never activated, threshold left at 1\n");
    }
    s += &format!("converted checkpoint written to {}\n", dest.display());
    emit(out, &s)?;
    Ok(profile)
}

/// mIoU over the configured simulation lengths on the eval split.
pub fn cmd_sweep(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    csv_out: Option<&Path>,
    out: &mut dyn Write,
) -> Result<Vec<(usize, f64)>> {
    let ck = Checkpoint::load(checkpoint)?;
    let data = dataset::load_split(cfg, "eval")?;
    check_classes(&ck, &data)?;
    let rows = sweep_timesteps(&ck.spec, &ck.params, &data, &cfg.sweep_timesteps, &cfg.eval_config())?;
    let csv = sweep_csv(&rows);
    if let Some(p) = csv_out {
        fsio::write_atomic(p, csv.as_bytes())?;
    }
    emit(out, &csv)?;
    Ok(rows)
}

/// `name=path` or a bare path (named after its file stem).
pub fn parse_model_arg(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((n, p)) => (n.to_string(), PathBuf::from(p)),
        None => {
            let p = PathBuf::from(arg);
            let name = p.file_stem().map_or_else(|| arg.to_string(), |s| s.to_string_lossy().into_owned());
            (name, p)
        }
    }
}

/// Noise sweep of every model on the eval split.
pub fn cmd_robustness(
    cfg: &ExperimentConfig,
    models: &[(String, PathBuf)],
    csv_out: Option<&Path>,
    out: &mut dyn Write,
) -> Result<Vec<RobustnessRow>> {
    if models.is_empty() {
        return Err(CliError::Usage("robustness needs at least one model".into()));
    }
    let cks = models
        .iter()
        .map(|(_, p)| Checkpoint::load(p))
        .collect::<Result<Vec<_>>>()?;
    let data = dataset::load_split(cfg, "eval")?;
    for ck in &cks {
        check_classes(ck, &data)?;
    }
    let named: Vec<NamedModel<'_, f32>> = models
        .iter()
        .zip(&cks)
        .map(|((name, _), ck)| NamedModel {
            name: name.clone(),
            spec: &ck.spec,
            params: &ck.params,
        })
        .collect();
    let rows = robustness_sweep(&named, &data, &cfg.sigmas, &cfg.eval_config())?;
    let csv = robustness_csv(&rows);
    if let Some(p) = csv_out {
        fsio::write_atomic(p, csv.as_bytes())?;
    }
    emit(out, &csv)?;
    let max_sigma = rows.iter().map(|r| r.sigma).fold(0.0, f64::max);
    let mut at_max: Vec<&RobustnessRow> = rows.iter().filter(|r| r.sigma == max_sigma).collect();
    at_max.sort_by(|a, b| a.drop_pct.unwrap_or(f64::INFINITY).total_cmp(&b.drop_pct.unwrap_or(f64::INFINITY)));
    let order: Vec<&str> = at_max.iter().map(|r| r.model.as_str()).collect();
    emit(out, &format!("# most robust at sigma {max_sigma}: {}\n", order.join(" > ")))?;
    Ok(rows)
}

pub fn cmd_synth(cfg: &ExperimentConfig, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let spec = cfg.synth_spec();
    let set = spec.generate()?;
    set.write(&spec, dir)?;
    emit(
        out,
        &format!(
            "{} training and {} eval scenes written to {}\n",
            set.train.len(),
            set.eval.len(),
            dir.display()
        ),
    )
}

/// Dumps the spike frames of one input: an image through the Poisson
/// encoder (`neuron.timesteps` frames, seeded by `train.seed`) or an event
/// file through DVS binning (red ON, green OFF counts).
pub fn cmd_encode(cfg: &ExperimentConfig, input: &Path, dir: &Path, out: &mut dyn Write) -> Result<usize> {
    let ext = input.extension().and_then(|e| e.to_str()).unwrap_or("");
    let frames: Vec<Image> = if matches!(ext, "pgm" | "ppm" | "pnm") {
        let img = Image::read(input)?;
        let t = image_tensor(&img, cfg.intensity_range());
        let train = poisson_encode(&t, cfg.timesteps, cfg.seed, cfg.intensity_range())?;
        train.frames().iter().map(|f| spike_image(f, img.channels)).collect()
    } else {
        let stream = EventStream::parse(&fsio::read_text(input)?).map_err(|e| CliError::format(input, e.to_string()))?;
        let (train, _) = dvs_accumulate::<f32>(&stream, cfg.window_us)?;
        train.frames().iter().map(event_image).collect()
    };
    for (t, f) in frames.iter().enumerate() {
        let ext = if f.channels == 3 { "ppm" } else { "pgm" };
        f.write(&dir.join(format!("{t:04}.{ext}")))?;
    }
    emit(out, &format!("{} frames written to {}\n", frames.len(), dir.display()))?;
    Ok(frames.len())
}

fn spike_image(f: &Tensor4<f32>, channels: usize) -> Image {
    let s = f.shape();
    let mut img = Image::new(s.w, s.h, channels);
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..channels {
                img.set(x, y, c, if f.at(0, c, y, x) > 0.0 { 255 } else { 0 });
            }
        }
    }
    img
}

fn event_image(f: &Tensor4<f32>) -> Image {
    let s = f.shape();
    let mut img = Image::new(s.w, s.h, 3);
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..2 {
                img.set(x, y, c, (f.at(0, c, y, x) * 64.0).min(255.0) as u8);
            }
        }
    }
    img
}
