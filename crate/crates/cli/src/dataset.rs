//! Dataset directories: a `manifest.txt` with `classes K`, `input C H W` and
//! `<split> <input> <label>` lines, paths relative to the directory.
//!
//! Inputs are PGM/PPM images (Poisson encoder) or event text files (DVS
//! encoder). Event streams are binned into `window_us` frames and cut or
//! zero-padded to the configured number of time-steps.

use std::path::{Path, PathBuf};

use spikeseg::encoding::{dvs_accumulate, EventStream};
use spikeseg::metrics::IGNORE_INDEX;
use spikeseg::network::InputDims;
use spikeseg::training::{Dataset, Sample, SampleInput};
use spikeseg::{Shape4, Tensor4};

use crate::config::{DataSource, Encoder, ExperimentConfig};
use crate::error::{CliError, Result};
use crate::fsio;
use crate::pnm::Image;
use crate::synth::{image_tensor, scenes_to_dataset};

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub classes: usize,
    pub input: InputDims,
    pub entries: Vec<Entry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub split: String,
    pub input: PathBuf,
    pub label: PathBuf,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.txt");
        let text = fsio::read_text(&path)?;
        let bad = |i: usize, m: &str| CliError::format(&path, format!("line {}: {m}", i + 1));
        let (mut classes, mut input, mut entries) = (None, None, Vec::new());
        for (i, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| s.parse::<usize>().map_err(|_| bad(i, "expected an integer"));
            match f.as_slice() {
                [] => {}
                [c, ..] if c.starts_with('#') => {}
                ["classes", k] => classes = Some(num(k)?),
                ["input", c, h, w] => input = Some(InputDims::new(num(c)?, num(h)?, num(w)?)),
                [split, x, y] => entries.push(Entry {
                    split: split.to_string(),
                    input: dir.join(x),
                    label: dir.join(y),
                }),
                _ => return Err(bad(i, "expected `<split> <input> <label>`")),
            }
        }
        Ok(Manifest {
            classes: classes.ok_or_else(|| CliError::format(&path, "missing `classes` line"))?,
            input: input.ok_or_else(|| CliError::format(&path, "missing `input` line"))?,
            entries,
        })
    }
}

pub fn read_label(path: &Path, input: InputDims, classes: usize) -> Result<Vec<u8>> {
    let img = Image::read(path)?;
    if img.channels != 1 || img.width != input.width || img.height != input.height {
        return Err(CliError::format(
            path,
            format!("label map must be a {}x{} graymap", input.width, input.height),
        ));
    }
    if let Some(&c) = img.data.iter().find(|&&c| c as usize >= classes && c != IGNORE_INDEX) {
        return Err(CliError::format(path, format!("class index {c} >= {classes}")));
    }
    Ok(img.data)
}

/// Event frames, exactly `steps` of them, each `(1, 2, H, W)`.
pub fn event_frames(path: &Path, input: InputDims, window_us: u64, steps: usize) -> Result<Vec<Tensor4<f32>>> {
    let stream = EventStream::parse(&fsio::read_text(path)?).map_err(|e| CliError::format(path, e.to_string()))?;
    if stream.height != input.height || stream.width != input.width {
        return Err(CliError::format(
            path,
            format!("sensor {}x{} differs from input {}x{}", stream.width, stream.height, input.width, input.height),
        ));
    }
    let (train, _) = dvs_accumulate::<f32>(&stream, window_us)?;
    let dropped = train.frames().iter().skip(steps).map(|f| f.sum()).sum::<f32>();
    if dropped > 0.0 {
        log::debug!("{}: {dropped} events beyond {steps} frames dropped", path.display());
    }
    let mut frames: Vec<_> = train.into_frames().into_iter().take(steps).collect();
    frames.resize(steps, Tensor4::zeros(Shape4::new(1, 2, input.height, input.width)));
    Ok(frames)
}

fn load_dir(cfg: &ExperimentConfig, split: &str) -> Result<Dataset> {
    let dir = Path::new(&cfg.data_dir);
    let m = Manifest::read(dir)?;
    if m.input != cfg.input() {
        return Err(CliError::Usage(format!(
            "dataset input {}x{}x{} differs from config {}x{}x{}",
            m.input.channels, m.input.height, m.input.width, cfg.channels, cfg.height, cfg.width
        )));
    }
    let range = cfg.intensity_range();
    let samples = m
        .entries
        .iter()
        .filter(|e| e.split == split)
        .map(|e| {
            let label = read_label(&e.label, m.input, m.classes)?;
            let input = match cfg.encoder {
                Encoder::Poisson => {
                    let img = Image::read(&e.input)?;
                    if img.channels != m.input.channels || img.width != m.input.width || img.height != m.input.height {
                        return Err(CliError::format(&e.input, "image size differs from manifest input"));
                    }
                    SampleInput::Image(image_tensor(&img, range))
                }
                Encoder::Dvs => SampleInput::Frames(event_frames(&e.input, m.input, cfg.window_us, cfg.timesteps)?),
            };
            Ok(Sample { input, label })
        })
        .collect::<Result<Vec<_>>>()?;
    if samples.is_empty() {
        return Err(CliError::format(dir.join("manifest.txt"), format!("split `{split}` is empty")));
    }
    Ok(Dataset::new(m.input, m.classes, samples)?)
}

/// The training and evaluation splits named by the config.
pub fn load(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    match cfg.source {
        DataSource::Dir => Ok((load_dir(cfg, &cfg.train_split)?, load_dir(cfg, &cfg.eval_split)?)),
        DataSource::Synthetic => {
            let spec = cfg.synth_spec();
            let set = spec.generate()?;
            let build = |s: &[_]| scenes_to_dataset(s, spec.input(), spec.num_classes, cfg.intensity_range());
            Ok((build(&set.train)?, build(&set.eval)?))
        }
    }
}

/// A single split: `train`/`eval` map onto the configured split names.
pub fn load_split(cfg: &ExperimentConfig, split: &str) -> Result<Dataset> {
    let (train, eval) = match cfg.source {
        DataSource::Dir => {
            let name = match split {
                "train" => cfg.train_split.as_str(),
                "eval" => cfg.eval_split.as_str(),
                other => other,
            };
            return load_dir(cfg, name);
        }
        DataSource::Synthetic => load(cfg)?,
    };
    match split {
        "train" => Ok(train),
        "eval" => Ok(eval),
        s => Err(CliError::Usage(format!("synthetic data has splits train and eval, not `{s}`"))),
    }
}
