//! Dotted-key experiment configuration: `key = value` lines, `#` comments.
//!
//! Every key has a default, unknown keys are rejected, and [`to_text`]
//! writes every key so the echoed text parses back to the same config.
//!
//! [`to_text`]: ExperimentConfig::to_text

use std::fmt::Write as _;
use std::path::PathBuf;

use spikeseg::conversion::BalanceMode;
use spikeseg::encoding::IntensityRange;
use spikeseg::network::{ArchOptions, InputDims, Mode, NeuronConfig};
use spikeseg::training::{EvalConfig, StepDecay, TrainConfig};

use crate::error::{CliError, Result};
use crate::synth::SyntheticSegSpec;

pub trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Result<Self, String>;
    fn show(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
            fn show(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_value!(usize, u64, f64, bool, String);

impl<T: ConfigValue> ConfigValue for Option<T> {
    fn parse_value(s: &str) -> Result<Self, String> {
        if s == "none" {
            Ok(None)
        } else {
            T::parse_value(s).map(Some)
        }
    }
    fn show(&self) -> String {
        self.as_ref().map_or_else(|| "none".into(), T::show)
    }
}

impl<T: ConfigValue> ConfigValue for Vec<T> {
    fn parse_value(s: &str) -> Result<Self, String> {
        if s.is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(|p| T::parse_value(p.trim())).collect()
    }
    fn show(&self) -> String {
        self.iter().map(T::show).collect::<Vec<_>>().join(",")
    }
}

impl<T: ConfigValue + Copy, const N: usize> ConfigValue for [T; N] {
    fn parse_value(s: &str) -> Result<Self, String> {
        let v: Vec<T> = Vec::parse_value(s)?;
        v.try_into().map_err(|v: Vec<T>| format!("expected {N} comma-separated values, got {}", v.len()))
    }
    fn show(&self) -> String {
        self.iter().map(T::show).collect::<Vec<_>>().join(",")
    }
}

macro_rules! keyword_value {
    ($t:ident { $($variant:ident = $name:literal),* $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq)]
        pub enum $t { $($variant),* }

        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Result<Self, String> {
                match s {
                    $($name => Ok($t::$variant),)*
                    _ => Err(format!("expected one of: {}", [$($name),*].join(", "))),
                }
            }
            fn show(&self) -> String {
                match self { $($t::$variant => $name.into()),* }
            }
        }
    };
}

keyword_value!(Arch { DeepLab = "deeplab", Fcn = "fcn" });
keyword_value!(DataSource { Synthetic = "synthetic", Dir = "dir" });
keyword_value!(Encoder { Poisson = "poisson", Dvs = "dvs" });

impl ConfigValue for Mode {
    fn parse_value(s: &str) -> Result<Self, String> {
        match Mode::parse(s).map_err(|e| e.to_string())? {
            m @ (Mode::Spiking | Mode::Ann) => Ok(m),
            _ => Err("model.mode must be spiking or ann".into()),
        }
    }
    fn show(&self) -> String {
        self.name().into()
    }
}

impl ConfigValue for BalanceMode {
    fn parse_value(s: &str) -> Result<Self, String> {
        BalanceMode::parse(s).map_err(|e| e.to_string())
    }
    fn show(&self) -> String {
        self.name().into()
    }
}

macro_rules! experiment_config {
    ($($field:ident : $ty:ty = $key:literal, $default:expr;)*) => {
        #[derive(Clone, Debug, PartialEq)]
        pub struct ExperimentConfig {
            $(pub $field: $ty,)*
        }

        impl Default for ExperimentConfig {
            fn default() -> Self {
                ExperimentConfig { $($field: $default,)* }
            }
        }

        impl ExperimentConfig {
            pub const KEYS: &'static [&'static str] = &[$($key),*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                let key = resolve_alias(key);
                match key {
                    $($key => {
                        self.$field = <$ty as ConfigValue>::parse_value(value)
                            .map_err(|e| CliError::Usage(format!("bad value `{value}` for {key}: {e}")))?;
                    })*
                    _ => return Err(CliError::Usage(format!("unknown config key `{key}`"))),
                }
                Ok(())
            }

            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$(($key, ConfigValue::show(&self.$field)),)*]
            }
        }
    };
}

experiment_config! {
    arch: Arch = "model.arch", Arch::DeepLab;
    mode: Mode = "model.mode", Mode::Spiking;
    num_classes: usize = "model.num_classes", 3;
    width_divisor: usize = "model.width_divisor", 1;
    dilation: [usize; 2] = "model.dilation", [2, 2];
    channels: usize = "input.channels", 1;
    height: usize = "input.height", 64;
    width: usize = "input.width", 64;
    range: [f64; 2] = "input.range", [0.0, 1.0];
    timesteps: usize = "neuron.timesteps", 20;
    leak: f64 = "neuron.leak", 0.99;
    threshold: f64 = "neuron.threshold", 1.0;
    epochs: usize = "train.epochs", 60;
    batch_size: usize = "train.batch_size", 16;
    lr: f64 = "train.lr", 3e-3;
    lr_decay: f64 = "train.lr_decay", 10.0;
    lr_milestone: f64 = "train.lr_milestone", 0.5;
    seed: u64 = "train.seed", 0;
    grad_clip: Option<f64> = "train.grad_clip", None;
    stop_at_miou: Option<f64> = "train.stop_at_miou", None;
    wall_clock: bool = "train.wall_clock", false;
    eval_batch_size: usize = "eval.batch_size", 32;
    eval_seed: u64 = "eval.seed", 0;
    source: DataSource = "data.source", DataSource::Synthetic;
    data_dir: String = "data.dir", String::new();
    train_split: String = "data.train_split", "train".into();
    eval_split: String = "data.eval_split", "eval".into();
    encoder: Encoder = "data.encoder", Encoder::Poisson;
    window_us: u64 = "data.window_us", 1000;
    synth_train: usize = "synth.train", 400;
    synth_eval: usize = "synth.eval", 100;
    synth_shapes: usize = "synth.shapes_per_image", 2;
    synth_min_area: usize = "synth.min_area", 12;
    synth_background: [f64; 2] = "synth.background", [0.0, 0.3];
    synth_foreground: [f64; 2] = "synth.foreground", [0.4, 1.0];
    synth_noise: f64 = "synth.noise", 0.05;
    synth_seed: u64 = "synth.seed", 0;
    balance: BalanceMode = "convert.balance", BalanceMode::Layerwise;
    percentile: f64 = "convert.percentile", spikeseg::conversion::DEFAULT_PERCENTILE;
    calib_samples: usize = "convert.calib_samples", 64;
    sweep_timesteps: Vec<usize> = "sweep.timesteps", vec![8, 32, 128, 512];
    sigmas: Vec<f64> = "robustness.sigmas", vec![0.1, 0.2, 0.3, 0.4];
    output_dir: String = "output.dir", "runs/default".into();
}

/// Short flag names accepted on the command line.
const ALIASES: &[(&str, &str)] = &[
    ("arch", "model.arch"),
    ("model", "model.arch"),
    ("mode", "model.mode"),
    ("classes", "model.num_classes"),
    ("num_classes", "model.num_classes"),
    ("width_divisor", "model.width_divisor"),
    ("timesteps", "neuron.timesteps"),
    ("T", "neuron.timesteps"),
    ("leak", "neuron.leak"),
    ("threshold", "neuron.threshold"),
    ("epochs", "train.epochs"),
    ("batch", "train.batch_size"),
    ("batch_size", "train.batch_size"),
    ("lr", "train.lr"),
    ("seed", "train.seed"),
    ("data", "data.dir"),
    ("encoder", "data.encoder"),
    ("output_dir", "output.dir"),
    ("balance", "convert.balance"),
    ("percentile", "convert.percentile"),
    ("sigmas", "robustness.sigmas"),
];

pub fn resolve_alias(key: &str) -> &str {
    ALIASES
        .iter()
        .find(|(a, _)| *a == key)
        .map_or(key, |(_, k)| k)
}

pub fn is_config_key(key: &str) -> bool {
    ExperimentConfig::KEYS.contains(&resolve_alias(key))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`", i + 1)))?;
            let k = k.trim();
            if !seen.insert(resolve_alias(k).to_string()) {
                return Err(CliError::Usage(format!("config line {}: duplicate key `{k}`", i + 1)));
            }
            cfg.set(k, v.trim())
                .map_err(|e| CliError::Usage(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Applies `(key, value)` overrides in order.
    pub fn apply(&mut self, overrides: &[(String, String)]) -> Result<()> {
        for (k, v) in overrides {
            self.set(k, v)?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Usage(m));
        if self.num_classes < 2 || self.num_classes > 255 {
            return bad(format!("model.num_classes must be in 2..=255, got {}", self.num_classes));
        }
        for (k, v) in [
            ("input.channels", self.channels),
            ("input.height", self.height),
            ("input.width", self.width),
            ("neuron.timesteps", self.timesteps),
            ("train.batch_size", self.batch_size),
            ("eval.batch_size", self.eval_batch_size),
            ("model.width_divisor", self.width_divisor),
        ] {
            if v == 0 {
                return bad(format!("{k} must be >= 1"));
            }
        }
        if !(self.range[0] < self.range[1]) {
            return bad("input.range must be increasing".into());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("train.lr must be positive, got {}", self.lr));
        }
        if self.window_us == 0 {
            return bad("data.window_us must be >= 1".into());
        }
        if self.source == DataSource::Dir && self.data_dir.is_empty() {
            return bad("data.source = dir needs data.dir".into());
        }
        if self.encoder == Encoder::Dvs && self.channels != 2 {
            return bad("data.encoder = dvs needs input.channels = 2 (ON/OFF)".into());
        }
        Ok(())
    }

    pub fn input(&self) -> InputDims {
        InputDims::new(self.channels, self.height, self.width)
    }

    pub fn arch_options(&self) -> ArchOptions {
        ArchOptions {
            width_divisor: self.width_divisor,
            dilation: self.dilation,
        }
    }

    pub fn neuron(&self) -> NeuronConfig {
        NeuronConfig {
            leak: self.leak,
            threshold: self.threshold,
            steps: self.timesteps,
        }
    }

    pub fn intensity_range(&self) -> IntensityRange {
        IntensityRange {
            min: self.range[0],
            max: self.range[1],
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            schedule: StepDecay {
                factor: self.lr_decay,
                milestone: self.lr_milestone,
            },
            timesteps: self.timesteps,
            seed: self.seed,
            range: self.intensity_range(),
            grad_clip: self.grad_clip,
            stop_at_miou: self.stop_at_miou,
            wall_clock: self.wall_clock,
            eval_batch_size: self.eval_batch_size,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            timesteps: self.timesteps,
            batch_size: self.eval_batch_size,
            seed: self.eval_seed,
            range: self.intensity_range(),
            noise_sigma: 0.0,
            noise_salt: 0,
        }
    }

    pub fn synth_spec(&self) -> SyntheticSegSpec {
        SyntheticSegSpec {
            channels: self.channels,
            height: self.height,
            width: self.width,
            num_classes: self.num_classes,
            train: self.synth_train,
            eval: self.synth_eval,
            shapes_per_image: self.synth_shapes,
            min_area: self.synth_min_area,
            background: self.synth_background,
            foreground: self.synth_foreground,
            noise: self.synth_noise,
            seed: self.synth_seed,
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        PathBuf::from(&self.output_dir)
    }
}
