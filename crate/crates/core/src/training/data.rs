//! In-memory datasets and the per-batch input pipeline (noise, encoding).

use rand_distr::{Distribution, Normal};

use crate::encoding::{poisson_encode, IntensityRange, SpikeTrain};
use crate::error::{Error, Result};
use crate::network::{InputDims, Mode};
use crate::real::Real;
use crate::rng::{derive_seed, rng_from};
use crate::tensor::{Shape4, Tensor4};

#[derive(Clone, Debug, PartialEq)]
pub enum SampleInput {
    /// Static image `(1, C, H, W)` with intensities in the encoder range.
    Image(Tensor4<f32>),
    /// Pre-binned event frames, each `(1, C, H, W)`; bypass the Poisson encoder.
    Frames(Vec<Tensor4<f32>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: SampleInput,
    /// Class index per pixel, row-major `H * W`.
    pub label: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub input: InputDims,
    pub num_classes: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(input: InputDims, num_classes: usize, samples: Vec<Sample>) -> Result<Self> {
        let d = Dataset {
            input,
            num_classes,
            samples,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Number of frames of an event dataset; `None` for images.
    pub fn frame_count(&self) -> Option<usize> {
        match &self.samples.first()?.input {
            SampleInput::Frames(f) => Some(f.len()),
            SampleInput::Image(_) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let want = self.input.shape(1);
        let plane = want.plane();
        let frames = self.frame_count();
        for (i, s) in self.samples.iter().enumerate() {
            match (&s.input, frames) {
                (SampleInput::Image(t), None) => t.expect_shape(want, &format!("sample {i}"))?,
                (SampleInput::Frames(fs), Some(n)) => {
                    if fs.len() != n || n == 0 {
                        return Err(Error::dim(format!("sample {i} frames"), n, fs.len()));
                    }
                    for f in fs {
                        f.expect_shape(want, &format!("sample {i} frame"))?;
                    }
                }
                _ => return Err(Error::Validation("dataset mixes images and event frames".into())),
            }
            if s.label.len() != plane {
                return Err(Error::dim(format!("sample {i} label"), plane, s.label.len()));
            }
        }
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            input: self.input,
            num_classes: self.num_classes,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

/// How raw samples become network input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InputPipeline {
    pub mode: Mode,
    /// Poisson steps for image datasets in spiking / relaxed mode.
    pub timesteps: usize,
    pub range: IntensityRange,
    /// Standard deviation of additive Gaussian noise; 0 disables it.
    pub noise_sigma: f64,
    /// Selects an independent noise stream without changing the encoding.
    pub noise_salt: u64,
}

/// A network-ready batch: the input as time-steps (or ANN frames) and the
/// concatenated labels.
pub struct Batch<F> {
    pub input: SpikeTrain<F>,
    pub labels: Vec<u8>,
}

fn add_noise(data: &mut [f32], sigma: f64, seed: u64, lo: f32, hi: f32) {
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let mut rng = rng_from(seed);
    for v in data {
        *v = (*v + normal.sample(&mut rng) as f32).clamp(lo, hi);
    }
}

impl InputPipeline {
    /// Builds the batch for `indices`. Noise (before encoding) and Poisson
    /// sampling draw from streams derived from `seed` and each sample's
    /// position in the batch.
    pub fn batch<F: Real>(&self, data: &Dataset, indices: &[usize], seed: u64) -> Result<Batch<F>> {
        if indices.is_empty() {
            return Err(Error::Validation("empty batch".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise sigma must be >= 0".into()));
        }
        let noise_seed = derive_seed(derive_seed(seed, 0x6e6f), self.noise_salt);
        let enc_seed = derive_seed(seed, 0x656e);
        let mut labels = Vec::with_capacity(indices.len() * data.input.height * data.input.width);
        for &i in indices {
            labels.extend_from_slice(&data.samples[i].label);
        }
        let (lo, hi) = (self.range.min as f32, self.range.max as f32);
        let input = match data.frame_count() {
            None => {
                let mut images = Vec::with_capacity(indices.len());
                for (k, &i) in indices.iter().enumerate() {
                    let SampleInput::Image(img) = &data.samples[i].input else { unreachable!() };
                    let mut img = img.clone();
                    if self.noise_sigma > 0.0 {
                        add_noise(img.data_mut(), self.noise_sigma, derive_seed(noise_seed, k as u64), lo, hi);
                    }
                    images.push(img);
                }
                let stacked: Tensor4<F> = Tensor4::concat_batch(&images)?.cast();
                match self.mode {
                    Mode::Ann => SpikeTrain::new(vec![stacked])?,
                    _ => {
                        if self.timesteps == 0 {
                            return Err(Error::Validation("timesteps must be >= 1".into()));
                        }
                        poisson_encode(&stacked, self.timesteps, enc_seed, self.range)?
                    }
                }
            }
            Some(nf) => {
                let mut frames: Vec<Vec<Tensor4<f32>>> = vec![Vec::with_capacity(indices.len()); nf];
                for (k, &i) in indices.iter().enumerate() {
                    let SampleInput::Frames(fs) = &data.samples[i].input else { unreachable!() };
                    for (t, f) in fs.iter().enumerate() {
                        let mut f = f.clone();
                        if self.noise_sigma > 0.0 {
                            let s = derive_seed(derive_seed(noise_seed, k as u64), t as u64);
                            add_noise(f.data_mut(), self.noise_sigma, s, 0.0, f32::INFINITY);
                        }
                        frames[t].push(f);
                    }
                }
                let steps = frames
                    .iter()
                    .map(|fs| Tensor4::concat_batch(fs).map(|t| t.cast()))
                    .collect::<Result<Vec<Tensor4<F>>>>()?;
                SpikeTrain::new(steps)?
            }
        };
        Ok(Batch { input, labels })
    }
}

/// Shape of one batch item.
pub fn item_shape(d: &Dataset) -> Shape4 {
    d.input.shape(1)
}
