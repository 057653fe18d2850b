//! Synthetic segmentation scenes: a flat background plus rectangles, disks
//! and triangles, one shape class each, with per-class intensity bands.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use spikeseg::encoding::IntensityRange;
use spikeseg::network::InputDims;
use spikeseg::rng::{derive_seed, rng_from};
use spikeseg::training::{Dataset, Sample, SampleInput};
use spikeseg::Tensor4;

use crate::error::{CliError, Result};
use crate::pnm::Image;

const MAX_ATTEMPTS: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSegSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Background plus `num_classes - 1` shape classes.
    pub num_classes: usize,
    pub train: usize,
    pub eval: usize,
    /// Each image holds between 1 and this many shapes.
    pub shapes_per_image: usize,
    /// Visible pixels each shape must keep after occlusion.
    pub min_area: usize,
    pub background: [f64; 2],
    /// Split into `num_classes - 1` equal bands, one per class.
    pub foreground: [f64; 2],
    /// Half-width of the uniform per-pixel noise.
    pub noise: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Rectangle,
    Disk,
    Triangle,
}

impl ShapeKind {
    pub fn of_class(class: u8) -> Self {
        match (class as usize - 1) % 3 {
            0 => ShapeKind::Rectangle,
            1 => ShapeKind::Disk,
            _ => ShapeKind::Triangle,
        }
    }
}

/// One rendered scene.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scene {
    pub image: Image,
    pub label: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntheticSet {
    pub train: Vec<Scene>,
    pub eval: Vec<Scene>,
}

impl SyntheticSegSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CliError::Usage(format!("synthetic spec: {m}")));
        if self.num_classes < 2 || self.num_classes > 255 {
            return bad("num_classes must be in 2..=255");
        }
        if self.channels != 1 && self.channels != 3 {
            return bad("channels must be 1 or 3");
        }
        if self.height < 8 || self.width < 8 {
            return bad("images must be at least 8x8");
        }
        if self.shapes_per_image == 0 {
            return bad("shapes_per_image must be >= 1");
        }
        let ok = |r: [f64; 2]| (0.0..=1.0).contains(&r[0]) && r[0] <= r[1] && r[1] <= 1.0;
        if !ok(self.background) || !ok(self.foreground) {
            return bad("intensity ranges must be ordered pairs within [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return bad("noise must be in [0, 1]");
        }
        Ok(())
    }

    pub fn input(&self) -> InputDims {
        InputDims::new(self.channels, self.height, self.width)
    }

    /// Intensity band of shape class `c >= 1`.
    fn band(&self, c: u8) -> (f64, f64) {
        let [lo, hi] = self.foreground;
        let w = (hi - lo) / (self.num_classes - 1) as f64;
        (lo + w * (c - 1) as f64, lo + w * c as f64)
    }

    /// Renders both splits. Training scene `i` always contains class
    /// `1 + i % (K - 1)`, so every shape class is present once there are at
    /// least `K - 1` training scenes.
    pub fn generate(&self) -> Result<SyntheticSet> {
        self.validate()?;
        let split = |which: u64, n: usize, forced: bool| -> Result<Vec<Scene>> {
            let seed = derive_seed(self.seed, which);
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let first = forced.then(|| 1 + (i % (self.num_classes - 1)) as u8);
                    self.scene(derive_seed(seed, i as u64), first)
                })
                .collect()
        };
        Ok(SyntheticSet {
            train: split(0, self.train, true)?,
            eval: split(1, self.eval, false)?,
        })
    }

    fn scene(&self, seed: u64, first: Option<u8>) -> Result<Scene> {
        let mut rng = rng_from(seed);
        let (h, w) = (self.height, self.width);
        for _ in 0..MAX_ATTEMPTS {
            let count = rng.random_range(1..=self.shapes_per_image);
            let mut label = vec![0u8; h * w];
            let mut owner = vec![usize::MAX; h * w];
            let mut shapes = Vec::with_capacity(count);
            for s in 0..count {
                let class = match (s, first) {
                    (0, Some(c)) => c,
                    _ => rng.random_range(1..self.num_classes) as u8,
                };
                let mask = shape_mask(ShapeKind::of_class(class), h, w, &mut rng);
                for (p, inside) in mask.iter().enumerate() {
                    if *inside {
                        label[p] = class;
                        owner[p] = s;
                    }
                }
                let (lo, hi) = self.band(class);
                shapes.push(rng.random_range(lo..=hi));
            }
            let visible = (0..count).all(|s| owner.iter().filter(|&&o| o == s).count() >= self.min_area);
            if !visible {
                continue;
            }
            let bg = rng.random_range(self.background[0]..=self.background[1]);
            let mut image = Image::new(w, h, self.channels);
            for p in 0..h * w {
                let base = if owner[p] == usize::MAX { bg } else { shapes[owner[p]] };
                let jitter = if self.noise > 0.0 {
                    rng.random_range(-self.noise..=self.noise)
                } else {
                    0.0
                };
                let v = ((base + jitter).clamp(0.0, 1.0) * 255.0).round() as u8;
                for c in 0..self.channels {
                    image.data[p * self.channels + c] = v;
                }
            }
            return Ok(Scene { image, label });
        }
        Err(CliError::Usage(format!(
            "synthetic spec: no scene satisfied min_area {} after {MAX_ATTEMPTS} attempts",
            self.min_area
        )))
    }
}

fn shape_mask(kind: ShapeKind, h: usize, w: usize, rng: &mut impl Rng) -> Vec<bool> {
    let s = h.min(w) as f64;
    let (hf, wf) = (h as f64, w as f64);
    let mut mask = vec![false; h * w];
    let mut fill = |inside: &dyn Fn(f64, f64) -> bool| {
        for y in 0..h {
            for x in 0..w {
                mask[y * w + x] = inside(x as f64 + 0.5, y as f64 + 0.5);
            }
        }
    };
    match kind {
        ShapeKind::Rectangle => {
            let rw = rng.random_range(s / 5.0..=s / 2.0);
            let rh = rng.random_range(s / 5.0..=s / 2.0);
            let x0 = rng.random_range(0.0..=wf - rw);
            let y0 = rng.random_range(0.0..=hf - rh);
            fill(&|x, y| x >= x0 && x < x0 + rw && y >= y0 && y < y0 + rh);
        }
        ShapeKind::Disk => {
            let r = rng.random_range(s / 10.0..=s / 4.0);
            let cx = rng.random_range(r..=wf - r);
            let cy = rng.random_range(r..=hf - r);
            fill(&|x, y| (x - cx).powi(2) + (y - cy).powi(2) <= r * r);
        }
        ShapeKind::Triangle => {
            let size = rng.random_range(s / 4.0..=s / 2.0);
            let x0 = rng.random_range(0.0..=wf - size);
            let y0 = rng.random_range(0.0..=hf - size);
            let mut vertex = || (x0 + rng.random_range(0.0..=size), y0 + rng.random_range(0.0..=size));
            let (a, b, c) = (vertex(), vertex(), vertex());
            let cross = |p: (f64, f64), q: (f64, f64), x: f64, y: f64| (q.0 - p.0) * (y - p.1) - (q.1 - p.1) * (x - p.0);
            fill(&|x, y| {
                let (d1, d2, d3) = (cross(a, b, x, y), cross(b, c, x, y), cross(c, a, x, y));
                let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                !(neg && pos)
            });
        }
    }
    mask
}

/// Planar `(1, C, H, W)` tensor mapping byte values onto `range`.
pub fn image_tensor(img: &Image, range: IntensityRange) -> Tensor4<f32> {
    let dims = InputDims::new(img.channels, img.height, img.width);
    let span = range.max - range.min;
    Tensor4::from_fn(dims.shape(1), |_, c, y, x| {
        (range.min + span * f64::from(img.get(x, y, c)) / 255.0) as f32
    })
}

pub fn scenes_to_dataset(
    scenes: &[Scene],
    input: InputDims,
    num_classes: usize,
    range: IntensityRange,
) -> Result<Dataset> {
    let samples = scenes
        .iter()
        .map(|s| Sample {
            input: SampleInput::Image(image_tensor(&s.image, range)),
            label: s.label.clone(),
        })
        .collect();
    Ok(Dataset::new(input, num_classes, samples)?)
}

impl SyntheticSet {
    /// `images/NNNN.{pgm,ppm}`, `labels/NNNN.pgm` and `manifest.txt`,
    /// numbered across splits (training scenes first).
    pub fn write(&self, spec: &SyntheticSegSpec, dir: &Path) -> Result<()> {
        let ext = if spec.channels == 3 { "ppm" } else { "pgm" };
        let mut manifest = format!(
            "classes {}\ninput {} {} {}\n",
            spec.num_classes, spec.channels, spec.height, spec.width
        );
        let all = self.train.iter().map(|s| ("train", s)).chain(self.eval.iter().map(|s| ("eval", s)));
        for (i, (split, scene)) in all.enumerate() {
            let image = format!("images/{i:04}.{ext}");
            let label = format!("labels/{i:04}.pgm");
            scene.image.write(&dir.join(&image))?;
            let lab = Image {
                width: spec.width,
                height: spec.height,
                channels: 1,
                data: scene.label.clone(),
            };
            lab.write(&dir.join(&label))?;
            let _ = writeln!(manifest, "{split} {image} {label}");
        }
        crate::fsio::write_atomic(&dir.join("manifest.txt"), manifest.as_bytes())
    }
}
