//! Input encoders: Poisson rate coding for static images and fixed-window
//! accumulation of event-camera streams into two-channel count frames.

use std::fmt::Write as _;

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::{derive_seed, rng_from};
use crate::tensor::{Shape4, Tensor4};

/// `T` frames of identical shape, one per time-step.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeTrain<F = f32> {
    frames: Vec<Tensor4<F>>,
}

impl<F: Real> SpikeTrain<F> {
    pub fn new(frames: Vec<Tensor4<F>>) -> Result<Self> {
        if let Some(first) = frames.first() {
            for f in &frames[1..] {
                f.expect_shape(first.shape(), "frame")?;
            }
        }
        Ok(SpikeTrain { frames })
    }

    pub fn empty() -> Self {
        SpikeTrain { frames: Vec::new() }
    }

    pub fn steps(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Tensor4<F>] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Tensor4<F>> {
        self.frames
    }

    pub fn frame_shape(&self) -> Option<Shape4> {
        self.frames.first().map(Tensor4::shape)
    }

    /// All frames stacked time-major along the batch axis: item `t*N + n`.
    pub fn stacked(&self) -> Result<Tensor4<F>> {
        Tensor4::concat_batch(&self.frames)
    }

    /// Merges per-sample trains (same length) into one batched train.
    pub fn batch(trains: &[SpikeTrain<F>]) -> Result<Self> {
        let steps = trains.first().map_or(0, SpikeTrain::steps);
        if let Some(bad) = trains.iter().find(|t| t.steps() != steps) {
            return Err(Error::dim("time-steps", steps, bad.steps()));
        }
        let frames = (0..steps)
            .map(|t| {
                let parts: Vec<_> = trains.iter().map(|tr| tr.frames[t].clone()).collect();
                Tensor4::concat_batch(&parts)
            })
            .collect::<Result<Vec<_>>>()?;
        SpikeTrain::new(frames)
    }

    pub fn total(&self) -> F {
        self.frames.iter().map(Tensor4::sum).sum()
    }
}

/// Intensity range the uniform comparison draws are taken from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntensityRange {
    pub min: f64,
    pub max: f64,
}

impl Default for IntensityRange {
    fn default() -> Self {
        IntensityRange { min: 0.0, max: 1.0 }
    }
}

/// Rate coding: at each step a pixel spikes iff a fresh uniform draw in
/// `[min, max)` is strictly below its value, so the spike probability equals
/// the normalized intensity. Item `n` uses the stream `derive_seed(seed, n)`.
pub fn poisson_encode<F: Real>(
    image: &Tensor4<F>,
    steps: usize,
    seed: u64,
    range: IntensityRange,
) -> Result<SpikeTrain<F>> {
    if steps == 0 {
        return Err(Error::Validation("time-steps must be >= 1".into()));
    }
    if range.max <= range.min {
        return Err(Error::Validation(format!("empty intensity range {range:?}")));
    }
    if let Some(bad) = image
        .data()
        .iter()
        .map(|v| v.as_f64())
        .find(|v| !(range.min..=range.max).contains(v))
    {
        return Err(Error::Validation(format!(
            "pixel value {bad} outside [{}, {}]",
            range.min, range.max
        )));
    }
    let s = image.shape();
    let item = s.item_len();
    let span = range.max - range.min;
    // Per item: steps x item_len spikes, generated item-major.
    let per_item: Vec<Vec<F>> = (0..s.n)
        .into_par_iter()
        .map(|n| {
            let mut rng = rng_from(derive_seed(seed, n as u64));
            let px = image.item(n);
            let mut out = Vec::with_capacity(steps * item);
            for _ in 0..steps {
                for &p in px {
                    let draw = range.min + span * rng.random::<f64>();
                    out.push(if draw < p.as_f64() { F::one() } else { F::zero() });
                }
            }
            out
        })
        .collect();
    let frames = (0..steps)
        .map(|t| {
            let mut data = Vec::with_capacity(s.len());
            for v in &per_item {
                data.extend_from_slice(&v[t * item..(t + 1) * item]);
            }
            Tensor4::from_vec(s, data)
        })
        .collect::<Result<Vec<_>>>()?;
    SpikeTrain::new(frames)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Polarity {
    On,
    Off,
}

impl Polarity {
    pub fn channel(self) -> usize {
        match self {
            Polarity::On => 0,
            Polarity::Off => 1,
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Polarity::On => 1,
            Polarity::Off => -1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    pub t_us: u64,
    pub x: usize,
    pub y: usize,
    pub polarity: Polarity,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    pub height: usize,
    pub width: usize,
    pub events: Vec<Event>,
}

impl EventStream {
    pub fn new(height: usize, width: usize, events: Vec<Event>) -> Result<Self> {
        let s = EventStream {
            height,
            width,
            events,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Validation("sensor dimensions must be >= 1".into()));
        }
        let mut last = 0u64;
        for (i, e) in self.events.iter().enumerate() {
            if e.t_us < last {
                return Err(Error::Validation(format!(
                    "event {i}: timestamp {} precedes {last}",
                    e.t_us
                )));
            }
            last = e.t_us;
            if e.x >= self.width || e.y >= self.height {
                return Err(Error::Validation(format!(
                    "event {i}: ({}, {}) outside {}x{} sensor",
                    e.x, e.y, self.width, self.height
                )));
            }
        }
        Ok(())
    }

    /// Parses `H W` followed by `timestamp_us x y polarity` lines.
    /// Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Validation("event file has no header".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Validation(format!("bad header `{header}`: {e}")))?;
        let [h, w] = dims[..] else {
            return Err(Error::Validation(format!("header must be `H W`, got `{header}`")));
        };
        let mut events = Vec::new();
        for (no, line) in lines {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(Error::Validation(format!("line {no}: expected 4 fields")));
            }
            let bad = |what: &str| Error::Validation(format!("line {no}: bad {what} `{line}`"));
            let polarity = match f[3] {
                "1" | "+1" => Polarity::On,
                "-1" => Polarity::Off,
                _ => return Err(bad("polarity")),
            };
            events.push(Event {
                t_us: f[0].parse().map_err(|_| bad("timestamp"))?,
                x: f[1].parse().map_err(|_| bad("x"))?,
                y: f[2].parse().map_err(|_| bad("y"))?,
                polarity,
            });
        }
        EventStream::new(h, w, events)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.height, self.width);
        for e in &self.events {
            let _ = writeln!(s, "{} {} {} {}", e.t_us, e.x, e.y, e.polarity.sign());
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccumulateStatus {
    Ok,
    /// The stream had no events; the train has zero frames.
    EmptyStream,
}

/// Bins events into half-open windows `[f*window, (f+1)*window)`. Frame `f`
/// is `(1, 2, H, W)`: channel 0 counts ON events, channel 1 OFF events. The
/// frame count is `floor(t_last / window) + 1`, so every event is kept.
pub fn dvs_accumulate<F: Real>(
    stream: &EventStream,
    window_us: u64,
) -> Result<(SpikeTrain<F>, AccumulateStatus)> {
    if window_us == 0 {
        return Err(Error::Validation("accumulation window must be > 0".into()));
    }
    stream.validate()?;
    let Some(last) = stream.events.last() else {
        log::warn!("event stream is empty; producing zero frames");
        return Ok((SpikeTrain::empty(), AccumulateStatus::EmptyStream));
    };
    let count = (last.t_us / window_us) as usize + 1;
    let shape = Shape4::new(1, 2, stream.height, stream.width);
    let mut frames = vec![Tensor4::<F>::zeros(shape); count];
    for e in &stream.events {
        let f = (e.t_us / window_us) as usize;
        let frame = &mut frames[f];
        let i = frame.index(0, e.polarity.channel(), e.y, e.x);
        frame.data_mut()[i] += F::one();
    }
    Ok((SpikeTrain::new(frames)?, AccumulateStatus::Ok))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(v: f32) -> Tensor4<f32> {
        Tensor4::full(Shape4::new(1, 1, 1, 1), v)
    }

    #[test]
    fn extremes_are_deterministic() {
        let r = IntensityRange::default();
        let hi = poisson_encode(&image(1.0), 50, 3, r).unwrap();
        assert_eq!(hi.total(), 50.0);
        let lo = poisson_encode(&image(0.0), 50, 3, r).unwrap();
        assert_eq!(lo.total(), 0.0);
    }

    #[test]
    fn rejects_out_of_range_and_zero_steps() {
        let r = IntensityRange::default();
        assert!(matches!(
            poisson_encode(&image(1.5), 4, 0, r),
            Err(Error::Validation(_))
        ));
        assert!(poisson_encode(&image(0.5), 0, 0, r).is_err());
    }

    #[test]
    fn same_seed_same_train() {
        let img = Tensor4::from_fn(Shape4::new(3, 2, 4, 4), |n, c, y, x| {
            ((n + c + y + x) % 5) as f32 / 4.0
        });
        let r = IntensityRange::default();
        let a = poisson_encode(&img, 8, 11, r).unwrap();
        let b = poisson_encode(&img, 8, 11, r).unwrap();
        assert_eq!(a, b);
        let c = poisson_encode(&img, 8, 12, r).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn shifted_range_keeps_proportionality() {
        let r = IntensityRange { min: 0.0, max: 255.0 };
        let t = poisson_encode(&image(127.5f32), 4000, 1, r).unwrap();
        let rate = t.total() / 4000.0;
        assert!((rate - 0.5).abs() < 0.03, "{rate}");
    }

    fn ev(t: u64, x: usize, y: usize, p: Polarity) -> Event {
        Event {
            t_us: t,
            x,
            y,
            polarity: p,
        }
    }

    #[test]
    fn empty_stream_yields_no_frames() {
        let s = EventStream::new(4, 4, vec![]).unwrap();
        let (t, status) = dvs_accumulate::<f32>(&s, 50_000).unwrap();
        assert_eq!(t.steps(), 0);
        assert_eq!(status, AccumulateStatus::EmptyStream);
    }

    #[test]
    fn single_event_lands_in_first_frame() {
        let s = EventStream::new(4, 5, vec![ev(10_000, 3, 2, Polarity::On)]).unwrap();
        let (t, _) = dvs_accumulate::<f32>(&s, 50_000).unwrap();
        assert_eq!(t.steps(), 1);
        assert_eq!(t.frames()[0].at(0, 0, 2, 3), 1.0);
        assert_eq!(t.total(), 1.0);
    }

    #[test]
    fn windows_are_half_open() {
        let s = EventStream::new(
            2,
            2,
            vec![
                ev(49_900, 0, 0, Polarity::On),
                ev(50_000, 1, 0, Polarity::Off),
                ev(50_100, 1, 1, Polarity::Off),
            ],
        )
        .unwrap();
        let (t, _) = dvs_accumulate::<f32>(&s, 50_000).unwrap();
        assert_eq!(t.steps(), 2);
        assert_eq!(t.frames()[0].sum(), 1.0);
        assert_eq!(t.frames()[1].at(0, 1, 0, 1), 1.0);
        assert_eq!(t.frames()[1].at(0, 1, 1, 1), 1.0);
    }

    #[test]
    fn parse_round_trip_and_errors() {
        let text = "3 4\n# comment\n0 1 2 1\n5 3 0 -1\n";
        let s = EventStream::parse(text).unwrap();
        assert_eq!(s.events.len(), 2);
        assert_eq!(EventStream::parse(&s.to_text()).unwrap(), s);
        assert!(EventStream::parse("3 4\n0 9 0 1\n").is_err());
        assert!(EventStream::parse("3 4\n5 0 0 1\n1 0 0 1\n").is_err());
        assert!(EventStream::parse("3 4\n5 0 0 2\n").is_err());
    }
}
