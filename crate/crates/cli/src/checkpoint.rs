//! Binary checkpoints.
//!
//! Layout (little-endian): magic `SSEG`, `u32` version, a `u32`-prefixed
//! meta text block (`mode`, `spike_gain`), a `u32`-prefixed architecture text
//! block, `u32` tensor count and the tensors, then a `u8` flag followed by the
//! optimizer state when present. A tensor is a `u16`-prefixed name, a dtype
//! code (`1` = f32), a `u8` rank, `u32` dims and the f32 payload.

use std::path::Path;

use spikeseg::network::{ModelParams, Mode, NamedTensor, NetworkSpec, SpikeGain};
use spikeseg::training::{OptimState, StepDecay};

use crate::error::{CliError, Result};
use crate::fsio;

pub const MAGIC: &[u8; 4] = b"SSEG";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub params: ModelParams<f32>,
    pub optim: Option<OptimState<f32>>,
}

fn gain_name(g: SpikeGain) -> &'static str {
    match g {
        SpikeGain::Unit => "unit",
        SpikeGain::Threshold => "threshold",
    }
}

fn parse_gain(s: &str) -> Option<SpikeGain> {
    match s {
        "unit" => Some(SpikeGain::Unit),
        "threshold" => Some(SpikeGain::Threshold),
        _ => None,
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn text(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn tensor(&mut self, name: &str, shape: &[usize], data: &[f32]) {
        self.0.extend_from_slice(&(name.len() as u16).to_le_bytes());
        self.0.extend_from_slice(name.as_bytes());
        self.u8(DTYPE_F32);
        self.u8(shape.len() as u8);
        for &d in shape {
            self.u32(d as u32);
        }
        for v in data {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

type Parse<T> = std::result::Result<T, String>;

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Parse<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn array<const N: usize>(&mut self) -> Parse<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Parse<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Parse<u32> {
        self.array().map(u32::from_le_bytes)
    }
    fn u64(&mut self) -> Parse<u64> {
        self.array().map(u64::from_le_bytes)
    }
    fn f64(&mut self) -> Parse<f64> {
        self.array().map(f64::from_le_bytes)
    }
    fn text(&mut self) -> Parse<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "text block is not UTF-8".into())
    }
    fn tensor(&mut self) -> Parse<NamedTensor<f32>> {
        let n = u16::from_le_bytes(self.array()?) as usize;
        let name = String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "tensor name is not UTF-8")?;
        let dtype = self.u8()?;
        if dtype != DTYPE_F32 {
            return Err(format!("tensor `{name}`: unsupported dtype code {dtype}"));
        }
        let rank = self.u8()? as usize;
        let shape = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Parse<Vec<_>>>()?;
        let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("tensor too large")?;
        let bytes = self.take(len.checked_mul(4).ok_or("tensor too large")?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect();
        Ok(NamedTensor { name, shape, data })
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.text(&format!(
            "mode {}\nspike_gain {}\n",
            self.params.mode.name(),
            gain_name(self.params.spike_gain)
        ));
        w.text(&self.spec.to_text());
        let tensors = self.params.to_named();
        w.u32(tensors.len() as u32);
        for t in &tensors {
            w.tensor(&t.name, &t.shape, &t.data);
        }
        match &self.optim {
            None => w.u8(0),
            Some(o) => {
                w.u8(1);
                w.u64(o.step);
                for v in [o.lr, o.beta1, o.beta2, o.eps, o.schedule.factor, o.schedule.milestone] {
                    w.f64(v);
                }
                w.u32(o.names.len() as u32);
                for ((name, m), v) in o.names.iter().zip(&o.m).zip(&o.v) {
                    w.tensor(name, &[m.len()], m);
                    w.tensor(name, &[v.len()], v);
                }
            }
        }
        w.0
    }

    /// `origin` only labels error messages.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |m: String| CliError::format(origin, m);
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4).map_err(&bad)? != MAGIC {
            return Err(bad("not a spikeseg checkpoint (bad magic)".into()));
        }
        let version = r.u32().map_err(&bad)?;
        if version != VERSION {
            return Err(bad(format!("checkpoint format version {version}, this build reads {VERSION}")));
        }
        let meta = r.text().map_err(&bad)?;
        let (mut mode, mut gain) = (None, None);
        for line in meta.lines() {
            match line.split_once(' ') {
                Some(("mode", v)) => mode = Some(Mode::parse(v).map_err(|e| bad(e.to_string()))?),
                Some(("spike_gain", v)) => gain = parse_gain(v),
                _ => return Err(bad(format!("unknown meta line `{line}`"))),
            }
        }
        let (Some(mode), Some(gain)) = (mode, gain) else {
            return Err(bad("meta block lacks mode or spike_gain".into()));
        };
        let spec = NetworkSpec::parse(&r.text().map_err(&bad)?)?;
        let count = r.u32().map_err(&bad)?;
        let tensors = (0..count).map(|_| r.tensor()).collect::<Parse<Vec<_>>>().map_err(&bad)?;
        let params = ModelParams::from_named(&spec, mode, gain, tensors)?;
        let optim = match r.u8().map_err(&bad)? {
            0 => None,
            1 => Some(read_optim(&mut r).map_err(&bad)?),
            f => return Err(bad(format!("bad optimizer flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { spec, params, optim })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsio::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&fsio::read(path)?, path)
    }
}

fn read_optim(r: &mut Reader<'_>) -> Parse<OptimState<f32>> {
    let step = r.u64()?;
    let [lr, beta1, beta2, eps, factor, milestone] = [r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?];
    let n = r.u32()? as usize;
    let (mut names, mut m, mut v) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let a = r.tensor()?;
        let b = r.tensor()?;
        if a.name != b.name {
            return Err(format!("optimizer moments `{}` and `{}` disagree", a.name, b.name));
        }
        names.push(a.name);
        m.push(a.data);
        v.push(b.data);
    }
    Ok(OptimState {
        names,
        m,
        v,
        step,
        lr,
        beta1,
        beta2,
        eps,
        schedule: StepDecay { factor, milestone },
    })
}
