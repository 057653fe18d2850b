//! Spike-rate profiling and the 45 nm MAC/AC energy model.
//!
//! An ANN layer performs `FLOPs` multiply-accumulates. A spiking layer only
//! performs an accumulate when a spike arrives, so its operation count is the
//! ANN count scaled by the layer's spike rate.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::network::{LayerKind, NetworkSpec};

/// Picojoules per 32-bit operation in 45 nm CMOS.
pub const E_MULT: f64 = 3.7;
pub const E_ADD: f64 = 0.9;
/// `E_MULT + E_ADD`, written out so the constant is exactly 4.6.
pub const E_MAC: f64 = 4.6;
pub const E_AC: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerActivity {
    /// Index into the network spec.
    pub layer: usize,
    pub name: String,
    /// Total spikes over all steps and samples.
    pub spikes: u64,
    /// Neurons per sample.
    pub neurons: u64,
    pub samples: u64,
    pub steps: u64,
}

impl LayerActivity {
    /// Spikes per neuron over the whole window; lies in `[0, steps]`.
    pub fn rate(&self) -> f64 {
        let denom = self.neurons * self.samples;
        if denom == 0 {
            0.0
        } else {
            self.spikes as f64 / denom as f64
        }
    }
}

/// Per-layer spike counts of one or more forward passes.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SpikeTrace {
    pub layers: Vec<LayerActivity>,
}

impl SpikeTrace {
    /// Adds the counts of another pass over the same network.
    pub fn merge(&mut self, other: &SpikeTrace) -> Result<()> {
        if self.layers.is_empty() {
            self.layers = other.layers.clone();
            return Ok(());
        }
        if self.layers.len() != other.layers.len() {
            return Err(Error::Validation(format!(
                "cannot merge traces of {} and {} layers",
                self.layers.len(),
                other.layers.len()
            )));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if (a.layer, a.neurons, a.steps) != (b.layer, b.neurons, b.steps) {
                return Err(Error::Validation(format!("trace layer `{}` differs", a.name)));
            }
            a.spikes += b.spikes;
            a.samples += b.samples;
        }
        Ok(())
    }

    pub fn get(&self, layer: usize) -> Option<&LayerActivity> {
        self.layers.iter().find(|a| a.layer == layer)
    }

    /// A trace in which every firing layer of `spec` has rate `rate`.
    pub fn uniform(spec: &NetworkSpec, rate: f64, steps: u64) -> Result<Self> {
        let shapes = spec.layer_shapes()?;
        let layers = spec
            .lif_layers()
            .into_iter()
            .map(|i| {
                let neurons = shapes[i].item_len() as u64;
                LayerActivity {
                    layer: i,
                    name: spec.layers[i].name.clone(),
                    spikes: (rate * neurons as f64).round() as u64,
                    neurons,
                    samples: 1,
                    steps,
                }
            })
            .collect();
        Ok(SpikeTrace { layers })
    }
}

/// `R_s` of every traced layer.
pub fn spike_rate(trace: &SpikeTrace) -> Vec<f64> {
    trace.layers.iter().map(LayerActivity::rate).collect()
}

pub fn conv_flops(kernel: usize, out_h: usize, out_w: usize, c_in: usize, c_out: usize) -> u64 {
    (kernel * kernel * out_h * out_w * c_in * c_out) as u64
}

pub fn linear_flops(c_in: usize, c_out: usize) -> u64 {
    (c_in * c_out) as u64
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerFlops {
    pub layer: usize,
    pub name: String,
    pub flops: u64,
}

/// Multiply-accumulate count of every weighted layer for one sample.
/// Transposed convolutions count as the dense convolution over their
/// up-scattered input, i.e. at output resolution.
pub fn flops(spec: &NetworkSpec) -> Result<Vec<LayerFlops>> {
    let shapes = spec.layer_shapes()?;
    Ok(spec
        .weighted_layers()
        .into_iter()
        .map(|i| {
            let c = spec.layers[i].conv().expect("weighted");
            let o = shapes[i];
            LayerFlops {
                layer: i,
                name: spec.layers[i].name.clone(),
                flops: conv_flops(c.kernel, o.h, o.w, c.in_channels, c.out_channels),
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyRow {
    pub name: String,
    pub flops_ann: u64,
    /// `None` for an ANN profile.
    pub spike_rate: Option<f64>,
    pub flops_snn: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyReport {
    pub rows: Vec<EnergyRow>,
    pub e_ann_pj: f64,
    pub e_snn_pj: Option<f64>,
}

impl EnergyReport {
    pub fn total_flops_ann(&self) -> u64 {
        self.rows.iter().map(|r| r.flops_ann).sum()
    }

    pub fn total_flops_snn(&self) -> Option<f64> {
        self.rows.iter().map(|r| r.flops_snn).sum()
    }

    /// `E_ANN / E_SNN`; `None` without a spiking profile or when nothing fired.
    pub fn ratio(&self) -> Option<f64> {
        self.e_snn_pj.filter(|e| *e > 0.0).map(|e| self.e_ann_pj / e)
    }

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();
        let mut s = String::from("layer,flops_ann,spike_rate,flops_snn\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.name, r.flops_ann, opt(r.spike_rate), opt(r.flops_snn));
        }
        let _ = writeln!(s, "total,{},,{}", self.total_flops_ann(), opt(self.total_flops_snn()));
        let _ = writeln!(
            s,
            "# e_ann_pj={} e_snn_pj={} ratio={}",
            self.e_ann_pj,
            opt(self.e_snn_pj),
            opt(self.ratio())
        );
        s
    }
}

/// Energy of the ANN twin only.
pub fn ann_energy(spec: &NetworkSpec) -> Result<EnergyReport> {
    let rows: Vec<EnergyRow> = flops(spec)?
        .into_iter()
        .map(|f| EnergyRow {
            name: f.name,
            flops_ann: f.flops,
            spike_rate: None,
            flops_snn: None,
        })
        .collect();
    let e_ann_pj = rows.iter().map(|r| r.flops_ann as f64).sum::<f64>() * E_MAC;
    Ok(EnergyReport {
        rows,
        e_ann_pj,
        e_snn_pj: None,
    })
}

/// Rate of the activity arriving at layer `i`'s output: firing layers use
/// their own spikes, fused skips add both spike streams, pooling and
/// interpolation pass the rate through. Accumulators emit no spikes and are
/// treated as dense.
fn node_rate(spec: &NetworkSpec, trace: &SpikeTrace, i: usize) -> Result<f64> {
    let l = &spec.layers[i];
    let own = || {
        trace
            .get(i)
            .map(LayerActivity::rate)
            .ok_or_else(|| Error::Validation(format!("trace lacks firing layer `{}`", l.name)))
    };
    match &l.kind {
        LayerKind::AvgPool | LayerKind::BilinearHead { .. } => {
            if i == 0 {
                Ok(1.0)
            } else {
                node_rate(spec, trace, i - 1)
            }
        }
        _ if l.accumulate => Ok(1.0),
        LayerKind::SkipConv { .. } => Ok(own()? + node_rate(spec, trace, i - 1)?),
        _ => own(),
    }
}

/// Per-layer FLOPs scaled by spike rates. A firing layer is charged its own
/// rate; an accumulating layer, which never fires, is charged the rate of the
/// spikes feeding it.
pub fn energy(spec: &NetworkSpec, trace: &SpikeTrace) -> Result<EnergyReport> {
    let lif = spec.lif_layers();
    let traced: Vec<usize> = trace.layers.iter().map(|a| a.layer).collect();
    if traced != lif {
        return Err(Error::Validation(format!(
            "trace covers layers {traced:?}, network fires at {lif:?}"
        )));
    }
    let mut rows = Vec::new();
    for f in flops(spec)? {
        let l = &spec.layers[f.layer];
        let rate = if l.accumulate {
            let src = l.skip_source().map_or(f.layer, |s| s + 1);
            if src == 0 {
                1.0
            } else {
                node_rate(spec, trace, src - 1)?
            }
        } else {
            trace.get(f.layer).expect("aligned").rate()
        };
        rows.push(EnergyRow {
            name: f.name,
            flops_ann: f.flops,
            spike_rate: Some(rate),
            flops_snn: Some(f.flops as f64 * rate),
        });
    }
    let e_ann_pj = rows.iter().map(|r| r.flops_ann as f64).sum::<f64>() * E_MAC;
    let e_snn_pj = rows.iter().map(|r| r.flops_snn.unwrap_or(0.0)).sum::<f64>() * E_AC;
    Ok(EnergyReport {
        rows,
        e_ann_pj,
        e_snn_pj: Some(e_snn_pj),
    })
}
