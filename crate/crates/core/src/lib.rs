//! Spiking semantic segmentation: LIF dynamics, rate and event encoders,
//! Spiking-DeepLab / Spiking-FCN graphs, surrogate-gradient BPTT, ANN→SNN
//! conversion baselines, and spike-rate based energy estimation.

pub mod conversion;
pub mod encoding;
pub mod energy;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod network;
pub mod neuron;
pub mod ops;
pub mod real;
pub mod rng;
pub mod robustness;
pub mod tensor;
pub mod training;

pub use encoding::SpikeTrain;
pub use energy::{EnergyReport, SpikeTrace};
pub use error::{Error, Result};
pub use network::{ModelParams, Mode, NetworkSpec};
pub use real::Real;
pub use tensor::{Shape4, Tensor4};
