//! Gaussian-noise robustness: mIoU under additive input noise relative to the
//! clean score.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::network::{ModelParams, NetworkSpec};
use crate::real::Real;
use crate::training::{evaluate, Dataset, EvalConfig};

/// `(clean - noisy) / clean * 100`; `None` when the clean score is 0.
pub fn relative_drop(clean: f64, noisy: f64) -> Option<f64> {
    (clean != 0.0).then(|| (clean - noisy) / clean * 100.0)
}

pub struct NamedModel<'a, F> {
    pub name: String,
    pub spec: &'a NetworkSpec,
    pub params: &'a ModelParams<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessRow {
    pub sigma: f64,
    pub model: String,
    pub clean_miou: f64,
    pub noise_miou: f64,
    pub drop_pct: Option<f64>,
}

/// Evaluates every model at every noise level. The Poisson streams are the
/// same for all levels, so `sigma = 0` reproduces the clean run exactly; each
/// level draws its noise from a stream keyed by its value. A zero level is
/// added when missing.
pub fn robustness_sweep<F: Real>(
    models: &[NamedModel<'_, F>],
    data: &Dataset,
    sigmas: &[f64],
    base: &EvalConfig,
) -> Result<Vec<RobustnessRow>> {
    if let Some(s) = sigmas.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(Error::Config(format!("noise levels must be finite and >= 0, got {s}")));
    }
    let mut grid = sigmas.to_vec();
    if !grid.contains(&0.0) {
        grid.insert(0, 0.0);
    }
    let mut rows = Vec::with_capacity(models.len() * grid.len());
    for m in models {
        let clean_cfg = EvalConfig {
            noise_sigma: 0.0,
            ..base.clone()
        };
        let clean = evaluate(m.spec, m.params, data, &clean_cfg)?.miou();
        let noisy = grid
            .par_iter()
            .map(|&sigma| {
                if sigma == 0.0 {
                    return Ok(clean);
                }
                let cfg = EvalConfig {
                    noise_sigma: sigma,
                    noise_salt: sigma.to_bits(),
                    ..base.clone()
                };
                Ok(evaluate(m.spec, m.params, data, &cfg)?.miou())
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.extend(grid.iter().zip(noisy).map(|(&sigma, noise_miou)| RobustnessRow {
            sigma,
            model: m.name.clone(),
            clean_miou: clean,
            noise_miou,
            drop_pct: relative_drop(clean, noise_miou),
        }));
    }
    Ok(rows)
}

pub fn robustness_csv(rows: &[RobustnessRow]) -> String {
    let mut s = String::from("sigma,model,clean_miou,noise_miou,drop_pct\n");
    for r in rows {
        let drop = r.drop_pct.map(|d| format!("{d:.4}")).unwrap_or_default();
        let _ = writeln!(s, "{},{},{:.6},{:.6},{drop}", r.sigma, r.model, r.clean_miou, r.noise_miou);
    }
    s
}
