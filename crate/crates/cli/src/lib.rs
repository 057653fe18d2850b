//! Command-line driver for spikeseg: configuration, dataset ingestion,
//! checkpoints and the subcommands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod fsio;
pub mod pnm;
pub mod synth;

pub use checkpoint::Checkpoint;
pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use synth::SyntheticSegSpec;

/// Splits `--key value` / `--key=value` pairs naming config keys (or their
/// aliases) out of `args`, leaving everything else in order.
pub fn extract_overrides(args: &[String]) -> Result<(Vec<String>, Vec<(String, String)>)> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let Some(flag) = a.strip_prefix("--") else {
            rest.push(a.clone());
            continue;
        };
        let (key, inline) = match flag.split_once('=') {
            Some((k, v)) => (k, Some(v.to_string())),
            None => (flag, None),
        };
        if !config::is_config_key(key) {
            rest.push(a.clone());
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it
                .next()
                .cloned()
                .ok_or_else(|| CliError::Usage(format!("--{key} needs a value")))?,
        };
        overrides.push((key.to_string(), value));
    }
    Ok((rest, overrides))
}
