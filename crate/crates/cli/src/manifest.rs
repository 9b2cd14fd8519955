//! Run manifest: everything needed to reproduce an output directory.

use serde::Serialize;

use crate::config::PipelineConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Serialize)]
pub struct Manifest<R: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    /// Effective configuration after flag overrides. Loading this file with
    /// `--config manifest.json` reruns the same analysis.
    pub config: PipelineConfig,
    /// Fully defaulted options handed to the library.
    pub resolved: R,
    pub outputs: Vec<String>,
}

impl<R: Serialize> Manifest<R> {
    /// Input paths are stored absolute; `out` and `threads` are dropped so
    /// that manifests compare equal across output locations and worker counts.
    pub fn new(command: &'static str, config: &PipelineConfig, resolved: R) -> Self {
        let mut config = config.absolutized();
        config.out = None;
        config.threads = None;
        Manifest {
            tool: "boldkit",
            version: VERSION,
            command,
            seed: config.seed(),
            config,
            resolved,
            outputs: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}
