//! Run manifest: what was run, with which settings, and what it produced.
//!
//! Written as `manifest.json` before training starts and rewritten when the
//! run ends. Its `config` is the fully resolved configuration, so training
//! again from a manifest in single-threaded mode reproduces the run.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const FILE_NAME: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Running,
    Completed,
    Diverged,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub seed: u64,
    pub version: String,
    pub started_at: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<String>,
    pub status: Status,
    /// File names relative to the output directory.
    pub outputs: Vec<String>,
    /// Modelling and numerical choices in effect for this run.
    pub design: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            config: config.clone(),
            seed: config.train.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: now(),
            finished_at: None,
            status: Status::Running,
            outputs: Vec::new(),
            design: design_flags(config),
            config_hash: None,
            message: None,
        }
    }

    pub fn finish(&mut self, status: Status) {
        self.status = status;
        self.finished_at = Some(now());
    }

    pub fn add_output(&mut self, name: &str) {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        let path = dir.join(FILE_NAME);
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing manifest {}", path.display()))
    }
}

fn design_flags(c: &RunConfig) -> BTreeMap<String, String> {
    let on_off = |b: bool| if b { "on" } else { "off" }.to_string();
    let origin = if leibenson_pinn::collocation::excludes_origin(c.problem.id) {
        format!("radius {}", c.collocation.origin_exclusion_radius)
    } else {
        "off".to_string()
    };
    let refinement = c
        .metrics
        .refinement
        .map_or_else(|| "domain default".to_string(), |r| r.to_string());
    [
        ("derivatives", "forward jets over the network, reverse adjoint for parameters".to_string()),
        ("flux_jacobian_at_kink", "zero for |grad u| <= 1".to_string()),
        ("loss", "weighted mean squares, interior residual plus boundary and initial data".to_string()),
        ("loss_weights", format!("physics {}, boundary {}", c.train.weights.physics, c.train.weights.boundary)),
        ("time_roles", "initial at t1; interior and boundary at later grid times".to_string()),
        ("long_horizon_rule", on_off(c.collocation.long_horizon_rule)),
        ("origin_exclusion", origin),
        ("input_scaling", on_off(c.network.input_scaling)),
        ("reduction", format!("fixed chunks of {} points summed in order", leibenson_pinn::trainer::CHUNK)),
        ("quadrature", format!("midpoint tensor rule, refinement {refinement}")),
        ("sup_over_time", "training time grid".to_string()),
        ("error_units", "E is the squared L2 norm".to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}
