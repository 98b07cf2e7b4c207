//! Run configuration, read from TOML.
//!
//! Every key has a default, so a file holding nothing but
//!
//! ```toml
//! [problem]
//! id = "P1"
//! ```
//!
//! runs the standard protocol: a 4 x 20 tanh network trained with Adam at
//! learning rate 3e-3 for 80000 epochs on 441 spatial by 21 time points.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use leibenson_pinn::collocation::CollocationConfig;
use leibenson_pinn::mlp::{Activation, InputScaling, NetworkConfig};
use leibenson_pinn::problem::{make_problem, ProblemId, ProblemParams, ProblemSpec};
use leibenson_pinn::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Directory receiving every artifact of the run.
    pub output: PathBuf,
    pub problem: ProblemSection,
    pub network: NetworkSection,
    pub train: TrainConfig,
    pub collocation: CollocationConfig,
    pub metrics: MetricsSection,
    pub export: ExportSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output: PathBuf::from("out"),
            problem: ProblemSection::default(),
            network: NetworkSection::default(),
            train: TrainConfig::default(),
            collocation: CollocationConfig::default(),
            metrics: MetricsSection::default(),
            export: ExportSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSection {
    pub id: ProblemId,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subdomain_radius: Option<f64>,
}

impl Default for ProblemSection {
    fn default() -> Self {
        Self {
            id: ProblemId::P1,
            alpha: None,
            eps: None,
            t_final: None,
            window: None,
            subdomain_radius: None,
        }
    }
}

impl ProblemSection {
    pub fn params(&self) -> ProblemParams {
        ProblemParams {
            alpha: self.alpha,
            eps: self.eps,
            t_final: self.t_final,
            window: self.window,
            subdomain_radius: self.subdomain_radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    /// Map the space-time box of the problem onto `[-1, 1]^(n+1)` before the
    /// first layer.
    pub input_scaling: bool,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            hidden_layers: 4,
            hidden_width: 20,
            activation: Activation::Tanh,
            input_scaling: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    /// Quadrature refinement; the domain default when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refinement: Option<usize>,
    /// Final times of the error table; empty means the end of the window.
    pub times: Vec<f64>,
    /// Regularization values of the eps sweep.
    pub epsilons: Vec<f64>,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            refinement: None,
            times: Vec::new(),
            epsilons: vec![1e-3, 1e-6, 1e-9],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportSection {
    /// Grid points per axis over the bounding box of the domain.
    pub grid: usize,
    /// Times to export; empty means both ends of the window.
    pub times: Vec<f64>,
}

impl Default for ExportSection {
    fn default() -> Self {
        Self {
            grid: 101,
            times: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).context("parsing the run configuration")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        Ok(make_problem(self.problem.id, &self.problem.params())?)
    }

    /// The network for `spec`, with the input dimension taken from the problem.
    pub fn network_config(&self, spec: &ProblemSpec) -> NetworkConfig {
        let input_scaling = self.network.input_scaling.then(|| {
            let n = spec.dim();
            let (t1, t2) = spec.window;
            let mut shift = vec![0.0; n];
            shift.push(0.5 * (t1 + t2));
            let mut scale = vec![1.0 / spec.domain.extent(); n];
            scale.push(2.0 / (t2 - t1));
            InputScaling { shift, scale }
        });
        NetworkConfig {
            input_dim: spec.input_dim(),
            hidden_layers: self.network.hidden_layers,
            hidden_width: self.network.hidden_width,
            hidden_activation: self.network.activation,
            input_scaling,
            ..NetworkConfig::default()
        }
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<()> {
        let spec = self.problem_spec()?;
        self.network_config(&spec).validate()?;
        self.train.validate()?;
        if self.export.grid < 2 {
            anyhow::bail!(leibenson_pinn::Error::config("export.grid", "need at least 2 points per axis"));
        }
        if self.metrics.refinement == Some(0) {
            anyhow::bail!(leibenson_pinn::Error::config("metrics.refinement", "must be positive"));
        }
        Ok(())
    }
}
