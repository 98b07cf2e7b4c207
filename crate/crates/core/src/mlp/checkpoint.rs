//! Text checkpoint of a network and its parameters.
//!
//! ```text
//! leibenson-checkpoint 1
//! input_dim = 3
//! hidden_layers = 4
//! hidden_width = 20
//! hidden_activation = tanh
//! output_activation = linear
//! seed = 42
//! meta.problem = P1
//! params = 1361
//! 1.2345e-1
//! ...
//! ```
//!
//! Values are written in shortest round-trip scientific notation, so a
//! write/read cycle reproduces every bit. Optional `input_shift` and
//! `input_scale` lines carry whitespace-separated vectors. `meta.*` keys are
//! free-form strings owned by the caller.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use super::{Activation, InputScaling, NetworkConfig, OutputActivation, ParameterVector};
use crate::error::{Error, Result};

const MAGIC: &str = "leibenson-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: NetworkConfig,
    pub seed: u64,
    pub metadata: BTreeMap<String, String>,
    pub params: ParameterVector,
}

impl Checkpoint {
    pub fn new(config: NetworkConfig, seed: u64, params: ParameterVector) -> Result<Self> {
        let net = config.build()?;
        if params.layout() != net.layout() {
            return Err(Error::structural("parameters do not match the network config"));
        }
        Ok(Self {
            config,
            seed,
            metadata: BTreeMap::new(),
            params,
        })
    }

    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "input_dim = {}", c.input_dim);
        let _ = writeln!(s, "hidden_layers = {}", c.hidden_layers);
        let _ = writeln!(s, "hidden_width = {}", c.hidden_width);
        let _ = writeln!(s, "hidden_activation = {}", c.hidden_activation.tag());
        let _ = writeln!(s, "output_activation = linear");
        let _ = writeln!(s, "seed = {}", self.seed);
        if let Some(sc) = &c.input_scaling {
            let _ = writeln!(s, "input_shift = {}", join(&sc.shift));
            let _ = writeln!(s, "input_scale = {}", join(&sc.scale));
        }
        for (k, v) in &self.metadata {
            let _ = writeln!(s, "meta.{k} = {v}");
        }
        let _ = writeln!(s, "params = {}", self.params.len());
        for v in self.params.as_slice() {
            let _ = writeln!(s, "{v:e}");
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_text().as_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let text = f
            .lines()
            .collect::<std::io::Result<Vec<_>>>()?
            .join("\n");
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |r: String| Error::parse("checkpoint", r);
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(MAGIC) {
            return Err(bad(format!("missing `{MAGIC}` header")));
        }
        let mut header: BTreeMap<String, String> = BTreeMap::new();
        let mut metadata = BTreeMap::new();
        let count = loop {
            let line = lines
                .next()
                .ok_or_else(|| bad("header ended before `params`".into()))?;
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected `key = value`, got `{line}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "params" {
                break v
                    .parse::<usize>()
                    .map_err(|e| bad(format!("params count: {e}")))?;
            }
            match k.strip_prefix("meta.") {
                Some(m) => metadata.insert(m.to_string(), v.to_string()),
                None => header.insert(k.to_string(), v.to_string()),
            };
        };

        let field = |k: &str| -> Result<&String> {
            header.get(k).ok_or_else(|| bad(format!("missing `{k}`")))
        };
        let int = |k: &str| -> Result<usize> {
            field(k)?
                .parse()
                .map_err(|e| bad(format!("`{k}`: {e}")))
        };
        if field("output_activation")? != "linear" {
            return Err(bad("output_activation must be `linear`".into()));
        }
        let input_scaling = match (header.get("input_shift"), header.get("input_scale")) {
            (Some(shift), Some(scale)) => Some(InputScaling {
                shift: parse_vec(shift).map_err(bad)?,
                scale: parse_vec(scale).map_err(bad)?,
            }),
            (None, None) => None,
            _ => return Err(bad("input_shift and input_scale must appear together".into())),
        };
        let config = NetworkConfig {
            input_dim: int("input_dim")?,
            hidden_layers: int("hidden_layers")?,
            hidden_width: int("hidden_width")?,
            hidden_activation: Activation::from_tag(field("hidden_activation")?)?,
            output_activation: OutputActivation::Linear,
            input_scaling,
        };
        let seed = field("seed")?
            .parse()
            .map_err(|e| bad(format!("`seed`: {e}")))?;

        let values = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|e| bad(format!("value `{l}`: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != count {
            return Err(bad(format!("declared {count} params, found {}", values.len())));
        }
        let net = config.build()?;
        let params = ParameterVector::from_flat(net.layout().clone(), values)?;
        Ok(Self {
            config,
            seed,
            metadata,
            params,
        })
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ")
}

fn parse_vec(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect()
}
