//! Run configuration: strict JSON with path-qualified error messages.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenarios::ScenarioSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum Engine {
    Approx,
    Exact,
    #[default]
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Zeno,
    Povm,
    Residual,
    CrossEngine,
}

impl CheckKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "zeno" => Ok(CheckKind::Zeno),
            "povm" => Ok(CheckKind::Povm),
            "residual" => Ok(CheckKind::Residual),
            "cross_engine" => Ok(CheckKind::CrossEngine),
            other => Err(Error::validation(format!(
                "unknown check '{other}' (expected zeno, povm, residual, cross_engine)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CheckKind::Zeno => "zeno",
            CheckKind::Povm => "povm",
            CheckKind::Residual => "residual",
            CheckKind::CrossEngine => "cross_engine",
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Outputs {
    /// distribution table (one row per grid point)
    pub csv: Option<String>,
    /// summary report
    pub json: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioSpec,
    #[serde(default)]
    pub engine: Engine,
    #[serde(default)]
    pub outputs: Outputs,
    /// checks run by `simulate` in addition to producing outputs
    #[serde(default)]
    pub checks: Vec<CheckKind>,
    /// free-form label echoed into the report
    #[serde(default)]
    pub label: Option<String>,
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    cfg.scenario.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    parse_config(&text)
}
