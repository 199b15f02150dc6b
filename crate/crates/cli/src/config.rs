//! Layered run configuration: built-in defaults, then a TOML file, then
//! command-line overrides. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thermosplat::train::TrainConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    RandomBox,
    FromPoints,
    PerturbGt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    pub mode: InitKind,
    /// Gaussian count for `random_box`, upper bound for `from_points`.
    pub gaussians: usize,
    /// Point list for `from_points`.
    pub points: Option<PathBuf>,
    /// Ground-truth checkpoint for `perturb_gt`.
    pub gt: Option<PathBuf>,
    /// Noise scale for `perturb_gt`, applied to the cloud and the network.
    pub sigma: f64,
    /// Init box when the dataset declares no bounds.
    pub box_min: [f64; 3],
    pub box_max: [f64; 3],
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            mode: InitKind::RandomBox,
            gaussians: 1000,
            points: None,
            gt: None,
            sigma: 0.05,
            box_min: [-1.0; 3],
            box_max: [1.0; 3],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    pub init: InitConfig,
}

/// Overlays `over` onto `base`. Every key in `over` must exist in `base`
/// (keys whose default is `null` accept any value).
pub fn merge(base: &mut Value, over: &Value, path: &str) -> Result<()> {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v, &p)?,
                    Some(slot) => *slot = v.clone(),
                    None => bail!("unknown configuration key `{p}`"),
                }
            }
            Ok(())
        }
        (b, o) => {
            *b = o.clone();
            Ok(())
        }
    }
}

/// Resolves the effective configuration. `overrides` is applied last.
pub fn resolve(file: Option<&Path>, overrides: &Value) -> Result<RunConfig> {
    let mut v = serde_json::to_value(RunConfig::default())?;
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let parsed: toml::Value = toml::from_str(&text).map_err(|e| thermosplat::Error::Config(e.to_string()))?;
        let as_json = serde_json::to_value(parsed)?;
        merge(&mut v, &as_json, "").map_err(|e| thermosplat::Error::Config(e.to_string()))?;
    }
    merge(&mut v, overrides, "").map_err(|e| thermosplat::Error::Config(e.to_string()))?;
    let cfg: RunConfig = serde_json::from_value(v).map_err(|e| thermosplat::Error::Config(e.to_string()))?;
    cfg.train.validate()?;
    if cfg.train.iterations == 0 {
        return Err(thermosplat::Error::Config("iterations must be positive".into()).into());
    }
    if cfg.init.gaussians == 0 {
        return Err(thermosplat::Error::Config("init.gaussians must be positive".into()).into());
    }
    Ok(cfg)
}
