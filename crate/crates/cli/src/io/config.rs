//! JSON application config: a `cohort` section for generation and a
//! `train` section for everything else. Missing fields fall back to
//! the built-in defaults, so partial configs are fine.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use vlrisk_core::cohort::CohortConfig;
use vlrisk_core::config::TrainConfig;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub cohort: CohortConfig,
    pub train: TrainConfig,
}

pub fn load_config(path: Option<&Path>) -> Result<AppConfig> {
    match path {
        None => Ok(AppConfig::default()),
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}
