//! Training configuration files.
//!
//! A TOML file with a `[model]` and a `[train]` table. `model.preset`
//! (`desk`, `large` or `tiny`, default `desk`) supplies the base values and
//! the remaining keys override them; unknown keys are rejected by name.

use serde::Deserialize;
use w2t::model::ModelConfig;
use w2t::training::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Raw {
    #[serde(default)]
    model: toml::Table,
    #[serde(default)]
    train: TrainConfig,
}

pub fn parse_config(text: &str) -> Result<RunConfig, String> {
    let raw: Raw = toml::from_str(text).map_err(|e| e.message().to_string())?;
    let mut table = raw.model;
    let preset = match table.remove("preset") {
        None => "desk".to_string(),
        Some(toml::Value::String(s)) => s,
        Some(v) => {
            return Err(format!(
                "model.preset must be a string, found {}",
                v.type_str()
            ))
        }
    };
    let base =
        ModelConfig::by_name(&preset).ok_or_else(|| format!("unknown model preset {preset:?}"))?;
    let mut merged = toml::Table::try_from(&base).map_err(|e| e.to_string())?;
    merged.extend(table);
    let model: ModelConfig = merged
        .try_into()
        .map_err(|e: toml::de::Error| format!("[model]: {}", e.message()))?;
    model.validate().map_err(|e| e.to_string())?;
    raw.train.validate().map_err(|e| e.to_string())?;
    Ok(RunConfig {
        model,
        train: raw.train,
    })
}
