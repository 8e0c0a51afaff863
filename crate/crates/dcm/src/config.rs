//! TOML configuration with defaults, `DCM_` environment overrides and
//! field-precise validation.
//!
//! Environment variables of the form `DCM_<SECTION>__<KEY>` override
//! `<section>.<key>` (for example `DCM_CONTROL__POWER_THRESHOLD=900`);
//! `DCM_SCENARIO_PATH` overrides the top-level `scenario_path`. Values are
//! parsed as TOML literals and fall back to plain strings.

use std::path::{Path, PathBuf};

use dcm_core::tariff::{ArbitrageConfig, TariffSchedule};
use dcm_core::{ControlConfig, PlantConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_PREFIX: &str = "DCM_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BrokerConfig {
    /// Connect to an external MQTT broker in addition to the in-process bus.
    pub mqtt_enabled: bool,
    pub host: String,
    pub port: u16,
    pub client_id: String,
    pub websocket_port: u16,
    /// Address the WebSocket bridge binds to.
    pub websocket_bind: String,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        BrokerConfig {
            mqtt_enabled: false,
            host: "127.0.0.1".into(),
            port: 1883,
            client_id: "dcm-controller".into(),
            websocket_port: 8080,
            websocket_bind: "127.0.0.1".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub plant: PlantConfig,
    pub control: ControlConfig,
    pub tariff: TariffSchedule,
    pub arbitrage: ArbitrageConfig,
    pub broker: BrokerConfig,
    pub scenario_path: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            plant: PlantConfig::default(),
            control: ControlConfig::default(),
            tariff: TariffSchedule::reference(),
            arbitrage: ArbitrageConfig::reference(),
            broker: BrokerConfig::default(),
            scenario_path: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{field}: {message}")]
    Bound { field: String, message: String },
    #[error("{field}: referenced file {path} does not exist")]
    MissingFile { field: &'static str, path: PathBuf },
    #[error("environment variable {var}: {message}")]
    Env { var: String, message: String },
}

fn bound(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Bound {
        field: field.into(),
        message: message.into(),
    }
}

impl Config {
    /// Parse TOML text, apply the given environment overrides, validate.
    pub fn from_toml_str(
        text: &str,
        origin: &Path,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Config, ConfigError> {
        let parse_err = |message: String| ConfigError::Parse {
            path: origin.to_path_buf(),
            message,
        };
        let mut value: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        apply_env(&mut value, env)?;
        let cfg: Config = value
            .try_into()
            .map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.plant.validate().map_err(|e| {
            let text = e.to_string();
            match text.split_once(": ") {
                Some((field, msg)) => bound(field, msg),
                None => bound("plant", text),
            }
        })?;

        let c = &self.control;
        let positive = |v: f64| v > 0.0 && v.is_finite();
        let non_negative = |v: f64| v >= 0.0 && v.is_finite();
        if !positive(c.power_threshold) {
            return Err(bound(
                "control.power_threshold",
                format!(
                    "must be a positive number of watts, got {}",
                    c.power_threshold
                ),
            ));
        }
        if !positive(c.slot_seconds) {
            return Err(bound("control.slot_seconds", "must be positive"));
        }
        if !(0.0..=100.0).contains(&c.soc_floor_pct) {
            return Err(bound("control.soc_floor_pct", "must be within [0, 100]"));
        }
        if !non_negative(c.soc_floor_release_pct) {
            return Err(bound(
                "control.soc_floor_release_pct",
                "must be non-negative",
            ));
        }
        if !non_negative(c.hysteresis_w) || c.hysteresis_w >= c.power_threshold {
            return Err(bound(
                "control.hysteresis_w",
                "must be non-negative and below control.power_threshold",
            ));
        }
        if !non_negative(c.min_dwell_s) {
            return Err(bound("control.min_dwell_s", "must be non-negative"));
        }
        if !positive(c.poll_period_s) {
            return Err(bound("control.poll_period_s", "must be positive"));
        }
        if c.stale_after_polls == 0 {
            return Err(bound("control.stale_after_polls", "must be at least 1"));
        }
        if !non_negative(c.grid_loss_voltage) {
            return Err(bound("control.grid_loss_voltage", "must be non-negative"));
        }

        self.tariff
            .validate()
            .map_err(|e| bound("tariff", e.to_string()))?;
        self.arbitrage.validate().map_err(|e| {
            let text = e.to_string();
            match text.split_once(' ') {
                Some((field, rest)) if field.starts_with("arbitrage.") => bound(field, rest),
                _ => bound("arbitrage", text),
            }
        })?;

        if self.broker.port == 0 {
            return Err(bound("broker.port", "must be non-zero"));
        }
        if let Some(p) = &self.scenario_path {
            if !p.exists() {
                return Err(ConfigError::MissingFile {
                    field: "scenario_path",
                    path: p.clone(),
                });
            }
        }
        Ok(())
    }
}

fn apply_env(
    table: &mut toml::Table,
    env: impl IntoIterator<Item = (String, String)>,
) -> Result<(), ConfigError> {
    let mut vars: Vec<(String, String)> = env
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    vars.sort();
    for (var, raw) in vars {
        let key = var[ENV_PREFIX.len()..].to_ascii_lowercase();
        let path: Vec<&str> = key.split("__").collect();
        if path.iter().any(|p| p.is_empty()) || path.len() > 2 {
            return Err(ConfigError::Env {
                var,
                message: "expected DCM_<SECTION>__<KEY> or DCM_<KEY>".into(),
            });
        }
        let value = parse_literal(&raw);
        match path.as_slice() {
            [key] => {
                table.insert((*key).to_string(), value);
            }
            [section, key] => {
                let entry = table
                    .entry((*section).to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                match entry {
                    toml::Value::Table(t) => {
                        t.insert((*key).to_string(), value);
                    }
                    _ => {
                        return Err(ConfigError::Env {
                            var,
                            message: format!("`{section}` is not a section"),
                        })
                    }
                }
            }
            _ => unreachable!(),
        }
    }
    Ok(())
}

fn parse_literal(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Load a config file, or defaults when `path` is `None`, with overrides
/// from the process environment.
pub fn load_config(path: Option<&Path>) -> Result<Config, ConfigError> {
    let env = std::env::vars();
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.to_path_buf(),
                source,
            })?;
            Config::from_toml_str(&text, p, env)
        }
        None => Config::from_toml_str("", Path::new("<defaults>"), env),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Config, ConfigError> {
        Config::from_toml_str(text, Path::new("test.toml"), std::iter::empty())
    }

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = parse("").unwrap();
        assert_eq!(cfg.control.power_threshold, 700.0);
        assert_eq!(cfg.control.window_boundary, 6);
        assert_eq!(cfg.plant.tick, 1.0);
        assert_eq!(cfg, Config::default());
    }

    #[test]
    fn negative_threshold_names_field() {
        let err = parse("[control]\npower_threshold = -5\n").unwrap_err();
        assert!(
            err.to_string().starts_with("control.power_threshold:"),
            "{err}"
        );
    }

    #[test]
    fn override_echo() {
        let cfg = parse("[control]\npower_threshold = 900.0\n").unwrap();
        assert_eq!(cfg.control.power_threshold, 900.0);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = parse("[control]\npower_treshold = 900\n").unwrap_err();
        assert!(err.to_string().contains("power_treshold"), "{err}");
    }

    #[test]
    fn plant_bound_names_field() {
        let err = parse("[plant]\ndischarge_efficiency = 0\n").unwrap_err();
        assert!(
            err.to_string().starts_with("plant.discharge_efficiency:"),
            "{err}"
        );
    }

    #[test]
    fn env_overrides() {
        let env = vec![
            (
                "DCM_CONTROL__POWER_THRESHOLD".to_string(),
                "850".to_string(),
            ),
            ("DCM_BROKER__HOST".to_string(), "broker.local".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ];
        let cfg =
            Config::from_toml_str("[control]\npower_threshold = 900.0\n", Path::new("x"), env)
                .unwrap();
        assert_eq!(cfg.control.power_threshold, 850.0);
        assert_eq!(cfg.broker.host, "broker.local");
    }

    #[test]
    fn missing_scenario_file() {
        let err = parse("scenario_path = \"/nonexistent/day.json\"\n").unwrap_err();
        assert!(matches!(
            err,
            ConfigError::MissingFile {
                field: "scenario_path",
                ..
            }
        ));
    }
}
