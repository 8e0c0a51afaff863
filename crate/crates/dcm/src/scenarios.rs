//! Built-in scenarios and the scenario file loader.

use std::path::{Path, PathBuf};

use dcm_core::profile::ProfileKind;
use dcm_core::scenario::{Outage, ScheduledCommand};
use dcm_core::{CommandKind, PlantConfig, RelayMode, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const BUILTIN_NAMES: [&str; 3] = ["reference_day", "switching", "failover"];

const FAILOVER_OUTAGES: usize = 100;

#[derive(Debug, Error)]
pub enum ScenarioLoadError {
    #[error("cannot read scenario {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("scenario {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("scenario {name}: {source}")]
    Invalid {
        name: String,
        source: dcm_core::scenario::ScenarioError,
    },
    #[error("unknown scenario `{0}`: not a built-in ({builtins}) and no such file", builtins = BUILTIN_NAMES.join(", "))]
    Unknown(String),
}

/// Overrides from the command line.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tick: Option<f64>,
}

/// A household day from midnight, driven by the automatic algorithm.
pub fn reference_day(plant: PlantConfig) -> Scenario {
    Scenario {
        name: "reference_day".into(),
        duration: 86_400.0,
        start_time_of_day: 0.0,
        load: ProfileKind::HouseholdDay { mean_w: 1300.0 },
        initial_soc: 50.0,
        plant,
        ..Scenario::default()
    }
}

/// Two minutes mid-morning on battery, then a forced switch to grid.
pub fn switching(plant: PlantConfig) -> Scenario {
    Scenario {
        name: "switching".into(),
        duration: 120.0,
        start_time_of_day: 10.0 * 3600.0,
        load: ProfileKind::Flat { watts: 750.0 },
        initial_soc: 80.0,
        plant,
        commands: vec![ScheduledCommand {
            at: 60.0,
            kind: CommandKind::SetMode(RelayMode::ForceGrid),
        }],
        ..Scenario::default()
    }
}

/// A hundred seeded outages of 2-60 s separated by 30-150 s of grid.
pub fn failover(plant: PlantConfig, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut outages = Vec::with_capacity(FAILOVER_OUTAGES);
    let mut t = 0.0;
    for _ in 0..FAILOVER_OUTAGES {
        t += rng.gen_range(30.0..150.0);
        let len = rng.gen_range(2.0..60.0);
        outages.push(Outage {
            start: t,
            end: t + len,
        });
        t += len;
    }
    Scenario {
        name: "failover".into(),
        duration: (t + 60.0).ceil(),
        start_time_of_day: 0.0,
        load: ProfileKind::Flat { watts: 400.0 },
        grid_outages: outages,
        initial_soc: 60.0,
        plant,
        seed,
        ..Scenario::default()
    }
}

pub fn builtin(name: &str, plant: PlantConfig, seed: u64) -> Option<Scenario> {
    match name {
        "reference_day" => Some(reference_day(plant)),
        "switching" => Some(switching(plant)),
        "failover" => Some(failover(plant, seed)),
        _ => None,
    }
}

/// Parse a scenario document. A missing `plant` section inherits `plant`.
pub fn parse_scenario(
    text: &str,
    origin: &Path,
    plant: &PlantConfig,
) -> Result<Scenario, ScenarioLoadError> {
    let parse_err = |source| ScenarioLoadError::Parse {
        path: origin.to_path_buf(),
        source,
    };
    let mut value: serde_json::Value = serde_json::from_str(text).map_err(parse_err)?;
    if let Some(obj) = value.as_object_mut() {
        if !obj.contains_key("plant") {
            obj.insert(
                "plant".into(),
                serde_json::to_value(plant).expect("plant config serializes"),
            );
        }
    }
    serde_json::from_value(value).map_err(parse_err)
}

/// Resolve a built-in name or a JSON file, apply overrides and validate.
pub fn load_scenario(
    spec: &str,
    plant: &PlantConfig,
    overrides: Overrides,
) -> Result<Scenario, ScenarioLoadError> {
    let seed = overrides.seed.unwrap_or(0);
    let mut scenario = match builtin(spec, *plant, seed) {
        Some(s) => s,
        None => {
            let path = Path::new(spec);
            if !path.is_file() {
                return Err(ScenarioLoadError::Unknown(spec.to_string()));
            }
            let text = std::fs::read_to_string(path).map_err(|source| ScenarioLoadError::Read {
                path: path.to_path_buf(),
                source,
            })?;
            parse_scenario(&text, path, plant)?
        }
    };
    if let Some(seed) = overrides.seed {
        scenario.seed = seed;
    }
    if let Some(tick) = overrides.tick {
        scenario.plant.tick = tick;
    }
    scenario
        .validate()
        .map_err(|source| ScenarioLoadError::Invalid {
            name: scenario.name.clone(),
            source,
        })?;
    Ok(scenario)
}
