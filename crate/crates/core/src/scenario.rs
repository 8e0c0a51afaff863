//! Deterministic description of a simulated run.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battery::{
    BatteryError, BatteryState, DEFAULT_NOMINAL_CAPACITY_WH, DEFAULT_USABLE_CAPACITY_WH,
};
use crate::command::CommandKind;
use crate::plant::{PlantConfig, PlantError};
use crate::profile::{make_load_profile, LoadProfile, ProfileError, ProfileKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outage {
    pub start: f64,
    pub end: f64,
}

impl Outage {
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }
}

/// Operator command injected at a fixed time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledCommand {
    pub at: f64,
    #[serde(flatten)]
    pub kind: CommandKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TelemetrySource {
    Bms,
    GridMeter,
    LoadMeter,
}

/// Interval during which a sensor stops answering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetryGap {
    pub source: TelemetrySource,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub duration: f64,
    /// Seconds after midnight at which the run starts.
    pub start_time_of_day: f64,
    pub load: ProfileKind,
    pub grid_outages: Vec<Outage>,
    pub initial_soc: f64,
    pub nominal_capacity: f64,
    pub usable_capacity: f64,
    pub plant: PlantConfig,
    pub seed: u64,
    pub commands: Vec<ScheduledCommand>,
    pub telemetry_gaps: Vec<TelemetryGap>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: String::from("unnamed"),
            duration: 3600.0,
            start_time_of_day: 0.0,
            load: ProfileKind::Flat { watts: 0.0 },
            grid_outages: Vec::new(),
            initial_soc: 100.0,
            nominal_capacity: DEFAULT_NOMINAL_CAPACITY_WH,
            usable_capacity: DEFAULT_USABLE_CAPACITY_WH,
            plant: PlantConfig::default(),
            seed: 0,
            commands: Vec::new(),
            telemetry_gaps: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("duration must be positive, got {0}")]
    Duration(f64),
    #[error("start_time_of_day must be in [0, 86400), got {0}")]
    TimeOfDay(f64),
    #[error("grid_outages[{index}]: {reason}")]
    Outage { index: usize, reason: &'static str },
    #[error("commands[{0}]: time outside the run")]
    CommandTime(usize),
    #[error("telemetry_gaps[{0}]: end must follow start")]
    Gap(usize),
    #[error(transparent)]
    Battery(#[from] BatteryError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("load: {0}")]
    Profile(#[from] ProfileError),
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(ScenarioError::Duration(self.duration));
        }
        if !(0.0..86_400.0).contains(&self.start_time_of_day) {
            return Err(ScenarioError::TimeOfDay(self.start_time_of_day));
        }
        let mut prev_end = 0.0;
        for (index, o) in self.grid_outages.iter().enumerate() {
            let reason = if !(o.end > o.start) {
                Some("end must follow start")
            } else if o.start < 0.0 || o.end > self.duration {
                Some("outside [0, duration]")
            } else if index > 0 && o.start < prev_end {
                Some("overlaps or precedes the previous outage")
            } else {
                None
            };
            if let Some(reason) = reason {
                return Err(ScenarioError::Outage { index, reason });
            }
            prev_end = o.end;
        }
        for (i, c) in self.commands.iter().enumerate() {
            if !(c.at >= 0.0 && c.at < self.duration) {
                return Err(ScenarioError::CommandTime(i));
            }
            if let CommandKind::SetThreshold(w) = c.kind {
                if !(w > 0.0 && w.is_finite()) {
                    return Err(ScenarioError::CommandTime(i));
                }
            }
        }
        for (i, g) in self.telemetry_gaps.iter().enumerate() {
            if !(g.end > g.start) {
                return Err(ScenarioError::Gap(i));
            }
        }
        self.plant.validate()?;
        self.initial_battery()?;
        self.load_profile()?;
        Ok(())
    }

    pub fn initial_battery(&self) -> Result<BatteryState, BatteryError> {
        BatteryState::new(
            self.nominal_capacity,
            self.usable_capacity,
            self.initial_soc,
        )
    }

    pub fn load_profile(&self) -> Result<LoadProfile, ProfileError> {
        make_load_profile(&self.load, self.duration)
    }

    pub fn grid_down_at(&self, t: f64) -> bool {
        self.grid_outages.iter().any(|o| o.contains(t))
    }

    pub fn gap_at(&self, source: TelemetrySource, t: f64) -> bool {
        self.telemetry_gaps
            .iter()
            .any(|g| g.source == source && t >= g.start && t < g.end)
    }

    /// Outage start or end strictly after `t`.
    pub fn next_grid_change_after(&self, t: f64) -> Option<f64> {
        self.grid_outages
            .iter()
            .flat_map(|o| [o.start, o.end])
            .filter(|&x| x > t)
            .fold(None, |acc: Option<f64>, x| {
                Some(acc.map_or(x, |a| a.min(x)))
            })
    }

    /// Number of control ticks in the run.
    pub fn tick_count(&self) -> usize {
        libm::ceil(self.duration / self.plant.tick - 1e-9) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn defaults_validate() {
        assert!(Scenario::default().validate().is_ok());
        assert_eq!(Scenario::default().tick_count(), 3600);
    }

    #[test]
    fn outages_must_be_ordered_and_inside() {
        let mut s = Scenario {
            grid_outages: vec![
                Outage {
                    start: 10.0,
                    end: 20.0,
                },
                Outage {
                    start: 15.0,
                    end: 30.0,
                },
            ],
            ..Scenario::default()
        };
        assert!(matches!(
            s.validate(),
            Err(ScenarioError::Outage { index: 1, .. })
        ));
        s.grid_outages = vec![Outage {
            start: 3000.0,
            end: 4000.0,
        }];
        assert!(matches!(
            s.validate(),
            Err(ScenarioError::Outage { index: 0, .. })
        ));
        s.grid_outages = vec![
            Outage {
                start: 10.0,
                end: 20.0,
            },
            Outage {
                start: 20.0,
                end: 30.0,
            },
        ];
        assert!(s.validate().is_ok());
        assert!(s.grid_down_at(20.0));
        assert!(!s.grid_down_at(30.0));
        assert_eq!(s.next_grid_change_after(0.0), Some(10.0));
        assert_eq!(s.next_grid_change_after(20.0), Some(30.0));
        assert_eq!(s.next_grid_change_after(30.0), None);
    }

    #[test]
    fn negative_load_rejected() {
        let s = Scenario {
            load: ProfileKind::Flat { watts: -1.0 },
            ..Scenario::default()
        };
        assert!(matches!(s.validate(), Err(ScenarioError::Profile(_))));
    }
}
