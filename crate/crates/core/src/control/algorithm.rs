use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// SoC level separating discharge-permitted and charge-required operation.
pub const SOC_LOW_PCT: f64 = 20.0;
pub const SOC_FULL_PCT: f64 = 100.0;
pub const DEFAULT_POWER_THRESHOLD_W: f64 = 700.0;
pub const DEFAULT_WINDOW_BOUNDARY: u32 = 6;

/// Operator relay mode. The numeric encoding is part of the command wire
/// format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum RelayMode {
    #[default]
    Auto = 0,
    ForceBattery = 1,
    ForceGrid = 2,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InputError {
    #[error("relay mode {0} is not one of 0 (auto), 1 (force battery), 2 (force grid)")]
    RelayMode(u8),
    #[error("power threshold must be positive, got {0} W")]
    Threshold(f64),
    #[error("state of charge {0} outside [0, 100]")]
    Soc(f64),
    #[error("load power must be a non-negative number, got {0} W")]
    Load(f64),
}

impl TryFrom<u8> for RelayMode {
    type Error = InputError;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(RelayMode::Auto),
            1 => Ok(RelayMode::ForceBattery),
            2 => Ok(RelayMode::ForceGrid),
            other => Err(InputError::RelayMode(other)),
        }
    }
}

impl From<RelayMode> for u8 {
    fn from(m: RelayMode) -> u8 {
        m as u8
    }
}

/// Inputs of one relay decision.
///
/// `present_slot` is an abstract time-slot index compared against
/// `window_boundary`; the runner maps wall-clock time onto it (hour of day
/// by default, so `< 6` is the pre-dawn charging window).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInputs {
    pub soc: f64,
    pub load_power: f64,
    pub power_threshold: f64,
    pub relay_mode: RelayMode,
    pub em_mode: bool,
    pub present_slot: u32,
    pub window_boundary: u32,
}

impl ControlInputs {
    pub fn validate(&self) -> Result<(), InputError> {
        if !(self.power_threshold > 0.0 && self.power_threshold.is_finite()) {
            return Err(InputError::Threshold(self.power_threshold));
        }
        if !(0.0..=100.0).contains(&self.soc) {
            return Err(InputError::Soc(self.soc));
        }
        if !(self.load_power >= 0.0 && self.load_power.is_finite()) {
            return Err(InputError::Load(self.load_power));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    /// Relays ON: loads on the inverter, battery discharging.
    Battery,
    /// Relays OFF: loads on the grid, battery on the charger.
    Grid,
    /// Keep the current relay configuration.
    Hold,
    /// De-energize everything.
    EmergencyOff,
}

/// Which branch produced a decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    EmergencyShutdown,
    ForceBattery,
    ForceGrid,
    LoadAboveThreshold,
    DischargeWindow,
    OffPeakCharging,
    FullAtOffPeak,
    LowSocCharging,
    /// No branch of the automatic chain fired.
    BranchGap,
    /// Supervisor: telemetry older than the staleness limit.
    StaleTelemetry,
    /// Supervisor: grid voltage lost, fail over to the inverter.
    GridOutage,
    /// Supervisor: optional hard SoC floor fired (deviates from the plain
    /// algorithm, which would stay on battery above the load threshold).
    SocFloor,
    /// Supervisor: automatic change suppressed by the minimum dwell time.
    MinDwell,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::EmergencyShutdown => "emergency_shutdown",
            Reason::ForceBattery => "force_battery",
            Reason::ForceGrid => "force_grid",
            Reason::LoadAboveThreshold => "load_above_threshold",
            Reason::DischargeWindow => "discharge_window",
            Reason::OffPeakCharging => "off_peak_charging",
            Reason::FullAtOffPeak => "full_at_off_peak",
            Reason::LowSocCharging => "low_soc_charging",
            Reason::BranchGap => "branch_gap",
            Reason::StaleTelemetry => "stale_telemetry",
            Reason::GridOutage => "grid_outage",
            Reason::SocFloor => "soc_floor",
            Reason::MinDwell => "min_dwell",
        }
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Decision {
    pub target: Target,
    pub reason: Reason,
}

impl Decision {
    pub const fn new(target: Target, reason: Reason) -> Self {
        Decision { target, reason }
    }
}

/// The relay-control chain.
///
/// Emergency first, then the manual modes, then the automatic branches in
/// order. Inputs on the boundaries no branch covers (slot exactly on the
/// window boundary with SoC ≥ 20 %, or SoC exactly 20 % after the boundary
/// with load under threshold) yield [`Target::Hold`].
pub fn decide_relays(inputs: &ControlInputs) -> Result<Decision, InputError> {
    inputs.validate()?;
    let ControlInputs {
        soc,
        load_power,
        power_threshold,
        relay_mode,
        em_mode,
        present_slot,
        window_boundary,
    } = *inputs;

    if em_mode {
        return Ok(Decision::new(
            Target::EmergencyOff,
            Reason::EmergencyShutdown,
        ));
    }
    let decision = match relay_mode {
        RelayMode::ForceBattery => Decision::new(Target::Battery, Reason::ForceBattery),
        RelayMode::ForceGrid => Decision::new(Target::Grid, Reason::ForceGrid),
        RelayMode::Auto => {
            if load_power >= power_threshold {
                Decision::new(Target::Battery, Reason::LoadAboveThreshold)
            } else if soc > SOC_LOW_PCT && present_slot > window_boundary {
                Decision::new(Target::Battery, Reason::DischargeWindow)
            } else if soc != SOC_FULL_PCT && present_slot < window_boundary {
                Decision::new(Target::Grid, Reason::OffPeakCharging)
            } else if soc == SOC_FULL_PCT && present_slot < window_boundary {
                Decision::new(Target::Battery, Reason::FullAtOffPeak)
            } else if soc < SOC_LOW_PCT {
                Decision::new(Target::Grid, Reason::LowSocCharging)
            } else {
                Decision::new(Target::Hold, Reason::BranchGap)
            }
        }
    };
    Ok(decision)
}
