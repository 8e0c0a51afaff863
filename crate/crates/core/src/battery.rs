//! Coulomb-counting battery model for a 16S LiFePO4 pack.

use bitflags::bitflags;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::plant::PlantConfig;
use crate::SECONDS_PER_HOUR;

pub const CELLS_IN_SERIES: u32 = 16;
pub const CELL_NOMINAL_VOLTAGE: f64 = 3.2;
pub const NOMINAL_PACK_VOLTAGE: f64 = CELLS_IN_SERIES as f64 * CELL_NOMINAL_VOLTAGE;
pub const DEFAULT_NOMINAL_CAPACITY_WH: f64 = 5120.0;
pub const DEFAULT_USABLE_CAPACITY_WH: f64 = 4608.0;
const DEFAULT_TEMPERATURE_C: f64 = 25.0;

bitflags! {
    /// BMS protection alarms.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
    pub struct Alarms: u8 {
        const OVER_VOLTAGE = 1 << 0;
        const UNDER_VOLTAGE = 1 << 1;
        const OVER_CURRENT = 1 << 2;
        const SHORT_CIRCUIT = 1 << 3;
        const THERMAL = 1 << 4;
    }
}

impl Alarms {
    /// Stable lowercase names, in bit order.
    pub fn names(self) -> impl Iterator<Item = &'static str> {
        const NAMES: [(Alarms, &str); 5] = [
            (Alarms::OVER_VOLTAGE, "over_voltage"),
            (Alarms::UNDER_VOLTAGE, "under_voltage"),
            (Alarms::OVER_CURRENT, "over_current"),
            (Alarms::SHORT_CIRCUIT, "short_circuit"),
            (Alarms::THERMAL, "thermal"),
        ];
        NAMES
            .into_iter()
            .filter(move |(flag, _)| self.contains(*flag))
            .map(|(_, name)| name)
    }

    pub fn from_label(name: &str) -> Option<Alarms> {
        match name {
            "over_voltage" => Some(Alarms::OVER_VOLTAGE),
            "under_voltage" => Some(Alarms::UNDER_VOLTAGE),
            "over_current" => Some(Alarms::OVER_CURRENT),
            "short_circuit" => Some(Alarms::SHORT_CIRCUIT),
            "thermal" => Some(Alarms::THERMAL),
            _ => None,
        }
    }
}

bitflags! {
    /// Saturation events raised while stepping the battery.
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
    pub struct StepEvents: u8 {
        /// Discharge request exceeded the inverter rating.
        const INVERTER_LIMIT = 1 << 0;
        /// Charge request exceeded the charger rating.
        const CHARGER_LIMIT = 1 << 1;
        /// Stored energy reached zero during the step.
        const EMPTY = 1 << 2;
        /// Stored energy reached nominal capacity during the step.
        const FULL = 1 << 3;
        /// SoC fell through the bottom of the usable window.
        const USABLE_FLOOR_CROSSED = 1 << 4;
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BatteryError {
    #[error("nominal capacity must be positive, got {0} Wh")]
    NonPositiveCapacity(f64),
    #[error("usable capacity {usable} Wh must lie in [0, nominal {nominal} Wh]")]
    UsableExceedsNominal { usable: f64, nominal: f64 },
    #[error("state of charge {0} outside [0, 100]")]
    SocOutOfRange(f64),
}

/// Pack state as reported by the BMS.
///
/// `pack_current` is signed: positive while discharging, negative while
/// charging.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryState {
    pub soc: f64,
    pub soh: f64,
    pub pack_voltage: f64,
    pub pack_current: f64,
    pub temperature: f64,
    pub nominal_capacity: f64,
    pub usable_capacity: f64,
    pub alarms: Alarms,
}

impl Default for BatteryState {
    fn default() -> Self {
        BatteryState::with_soc(100.0).expect("default capacities are valid")
    }
}

impl BatteryState {
    pub fn new(
        nominal_capacity: f64,
        usable_capacity: f64,
        soc: f64,
    ) -> Result<Self, BatteryError> {
        if !(nominal_capacity > 0.0 && nominal_capacity.is_finite()) {
            return Err(BatteryError::NonPositiveCapacity(nominal_capacity));
        }
        if !(0.0..=nominal_capacity).contains(&usable_capacity) {
            return Err(BatteryError::UsableExceedsNominal {
                usable: usable_capacity,
                nominal: nominal_capacity,
            });
        }
        if !(0.0..=100.0).contains(&soc) {
            return Err(BatteryError::SocOutOfRange(soc));
        }
        let mut alarms = Alarms::empty();
        if soc == 0.0 {
            alarms |= Alarms::UNDER_VOLTAGE;
        }
        Ok(BatteryState {
            soc,
            soh: 100.0,
            pack_voltage: open_circuit_voltage(soc),
            pack_current: 0.0,
            temperature: DEFAULT_TEMPERATURE_C,
            nominal_capacity,
            usable_capacity,
            alarms,
        })
    }

    /// Default 5120 Wh nominal / 4608 Wh usable pack at the given SoC.
    pub fn with_soc(soc: f64) -> Result<Self, BatteryError> {
        Self::new(DEFAULT_NOMINAL_CAPACITY_WH, DEFAULT_USABLE_CAPACITY_WH, soc)
    }

    pub fn stored_energy(&self) -> f64 {
        self.soc / 100.0 * self.nominal_capacity
    }

    /// SoC at the bottom of the usable window.
    pub fn usable_floor_soc(&self) -> f64 {
        (1.0 - self.usable_capacity / self.nominal_capacity) * 100.0
    }

    pub fn usable_floor_energy(&self) -> f64 {
        self.nominal_capacity - self.usable_capacity
    }

    fn set_stored_energy(&mut self, energy_wh: f64) {
        let soc = energy_wh / self.nominal_capacity * 100.0;
        self.soc = soc.clamp(0.0, 100.0);
        self.pack_voltage = open_circuit_voltage(self.soc);
    }
}

/// Linear open-circuit voltage curve: 3.0 V/cell empty, 3.4 V/cell full,
/// passing through 51.2 V at 50 %.
pub fn open_circuit_voltage(soc: f64) -> f64 {
    CELLS_IN_SERIES as f64 * (3.0 + 0.4 * soc.clamp(0.0, 100.0) / 100.0)
}

/// Outcome of [`step_battery`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryStep {
    pub state: BatteryState,
    /// Power actually exchanged at the pack terminals' AC/DC side (after
    /// inverter or charger clamping), positive for discharge.
    pub applied_power: f64,
    /// Seconds of the step during which `applied_power` flowed before the
    /// pack saturated (equals `dt` when no saturation occurred).
    pub active_time: f64,
    /// Energy delivered to the load side (discharge) or drawn from the
    /// charger input (charge), in Wh. Always non-negative.
    pub terminal_energy: f64,
    /// Change in stored energy, Wh (negative while discharging).
    pub stored_delta: f64,
    pub events: StepEvents,
}

/// Advance the pack by `dt` seconds at a signed `power` (watts, positive
/// discharge, negative charge).
///
/// Discharge removes `power·dt/η_d` from storage, charge adds
/// `|power|·dt·η_c`. Requests are clamped to the inverter or charger rating,
/// and storage saturates at empty and full; every clamp is reported in
/// [`BatteryStep::events`].
pub fn step_battery(state: &BatteryState, power: f64, dt: f64, cfg: &PlantConfig) -> BatteryStep {
    debug_assert!(dt > 0.0, "dt must be positive");
    let mut next = *state;
    let mut events = StepEvents::empty();
    let stored = state.stored_energy();
    let hours = dt / SECONDS_PER_HOUR;

    let (applied_power, active_time, terminal_energy, stored_delta) = if power > 0.0 {
        let mut p = power;
        if p > cfg.inverter_rating {
            p = cfg.inverter_rating;
            events |= StepEvents::INVERTER_LIMIT;
        }
        if p <= 0.0 {
            (0.0, dt, 0.0, 0.0)
        } else {
            let withdraw = p * hours / cfg.discharge_efficiency;
            if withdraw >= stored {
                let active = if stored > 0.0 {
                    stored * cfg.discharge_efficiency / p * SECONDS_PER_HOUR
                } else {
                    0.0
                };
                events |= StepEvents::EMPTY;
                (
                    p,
                    active.min(dt),
                    stored * cfg.discharge_efficiency,
                    -stored,
                )
            } else {
                (p, dt, p * hours, -withdraw)
            }
        }
    } else if power < 0.0 {
        let mut p = -power;
        if p > cfg.charger_power {
            p = cfg.charger_power;
            events |= StepEvents::CHARGER_LIMIT;
        }
        let headroom = state.nominal_capacity - stored;
        if p <= 0.0 {
            (0.0, dt, 0.0, 0.0)
        } else {
            let store = p * hours * cfg.charge_efficiency;
            if store >= headroom {
                let active = if headroom > 0.0 {
                    headroom / (p * cfg.charge_efficiency) * SECONDS_PER_HOUR
                } else {
                    0.0
                };
                events |= StepEvents::FULL;
                (
                    -p,
                    active.min(dt),
                    headroom / cfg.charge_efficiency,
                    headroom,
                )
            } else {
                (-p, dt, p * hours, store)
            }
        }
    } else {
        (0.0, dt, 0.0, 0.0)
    };

    if stored_delta != 0.0 {
        let floor_soc = state.usable_floor_soc();
        next.set_stored_energy(stored + stored_delta);
        if events.contains(StepEvents::EMPTY) {
            next.soc = 0.0;
            next.pack_voltage = open_circuit_voltage(0.0);
        }
        if events.contains(StepEvents::FULL) {
            next.soc = 100.0;
            next.pack_voltage = open_circuit_voltage(100.0);
        }
        if state.soc >= floor_soc && next.soc < floor_soc {
            events |= StepEvents::USABLE_FLOOR_CROSSED;
        }
    }

    if next.soc <= 0.0 {
        next.alarms |= Alarms::UNDER_VOLTAGE;
    } else {
        next.alarms.remove(Alarms::UNDER_VOLTAGE);
    }

    let mean_power = if dt > 0.0 {
        applied_power * active_time / dt
    } else {
        0.0
    };
    next.pack_current = if next.pack_voltage > 0.0 {
        mean_power / next.pack_voltage
    } else {
        0.0
    };

    BatteryStep {
        state: next,
        applied_power,
        active_time,
        terminal_energy,
        stored_delta,
        events,
    }
}
