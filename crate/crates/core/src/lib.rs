//! Core of the demand charge manager: the relay-control algorithm and its
//! supervisor, a deterministic battery/grid/load plant, Modbus-RTU and CAN
//! codecs for the sensing layer, and tariff/demand-charge analytics.
//!
//! Everything here is pure and allocation-light so the same code can run on
//! the controller, in batch simulations and on embedded targets. IO, JSON,
//! the CLI and the network bridges live in the `dcm` crate.

#![no_std]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod battery;
pub mod codec;
pub mod command;
pub mod control;
pub mod plant;
pub mod poll;
pub mod profile;
pub mod reading;
pub mod scenario;
pub mod sim;
pub mod tariff;

pub use battery::{step_battery, Alarms, BatteryState, BatteryStep};
pub use command::{Command, CommandKind, CommandSource};
pub use control::{
    apply_decision, control_tick, decide_relays, ActionSequence, ControlConfig, ControlInputs,
    ControlState, Decision, Reason, RelayBank, RelayMode, Target,
};
pub use plant::{Plant, PlantConfig};
pub use reading::ElectricalReading;
pub use scenario::Scenario;

pub(crate) const SECONDS_PER_HOUR: f64 = 3600.0;
