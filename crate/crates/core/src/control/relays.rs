//! Relay bank model and switching sequences.
//!
//! Relay 4 selects the load source and relay 5 the UPS source (both switch
//! together). Relay 6 drives the external DC relay that routes the battery
//! either to the charger (open, de-energized) or to the inverter (closed).

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::algorithm::{Decision, Target};

/// Delay between PCB relay actuation and closing the external DC relay.
pub const DC_RELAY_CLOSE_DELAY_S: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourcePosition {
    /// Normally-closed contact: grid.
    GridNc,
    /// Normally-open contact: inverter output.
    InverterNo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatteryPath {
    Charge,
    Discharge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DcRelay {
    /// Battery routed to the charger.
    Open,
    /// Battery routed to the inverter.
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelayBank {
    pub relay4_load_source: SourcePosition,
    pub relay5_ups_source: SourcePosition,
    pub relay6_battery_path: BatteryPath,
    pub external_dc_relay: DcRelay,
}

impl Default for RelayBank {
    fn default() -> Self {
        RelayBank::DE_ENERGIZED
    }
}

impl RelayBank {
    /// Every coil released. This is also the grid-mode configuration.
    pub const DE_ENERGIZED: RelayBank = RelayBank {
        relay4_load_source: SourcePosition::GridNc,
        relay5_ups_source: SourcePosition::GridNc,
        relay6_battery_path: BatteryPath::Charge,
        external_dc_relay: DcRelay::Open,
    };

    pub const BATTERY_MODE: RelayBank = RelayBank {
        relay4_load_source: SourcePosition::InverterNo,
        relay5_ups_source: SourcePosition::InverterNo,
        relay6_battery_path: BatteryPath::Discharge,
        external_dc_relay: DcRelay::Closed,
    };

    pub fn is_battery_mode(&self) -> bool {
        self.relay4_load_source == SourcePosition::InverterNo
            && self.relay6_battery_path == BatteryPath::Discharge
            && self.external_dc_relay == DcRelay::Closed
    }

    pub fn is_de_energized(&self) -> bool {
        *self == RelayBank::DE_ENERGIZED
    }

    /// True when the inverter has a battery feed.
    pub fn inverter_fed(&self) -> bool {
        self.relay6_battery_path == BatteryPath::Discharge
            && self.external_dc_relay == DcRelay::Closed
    }

    /// True when the battery is routed to the charger.
    pub fn charger_connected(&self) -> bool {
        self.relay6_battery_path == BatteryPath::Charge && self.external_dc_relay == DcRelay::Open
    }

    pub fn apply(&mut self, cmd: RelayCommand) {
        match cmd {
            RelayCommand::Relay4(p) => self.relay4_load_source = p,
            RelayCommand::Relay5(p) => self.relay5_ups_source = p,
            RelayCommand::Relay6(p) => self.relay6_battery_path = p,
            RelayCommand::ExternalDc(p) => self.external_dc_relay = p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "relay", content = "to", rename_all = "snake_case")]
pub enum RelayCommand {
    Relay4(SourcePosition),
    Relay5(SourcePosition),
    Relay6(BatteryPath),
    ExternalDc(DcRelay),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    Set(RelayCommand),
    /// Pause, in seconds.
    Wait(f64),
}

/// Ordered relay actions produced by [`apply_decision`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionSequence {
    pub steps: Vec<Step>,
}

impl ActionSequence {
    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn total_delay(&self) -> f64 {
        self.steps
            .iter()
            .map(|s| match s {
                Step::Wait(d) => *d,
                Step::Set(_) => 0.0,
            })
            .sum()
    }

    pub fn waits(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| matches!(s, Step::Wait(_)))
            .count()
    }

    /// Relay commands with their offsets from the start of the sequence.
    pub fn timeline(&self) -> Vec<(f64, RelayCommand)> {
        let mut t = 0.0;
        let mut out = Vec::with_capacity(self.steps.len());
        for step in &self.steps {
            match *step {
                Step::Wait(d) => t += d,
                Step::Set(cmd) => out.push((t, cmd)),
            }
        }
        out
    }

    /// Bank after every step has run.
    pub fn resulting_bank(&self, start: &RelayBank) -> RelayBank {
        let mut bank = *start;
        for step in &self.steps {
            if let Step::Set(cmd) = step {
                bank.apply(*cmd);
            }
        }
        bank
    }
}

/// Turn a decision into relay steps from the current `bank`.
///
/// Only relays that differ from the target configuration are switched, so
/// repeating a Battery/Grid/Hold decision yields an empty sequence. Closing
/// the external DC relay is always preceded by a
/// [`DC_RELAY_CLOSE_DELAY_S`] wait after relay 6 moves. `EmergencyOff`
/// releases all four relays immediately and unconditionally.
pub fn apply_decision(decision: &Decision, bank: &RelayBank) -> ActionSequence {
    let mut steps = Vec::new();
    match decision.target {
        Target::Hold => {}
        Target::EmergencyOff => {
            let off = RelayBank::DE_ENERGIZED;
            steps.push(Step::Set(RelayCommand::Relay4(off.relay4_load_source)));
            steps.push(Step::Set(RelayCommand::Relay5(off.relay5_ups_source)));
            steps.push(Step::Set(RelayCommand::ExternalDc(off.external_dc_relay)));
            steps.push(Step::Set(RelayCommand::Relay6(off.relay6_battery_path)));
        }
        Target::Battery => {
            let to = RelayBank::BATTERY_MODE;
            if bank.relay6_battery_path != to.relay6_battery_path {
                steps.push(Step::Set(RelayCommand::Relay6(to.relay6_battery_path)));
            }
            if bank.external_dc_relay != to.external_dc_relay {
                steps.push(Step::Wait(DC_RELAY_CLOSE_DELAY_S));
                steps.push(Step::Set(RelayCommand::ExternalDc(to.external_dc_relay)));
            }
            if bank.relay4_load_source != to.relay4_load_source {
                steps.push(Step::Set(RelayCommand::Relay4(to.relay4_load_source)));
            }
            if bank.relay5_ups_source != to.relay5_ups_source {
                steps.push(Step::Set(RelayCommand::Relay5(to.relay5_ups_source)));
            }
        }
        Target::Grid => {
            // Loads leave the inverter before its battery feed is cut.
            let to = RelayBank::DE_ENERGIZED;
            if bank.relay4_load_source != to.relay4_load_source {
                steps.push(Step::Set(RelayCommand::Relay4(to.relay4_load_source)));
            }
            if bank.relay5_ups_source != to.relay5_ups_source {
                steps.push(Step::Set(RelayCommand::Relay5(to.relay5_ups_source)));
            }
            if bank.external_dc_relay != to.external_dc_relay {
                steps.push(Step::Set(RelayCommand::ExternalDc(to.external_dc_relay)));
            }
            if bank.relay6_battery_path != to.relay6_battery_path {
                steps.push(Step::Set(RelayCommand::Relay6(to.relay6_battery_path)));
            }
        }
    }
    ActionSequence { steps }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::algorithm::Reason;
    use alloc::vec;
    use proptest::prelude::*;

    const BATTERY: Decision = Decision::new(Target::Battery, Reason::ForceBattery);
    const GRID: Decision = Decision::new(Target::Grid, Reason::ForceGrid);
    const HOLD: Decision = Decision::new(Target::Hold, Reason::BranchGap);
    const ESTOP: Decision = Decision::new(Target::EmergencyOff, Reason::EmergencyShutdown);

    fn any_bank() -> impl Strategy<Value = RelayBank> {
        (any::<bool>(), any::<bool>(), any::<bool>(), any::<bool>()).prop_map(|(a, b, c, d)| {
            RelayBank {
                relay4_load_source: if a {
                    SourcePosition::GridNc
                } else {
                    SourcePosition::InverterNo
                },
                relay5_ups_source: if b {
                    SourcePosition::GridNc
                } else {
                    SourcePosition::InverterNo
                },
                relay6_battery_path: if c {
                    BatteryPath::Charge
                } else {
                    BatteryPath::Discharge
                },
                external_dc_relay: if d { DcRelay::Open } else { DcRelay::Closed },
            }
        })
    }

    #[test]
    fn grid_to_battery_sequence() {
        let seq = apply_decision(&BATTERY, &RelayBank::DE_ENERGIZED);
        assert_eq!(
            seq.steps,
            vec![
                Step::Set(RelayCommand::Relay6(BatteryPath::Discharge)),
                Step::Wait(0.25),
                Step::Set(RelayCommand::ExternalDc(DcRelay::Closed)),
                Step::Set(RelayCommand::Relay4(SourcePosition::InverterNo)),
                Step::Set(RelayCommand::Relay5(SourcePosition::InverterNo)),
            ]
        );
        assert_eq!(
            seq.resulting_bank(&RelayBank::DE_ENERGIZED),
            RelayBank::BATTERY_MODE
        );
        assert_eq!(seq.total_delay(), 0.25);
    }

    #[test]
    fn battery_to_battery_is_empty() {
        assert!(apply_decision(&BATTERY, &RelayBank::BATTERY_MODE).is_empty());
    }

    #[test]
    fn battery_to_grid_has_no_delay() {
        let seq = apply_decision(&GRID, &RelayBank::BATTERY_MODE);
        assert_eq!(seq.waits(), 0);
        assert_eq!(
            seq.steps[0],
            Step::Set(RelayCommand::Relay4(SourcePosition::GridNc))
        );
        assert_eq!(
            seq.resulting_bank(&RelayBank::BATTERY_MODE),
            RelayBank::DE_ENERGIZED
        );
    }

    #[test]
    fn emergency_releases_all_four_without_delay() {
        for bank in [RelayBank::BATTERY_MODE, RelayBank::DE_ENERGIZED] {
            let seq = apply_decision(&ESTOP, &bank);
            assert_eq!(seq.len(), 4);
            assert_eq!(seq.total_delay(), 0.0);
            assert!(seq.resulting_bank(&bank).is_de_energized());
        }
    }

    #[test]
    fn hold_is_empty() {
        assert!(apply_decision(&HOLD, &RelayBank::BATTERY_MODE).is_empty());
    }

    #[test]
    fn timeline_offsets() {
        let tl = apply_decision(&BATTERY, &RelayBank::DE_ENERGIZED).timeline();
        assert_eq!(tl[0].0, 0.0);
        assert!(tl[1..].iter().all(|(t, _)| *t == 0.25));
        assert_eq!(tl[1].1, RelayCommand::ExternalDc(DcRelay::Closed));
    }

    proptest! {
        #[test]
        fn idempotent(bank in any_bank(), battery in any::<bool>()) {
            let d = if battery { BATTERY } else { GRID };
            let first = apply_decision(&d, &bank);
            let after = first.resulting_bank(&bank);
            prop_assert!(apply_decision(&d, &after).is_empty());
        }

        #[test]
        fn every_external_closure_preceded_by_exactly_one_delay(bank in any_bank()) {
            let seq = apply_decision(&BATTERY, &bank);
            for (i, step) in seq.steps.iter().enumerate() {
                if *step == Step::Set(RelayCommand::ExternalDc(DcRelay::Closed)) {
                    prop_assert_eq!(seq.steps[i - 1], Step::Wait(DC_RELAY_CLOSE_DELAY_S));
                }
            }
            let closes = bank.external_dc_relay == DcRelay::Open;
            prop_assert_eq!(seq.waits(), usize::from(closes));
        }
    }
}
