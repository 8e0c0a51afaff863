//! One control-loop tick: operator commands, safety rules and the relay
//! algorithm merged into a single decision.
//!
//! Priority, highest first: emergency stop, latched manual mode, stale
//! telemetry (forces grid), grid outage (fails over to battery), the
//! optional SoC floor, then the automatic algorithm with hysteresis and a
//! minimum dwell between automatic source changes.

use serde::{Deserialize, Serialize};

use super::algorithm::{
    decide_relays, ControlInputs, Decision, Reason, RelayMode, Target, DEFAULT_POWER_THRESHOLD_W,
    DEFAULT_WINDOW_BOUNDARY,
};
use super::relays::{apply_decision, ActionSequence, RelayBank};
use crate::command::{Command, CommandKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub power_threshold: f64,
    pub window_boundary: u32,
    /// Length of one algorithm time slot in seconds of wall-clock time.
    pub slot_seconds: f64,
    pub soc_floor_enabled: bool,
    pub soc_floor_pct: f64,
    /// Once the floor fires it holds until SoC reaches floor + this margin.
    pub soc_floor_release_pct: f64,
    /// Deadband half-width around the power threshold.
    pub hysteresis_w: f64,
    /// Minimum time between two automatic source changes.
    pub min_dwell_s: f64,
    pub poll_period_s: f64,
    /// Telemetry older than this many poll periods is stale.
    pub stale_after_polls: u32,
    /// Grid meter voltage below which the grid counts as lost.
    pub grid_loss_voltage: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            power_threshold: DEFAULT_POWER_THRESHOLD_W,
            window_boundary: DEFAULT_WINDOW_BOUNDARY,
            slot_seconds: 3600.0,
            soc_floor_enabled: false,
            soc_floor_pct: 10.0,
            soc_floor_release_pct: 5.0,
            hysteresis_w: 25.0,
            min_dwell_s: 5.0,
            poll_period_s: 1.0,
            stale_after_polls: 3,
            grid_loss_voltage: 100.0,
        }
    }
}

impl ControlConfig {
    /// Anti-chatter disabled: the tick reduces to the bare algorithm.
    pub fn without_anti_chatter() -> Self {
        ControlConfig {
            hysteresis_w: 0.0,
            min_dwell_s: 0.0,
            ..ControlConfig::default()
        }
    }

    pub fn stale_after_s(&self) -> f64 {
        self.stale_after_polls as f64 * self.poll_period_s
    }

    /// Map seconds since midnight onto the algorithm's slot index.
    pub fn slot_at(&self, time_of_day_s: f64) -> u32 {
        let tod = libm::fmod(time_of_day_s, 86_400.0);
        let tod = if tod < 0.0 { tod + 86_400.0 } else { tod };
        libm::floor(tod / self.slot_seconds) as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub value: f64,
    /// Time the value was measured.
    pub at: f64,
}

impl Sample {
    pub fn new(value: f64, at: f64) -> Self {
        Sample { value, at }
    }
}

/// Latest telemetry as seen by the controller. `None` means nothing has
/// been received yet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySnapshot {
    pub now: f64,
    pub present_slot: u32,
    pub soc: Option<Sample>,
    pub load_w: Option<Sample>,
    pub grid_voltage: Option<Sample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Supply {
    Grid,
    Battery,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlState {
    pub mode: RelayMode,
    pub estop: bool,
    pub threshold: f64,
    /// Commanded relay configuration.
    pub bank: RelayBank,
    pub supply: Supply,
    /// Emergency de-energize actions already issued for the current e-stop.
    pub emergency_applied: bool,
    pub last_auto_change: Option<f64>,
    /// Last automatic decision was the load-threshold branch.
    pub load_triggered: bool,
    /// The SoC floor fired and has not been released yet.
    pub floor_latched: bool,
}

impl ControlState {
    pub fn new(cfg: &ControlConfig) -> Self {
        ControlState {
            mode: RelayMode::Auto,
            estop: false,
            threshold: cfg.power_threshold,
            bank: RelayBank::DE_ENERGIZED,
            supply: Supply::Grid,
            emergency_applied: false,
            last_auto_change: None,
            load_triggered: false,
            floor_latched: false,
        }
    }

    pub fn apply_command(&mut self, cmd: &Command) {
        match cmd.kind {
            CommandKind::SetMode(m) => self.mode = m,
            CommandKind::EStop => self.estop = true,
            CommandKind::ClearEStop => self.estop = false,
            CommandKind::SetThreshold(w) if w > 0.0 && w.is_finite() => self.threshold = w,
            CommandKind::SetThreshold(_) => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickOutcome {
    pub decision: Decision,
    pub actions: ActionSequence,
    pub state: ControlState,
    /// Inputs handed to the automatic algorithm, when it ran.
    pub algorithm_inputs: Option<ControlInputs>,
    /// The optional SoC floor overrode the algorithm.
    pub floor_deviation: bool,
}

fn fresh(sample: Option<Sample>, now: f64, limit: f64) -> Option<f64> {
    sample.filter(|s| now - s.at < limit).map(|s| s.value)
}

/// Run one control tick.
pub fn control_tick(
    cfg: &ControlConfig,
    state: &ControlState,
    snapshot: &TelemetrySnapshot,
    commands: &[Command],
) -> TickOutcome {
    let mut next = *state;
    for cmd in commands {
        next.apply_command(cmd);
    }
    let now = snapshot.now;
    let limit = cfg.stale_after_s();
    let soc = fresh(snapshot.soc, now, limit);
    let load = fresh(snapshot.load_w, now, limit);
    let grid_v = fresh(snapshot.grid_voltage, now, limit);

    let base = ControlInputs {
        soc: soc.unwrap_or(0.0).clamp(0.0, 100.0),
        load_power: load.unwrap_or(0.0).max(0.0),
        power_threshold: next.threshold,
        relay_mode: next.mode,
        em_mode: next.estop,
        present_slot: snapshot.present_slot,
        window_boundary: cfg.window_boundary,
    };

    let safe_grid = Decision::new(Target::Grid, Reason::StaleTelemetry);
    let mut algorithm_inputs = None;
    let mut floor_deviation = false;
    let mut automatic = false;

    let decision = if next.estop || next.mode != RelayMode::Auto {
        decide_relays(&base).unwrap_or(safe_grid)
    } else if let (Some(soc), Some(_), Some(grid_v)) = (soc, load, grid_v) {
        if grid_v < cfg.grid_loss_voltage {
            Decision::new(Target::Battery, Reason::GridOutage)
        } else if cfg.soc_floor_enabled
            && (soc < cfg.soc_floor_pct
                || (next.floor_latched && soc < cfg.soc_floor_pct + cfg.soc_floor_release_pct))
        {
            next.floor_latched = true;
            floor_deviation = true;
            Decision::new(Target::Grid, Reason::SocFloor)
        } else {
            next.floor_latched = false;
            automatic = true;
            let threshold = if next.load_triggered {
                next.threshold - cfg.hysteresis_w
            } else {
                next.threshold + cfg.hysteresis_w
            };
            let inputs = ControlInputs {
                power_threshold: if threshold > 0.0 {
                    threshold
                } else {
                    next.threshold
                },
                ..base
            };
            algorithm_inputs = Some(inputs);
            decide_relays(&inputs).unwrap_or(safe_grid)
        }
    } else {
        safe_grid
    };

    let desired = match decision.target {
        Target::Battery => Some(Supply::Battery),
        Target::Grid => Some(Supply::Grid),
        _ => None,
    };

    let decision = if automatic {
        let changes = desired.is_some_and(|s| s != next.supply);
        let dwelling = next
            .last_auto_change
            .is_some_and(|at| now - at < cfg.min_dwell_s);
        if changes && dwelling {
            Decision::new(Target::Hold, Reason::MinDwell)
        } else {
            next.load_triggered = decision.reason == Reason::LoadAboveThreshold;
            if changes {
                next.last_auto_change = Some(now);
            }
            decision
        }
    } else {
        // A forced change breaks the chain of automatic changes the dwell
        // time applies to.
        if decision.target == Target::EmergencyOff || desired.is_some_and(|s| s != next.supply) {
            next.last_auto_change = None;
        }
        next.load_triggered = false;
        decision
    };

    let actions = if decision.target == Target::EmergencyOff {
        let actions = if next.emergency_applied {
            ActionSequence::default()
        } else {
            apply_decision(&decision, &next.bank)
        };
        next.emergency_applied = true;
        next.bank = RelayBank::DE_ENERGIZED;
        next.supply = Supply::Grid;
        actions
    } else {
        next.emergency_applied = false;
        let actions = apply_decision(&decision, &next.bank);
        next.bank = actions.resulting_bank(&next.bank);
        match decision.target {
            Target::Battery => next.supply = Supply::Battery,
            Target::Grid => next.supply = Supply::Grid,
            _ => {}
        }
        actions
    };

    TickOutcome {
        decision,
        actions,
        state: next,
        algorithm_inputs,
        floor_deviation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::command::CommandSource;
    use alloc::vec::Vec;

    fn snap(now: f64, soc: f64, load: f64, slot: u32) -> TelemetrySnapshot {
        TelemetrySnapshot {
            now,
            present_slot: slot,
            soc: Some(Sample::new(soc, now)),
            load_w: Some(Sample::new(load, now)),
            grid_voltage: Some(Sample::new(230.0, now)),
        }
    }

    fn cmd(kind: CommandKind, t: f64) -> Command {
        Command::new(kind, t, CommandSource::Dashboard).unwrap()
    }

    #[test]
    fn override_beats_automatic() {
        let cfg = ControlConfig::default();
        let state = ControlState::new(&cfg);
        // Automatic logic alone would charge from the grid here.
        let auto = control_tick(&cfg, &state, &snap(0.0, 50.0, 100.0, 3), &[]);
        assert_eq!(auto.decision.target, Target::Grid);
        let out = control_tick(
            &cfg,
            &auto.state,
            &snap(1.0, 50.0, 100.0, 3),
            &[cmd(CommandKind::SetMode(RelayMode::ForceBattery), 1.0)],
        );
        assert_eq!(
            out.decision,
            Decision::new(Target::Battery, Reason::ForceBattery)
        );
        assert!(out.state.bank.is_battery_mode());
        // Latched until Auto is commanded.
        let again = control_tick(&cfg, &out.state, &snap(2.0, 50.0, 100.0, 3), &[]);
        assert_eq!(again.decision.reason, Reason::ForceBattery);
        assert!(again.actions.is_empty());
        let back = control_tick(
            &cfg,
            &again.state,
            &snap(3.0, 50.0, 100.0, 3),
            &[cmd(CommandKind::SetMode(RelayMode::Auto), 3.0)],
        );
        assert_eq!(back.decision.target, Target::Grid);
    }

    #[test]
    fn estop_then_clear_recovers() {
        let cfg = ControlConfig::default();
        let mut state = ControlState::new(&cfg);
        state = control_tick(&cfg, &state, &snap(0.0, 50.0, 800.0, 10), &[]).state;
        assert!(state.bank.is_battery_mode());

        let stop = control_tick(
            &cfg,
            &state,
            &snap(1.0, 50.0, 800.0, 10),
            &[cmd(CommandKind::EStop, 1.0)],
        );
        assert_eq!(stop.decision.target, Target::EmergencyOff);
        assert_eq!(stop.actions.len(), 4);
        assert_eq!(stop.actions.total_delay(), 0.0);
        assert!(stop.state.bank.is_de_energized());

        let held = control_tick(&cfg, &stop.state, &snap(2.0, 50.0, 800.0, 10), &[]);
        assert_eq!(held.decision.target, Target::EmergencyOff);
        assert!(held.actions.is_empty());

        let cleared = control_tick(
            &cfg,
            &held.state,
            &snap(3.0, 50.0, 800.0, 10),
            &[cmd(CommandKind::ClearEStop, 3.0)],
        );
        assert_eq!(cleared.decision.target, Target::Battery);
        assert!(cleared.state.bank.is_battery_mode());
    }

    #[test]
    fn silent_bms_forces_grid() {
        let cfg = ControlConfig::default();
        let state = control_tick(
            &cfg,
            &ControlState::new(&cfg),
            &snap(0.0, 50.0, 800.0, 10),
            &[],
        )
        .state;
        assert!(state.bank.is_battery_mode());
        let mut s = snap(3.0, 50.0, 800.0, 10);
        s.soc = Some(Sample::new(50.0, 0.0));
        let out = control_tick(&cfg, &state, &s, &[]);
        assert_eq!(
            out.decision,
            Decision::new(Target::Grid, Reason::StaleTelemetry)
        );
        // 2 s of silence is still fresh.
        s.now = 2.0;
        let out = control_tick(&cfg, &state, &s, &[]);
        assert_eq!(out.decision.reason, Reason::LoadAboveThreshold);
    }

    #[test]
    fn cold_start_is_grid() {
        let cfg = ControlConfig::default();
        let s = TelemetrySnapshot {
            now: 0.0,
            present_slot: 10,
            soc: None,
            load_w: None,
            grid_voltage: None,
        };
        let out = control_tick(&cfg, &ControlState::new(&cfg), &s, &[]);
        assert_eq!(out.decision.target, Target::Grid);
        assert!(out.actions.is_empty());
    }

    #[test]
    fn grid_loss_fails_over() {
        let cfg = ControlConfig::default();
        let mut s = snap(0.0, 50.0, 100.0, 3);
        s.grid_voltage = Some(Sample::new(0.0, 0.0));
        let out = control_tick(&cfg, &ControlState::new(&cfg), &s, &[]);
        assert_eq!(
            out.decision,
            Decision::new(Target::Battery, Reason::GridOutage)
        );
        assert_eq!(out.actions.waits(), 1);
    }

    #[test]
    fn soc_floor_is_opt_in() {
        let mut cfg = ControlConfig::default();
        let state = ControlState::new(&cfg);
        let out = control_tick(&cfg, &state, &snap(0.0, 5.0, 900.0, 10), &[]);
        assert_eq!(out.decision.target, Target::Battery);
        cfg.soc_floor_enabled = true;
        let out = control_tick(&cfg, &state, &snap(0.0, 5.0, 900.0, 10), &[]);
        assert_eq!(out.decision.reason, Reason::SocFloor);
        assert!(out.floor_deviation);

        // Latched until the release margin is reached.
        let held = control_tick(&cfg, &out.state, &snap(1.0, 12.0, 900.0, 10), &[]);
        assert_eq!(held.decision.reason, Reason::SocFloor);
        let released = control_tick(&cfg, &held.state, &snap(2.0, 15.0, 900.0, 10), &[]);
        assert_eq!(released.decision.target, Target::Battery);
        assert!(!released.state.floor_latched);
        // Without a prior trip, 12 % is above the floor.
        let fresh = control_tick(&cfg, &state, &snap(0.0, 12.0, 900.0, 10), &[]);
        assert_eq!(fresh.decision.target, Target::Battery);
    }

    #[test]
    fn hysteresis_band() {
        let cfg = ControlConfig {
            min_dwell_s: 0.0,
            ..ControlConfig::default()
        };
        let mut state = ControlState::new(&cfg);
        // Slot 3 with SoC 50: below threshold the chain picks grid charging.
        let step = |state: &ControlState, t: f64, load: f64| {
            control_tick(&cfg, state, &snap(t, 50.0, load, 3), &[])
        };
        let o = step(&state, 0.0, 710.0);
        assert_eq!(o.decision.target, Target::Grid);
        state = o.state;
        let o = step(&state, 1.0, 725.0);
        assert_eq!(o.decision.target, Target::Battery);
        state = o.state;
        let o = step(&state, 2.0, 680.0);
        assert_eq!(o.decision.target, Target::Battery);
        state = o.state;
        let o = step(&state, 3.0, 674.0);
        assert_eq!(o.decision.target, Target::Grid);
    }

    #[test]
    fn dwell_blocks_rapid_automatic_changes() {
        let cfg = ControlConfig {
            hysteresis_w: 0.0,
            ..ControlConfig::default()
        };
        let mut state = ControlState::new(&cfg);
        let loads = [
            800.0, 100.0, 800.0, 100.0, 100.0, 100.0, 100.0, 100.0, 100.0,
        ];
        let mut changes = Vec::new();
        for (i, load) in loads.iter().enumerate() {
            let o = control_tick(&cfg, &state, &snap(i as f64, 50.0, *load, 3), &[]);
            if o.state.supply != state.supply {
                changes.push(i as f64);
            }
            state = o.state;
        }
        assert_eq!(changes, [0.0, 5.0]);
    }

    #[test]
    fn slot_mapping_is_hour_of_day() {
        let cfg = ControlConfig::default();
        assert_eq!(cfg.slot_at(0.0), 0);
        assert_eq!(cfg.slot_at(5.0 * 3600.0 + 3599.0), 5);
        assert_eq!(cfg.slot_at(86_400.0 + 7.0 * 3600.0), 7);
    }
}
