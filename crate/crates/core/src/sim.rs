//! Closed-loop runner: plant, sensing codecs, controller and relay timing
//! advanced together in simulated time.
//!
//! Each tick the meters and the BMS are read through their wire codecs
//! (subject to the minimum poll period), the controller decides, its relay
//! actions are scheduled at their offsets, and the plant is integrated up to
//! the next tick in spans split at every relay action, outage edge and load
//! step.

use alloc::collections::VecDeque;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::battery::BatteryState;
use crate::codec::{
    decode_pzem_response, BmsFrame, BmsRegisters, BmsTracker, CodecError, PzemRegisters,
};
use crate::command::{Command, CommandSource};
use crate::control::{
    control_tick, ActionSequence, ControlConfig, ControlState, Decision, RelayBank, RelayCommand,
    Sample, TelemetrySnapshot,
};
use crate::plant::{Balance, Conditions, EnergyLedger, Plant};
use crate::poll::PollCache;
use crate::profile::LoadProfile;
use crate::reading::ElectricalReading;
use crate::scenario::{Scenario, ScenarioError, TelemetrySource};

/// Modbus address of the grid-side meter.
pub const GRID_METER_ADDRESS: u8 = 1;
/// Modbus address of the load-side meter.
pub const LOAD_METER_ADDRESS: u8 = 2;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatingMode {
    Grid,
    Battery,
    /// Relays part-way through a sequence.
    Transition,
    Emergency,
}

impl OperatingMode {
    pub fn of(bank: &RelayBank, estop: bool) -> Self {
        if estop {
            OperatingMode::Emergency
        } else if bank.is_battery_mode() {
            OperatingMode::Battery
        } else if *bank == RelayBank::DE_ENERGIZED {
            OperatingMode::Grid
        } else {
            OperatingMode::Transition
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OperatingMode::Grid => "grid",
            OperatingMode::Battery => "battery",
            OperatingMode::Transition => "transition",
            OperatingMode::Emergency => "emergency",
        }
    }
}

/// One row of the exported time series. Powers are tick averages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub t: f64,
    pub grid_w: f64,
    pub load_w: f64,
    pub soc: f64,
    pub mode: OperatingMode,
}

/// Everything the controller saw and did in one tick; enough to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionEvent {
    pub t: f64,
    pub inputs: TelemetrySnapshot,
    pub commands: Vec<Command>,
    pub decision: Decision,
    pub actions: ActionSequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutageReport {
    pub start: f64,
    pub end: f64,
    pub unserved_s: f64,
}

/// Per-tick output of [`Simulation::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub row: Row,
    pub event: DecisionEvent,
    /// Meter readings obtained this tick (cached repeats included).
    pub grid: Option<ElectricalReading>,
    pub load: Option<ElectricalReading>,
    /// BMS frames broadcast this tick.
    pub bms_frames: Vec<BmsFrame>,
    pub battery: BatteryState,
    pub state: ControlState,
    /// Physical relay positions at the end of the tick.
    pub bank: RelayBank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub rows: Vec<Row>,
    pub events: Vec<DecisionEvent>,
    pub outages: Vec<OutageReport>,
    pub unserved_outside_outages_s: f64,
    pub ledger: EnergyLedger,
    pub balance: Balance,
    pub soc_min: f64,
    pub soc_max: f64,
    /// Ticks on which the optional SoC floor overrode the algorithm.
    pub floor_deviations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Silent;

pub struct Simulation {
    scenario: Scenario,
    control: ControlConfig,
    profile: LoadProfile,
    plant: Plant,
    state: ControlState,
    bank: RelayBank,
    pending: VecDeque<(f64, RelayCommand)>,
    grid_poll: PollCache<ElectricalReading>,
    load_poll: PollCache<ElectricalReading>,
    bms_poll: PollCache<[BmsFrame; 3]>,
    tracker: BmsTracker,
    scripted: Vec<(f64, Command)>,
    next_scripted: usize,
    tick_index: usize,
    ticks: usize,
    unserved: Vec<(f64, f64)>,
    soc_min: f64,
    soc_max: f64,
    floor_deviations: usize,
}

impl Simulation {
    pub fn new(scenario: Scenario, control: ControlConfig) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let profile = scenario.load_profile()?;
        let battery = scenario.initial_battery()?;
        let plant = Plant::new(scenario.plant, battery, scenario.seed);
        let mut scripted: Vec<(f64, Command)> = scenario
            .commands
            .iter()
            .map(|c| {
                (
                    c.at,
                    Command {
                        kind: c.kind,
                        issued_at: c.at,
                        source: CommandSource::Cli,
                    },
                )
            })
            .collect();
        scripted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let period = control.poll_period_s;
        Ok(Simulation {
            ticks: scenario.tick_count(),
            profile,
            plant,
            state: ControlState::new(&control),
            bank: RelayBank::DE_ENERGIZED,
            pending: VecDeque::new(),
            grid_poll: PollCache::new(period),
            load_poll: PollCache::new(period),
            bms_poll: PollCache::new(period),
            tracker: BmsTracker::default(),
            scripted,
            next_scripted: 0,
            tick_index: 0,
            unserved: Vec::new(),
            soc_min: battery.soc,
            soc_max: battery.soc,
            floor_deviations: 0,
            scenario,
            control,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn control_config(&self) -> &ControlConfig {
        &self.control
    }

    pub fn is_done(&self) -> bool {
        self.tick_index >= self.ticks
    }

    pub fn now(&self) -> f64 {
        self.tick_index as f64 * self.scenario.plant.tick
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    pub fn bank(&self) -> &RelayBank {
        &self.bank
    }

    pub fn control_state(&self) -> &ControlState {
        &self.state
    }

    fn conditions(&self, t: f64) -> Conditions {
        Conditions {
            load_w: self.profile.power_at(t),
            grid_up: !self.scenario.grid_down_at(t),
        }
    }

    fn read_meter(&mut self, source: TelemetrySource, t: f64) -> Option<ElectricalReading> {
        let cond = self.conditions(t);
        let silent = self.scenario.gap_at(source, t);
        let bank = self.bank;
        let plant = &mut self.plant;
        let (cache, address) = match source {
            TelemetrySource::GridMeter => (&mut self.grid_poll, GRID_METER_ADDRESS),
            _ => (&mut self.load_poll, LOAD_METER_ADDRESS),
        };
        let fetched = cache.poll(t, || {
            if silent {
                return Err(Silent);
            }
            let truth = match source {
                TelemetrySource::GridMeter => plant.grid_reading(cond, &bank, t),
                _ => plant.load_reading(cond, &bank, t),
            };
            let frame = PzemRegisters::from_reading(&truth).encode_response(address);
            decode_pzem_response(&frame, t).map_err(|_: CodecError| Silent)
        });
        fetched.ok().map(|(r, _)| r)
    }

    fn broadcast_bms(&mut self, t: f64) -> Vec<BmsFrame> {
        let silent = self.scenario.gap_at(TelemetrySource::Bms, t);
        let battery = self.plant.battery;
        let fetched = self.bms_poll.poll(t, || {
            if silent {
                Err(Silent)
            } else {
                Ok(BmsRegisters::from_state(&battery).frames())
            }
        });
        match fetched {
            Ok((frames, true)) => {
                for f in &frames {
                    // Frames built from a valid state always decode.
                    let _ = self.tracker.ingest(f, t);
                }
                frames.to_vec()
            }
            _ => Vec::new(),
        }
    }

    fn snapshot(&self, t: f64) -> TelemetrySnapshot {
        let sample = |r: Option<&(f64, ElectricalReading)>, f: fn(&ElectricalReading) -> f64| {
            r.map(|(at, reading)| Sample::new(f(reading), *at))
        };
        TelemetrySnapshot {
            now: t,
            present_slot: self.control.slot_at(self.scenario.start_time_of_day + t),
            soc: self
                .tracker
                .state
                .soc
                .zip(self.tracker.soc_seen_at)
                .map(|(soc, at)| Sample::new(soc as f64, at)),
            load_w: sample(self.load_poll.last(), |r| r.active_power),
            grid_voltage: sample(self.grid_poll.last(), |r| r.voltage),
        }
    }

    fn apply_due(&mut self, t: f64) {
        while let Some(&(at, cmd)) = self.pending.front() {
            if at > t + EPS {
                break;
            }
            self.bank.apply(cmd);
            self.pending.pop_front();
        }
    }

    fn record_unserved(&mut self, a: f64, b: f64) {
        if let Some(last) = self.unserved.last_mut() {
            if libm::fabs(last.1 - a) < EPS {
                last.1 = b;
                return;
            }
        }
        self.unserved.push((a, b));
    }

    /// Advance one tick. `external` commands are applied together with any
    /// scripted ones falling due. Returns `None` once the run is over.
    pub fn step(&mut self, external: &[Command]) -> Option<TickRecord> {
        if self.is_done() {
            return None;
        }
        let tick = self.scenario.plant.tick;
        let t = self.now();
        let end = ((self.tick_index + 1) as f64 * tick).min(self.scenario.duration);
        self.apply_due(t);

        let grid = self.read_meter(TelemetrySource::GridMeter, t);
        let load = self.read_meter(TelemetrySource::LoadMeter, t);
        let bms_frames = self.broadcast_bms(t);

        let mut commands = Vec::new();
        while let Some((at, cmd)) = self.scripted.get(self.next_scripted) {
            if *at > t + EPS {
                break;
            }
            commands.push(*cmd);
            self.next_scripted += 1;
        }
        commands.extend_from_slice(external);

        let inputs = self.snapshot(t);
        let outcome = control_tick(&self.control, &self.state, &inputs, &commands);
        if outcome.floor_deviation {
            self.floor_deviations += 1;
        }
        self.state = outcome.state;
        for (offset, cmd) in outcome.actions.timeline() {
            if offset <= 0.0 {
                self.bank.apply(cmd);
            } else {
                let at = t + offset;
                let pos = self
                    .pending
                    .iter()
                    .position(|(x, _)| *x > at)
                    .unwrap_or(self.pending.len());
                self.pending.insert(pos, (at, cmd));
            }
        }

        let (mut grid_wh, mut load_wh) = (0.0, 0.0);
        let mut a = t;
        while a < end - EPS {
            let mut b = end;
            if let Some(&(at, _)) = self.pending.front() {
                b = b.min(at);
            }
            if let Some(c) = self.profile.next_change_after(a) {
                b = b.min(c);
            }
            if let Some(c) = self.scenario.next_grid_change_after(a) {
                b = b.min(c);
            }
            if b > a {
                let cond = self.conditions(a);
                let span = self.plant.advance(b - a, cond, &self.bank);
                grid_wh += span.grid_wh;
                load_wh += span.load_wh;
                if span.unserved_s > 0.0 {
                    self.record_unserved(b - span.unserved_s, b);
                }
            }
            a = b.max(a);
            self.apply_due(a);
        }

        let soc = self.plant.battery.soc;
        self.soc_min = self.soc_min.min(soc);
        self.soc_max = self.soc_max.max(soc);
        let dt = end - t;
        let row = Row {
            t,
            grid_w: grid_wh * 3600.0 / dt,
            load_w: load_wh * 3600.0 / dt,
            soc,
            mode: OperatingMode::of(&self.bank, self.state.estop),
        };
        self.tick_index += 1;

        Some(TickRecord {
            row,
            event: DecisionEvent {
                t,
                inputs,
                commands,
                decision: outcome.decision,
                actions: outcome.actions,
            },
            grid,
            load,
            bms_frames,
            battery: self.plant.battery,
            state: self.state,
            bank: self.bank,
        })
    }

    fn outage_reports(&self) -> (Vec<OutageReport>, f64) {
        let overlap = |a: f64, b: f64, c: f64, d: f64| (b.min(d) - a.max(c)).max(0.0);
        let reports: Vec<OutageReport> = self
            .scenario
            .grid_outages
            .iter()
            .map(|o| OutageReport {
                start: o.start,
                end: o.end,
                unserved_s: self
                    .unserved
                    .iter()
                    .fold(0.0, |acc, &(a, b)| acc + overlap(a, b, o.start, o.end)),
            })
            .collect();
        let total = self.unserved.iter().fold(0.0, |acc, (a, b)| acc + (b - a));
        let inside = reports.iter().fold(0.0, |acc, r| acc + r.unserved_s);
        (reports, (total - inside).max(0.0))
    }

    /// Run the remaining ticks and summarize.
    pub fn finish(mut self) -> SimReport {
        let mut rows = Vec::with_capacity(self.ticks);
        let mut events = Vec::with_capacity(self.ticks);
        while let Some(rec) = self.step(&[]) {
            rows.push(rec.row);
            events.push(rec.event);
        }
        self.report(rows, events)
    }

    /// Summary over rows and events collected by the caller.
    pub fn report(&self, rows: Vec<Row>, events: Vec<DecisionEvent>) -> SimReport {
        let (outages, outside) = self.outage_reports();
        SimReport {
            rows,
            events,
            outages,
            unserved_outside_outages_s: outside,
            ledger: self.plant.ledger,
            balance: self.plant.balance(),
            soc_min: self.soc_min,
            soc_max: self.soc_max,
            floor_deviations: self.floor_deviations,
        }
    }
}

pub fn run_scenario(
    scenario: &Scenario,
    control: &ControlConfig,
) -> Result<SimReport, ScenarioError> {
    Ok(Simulation::new(scenario.clone(), *control)?.finish())
}

/// Re-run the controller over logged inputs. Returns the indices of events
/// whose decision or actions differ from the log.
pub fn replay_events(control: &ControlConfig, events: &[DecisionEvent]) -> Vec<usize> {
    let mut state = ControlState::new(control);
    let mut diffs = Vec::new();
    for (i, e) in events.iter().enumerate() {
        let out = control_tick(control, &state, &e.inputs, &e.commands);
        if out.decision != e.decision || out.actions != e.actions {
            diffs.push(i);
        }
        state = out.state;
    }
    diffs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::command::CommandKind;
    use crate::control::{RelayMode, Target};
    use crate::profile::ProfileKind;
    use crate::scenario::{Outage, ScheduledCommand, TelemetryGap};
    use alloc::vec;

    fn scenario(load: f64, soc: f64) -> Scenario {
        Scenario {
            duration: 60.0,
            start_time_of_day: 10.0 * 3600.0,
            load: ProfileKind::Flat { watts: load },
            initial_soc: soc,
            ..Scenario::default()
        }
    }

    #[test]
    fn high_load_runs_on_battery() {
        let r = run_scenario(&scenario(800.0, 60.0), &ControlConfig::default()).unwrap();
        assert_eq!(r.rows.len(), 60);
        assert_eq!(r.events[0].decision.target, Target::Battery);
        // The first 0.25 s of tick 0 are still on grid.
        assert_eq!(r.rows[0].mode, OperatingMode::Battery);
        for row in &r.rows[1..] {
            assert!((row.grid_w - 4.7).abs() < 1e-9);
            assert!((row.load_w - 800.0).abs() < 1e-9);
        }
        assert!(r.balance.within(1e-3));
        assert_eq!(r.ledger.unserved_time, 0.0);
    }

    #[test]
    fn force_grid_command_switches_within_tick() {
        let mut s = scenario(800.0, 60.0);
        s.commands = vec![ScheduledCommand {
            at: 20.0,
            kind: CommandKind::SetMode(RelayMode::ForceGrid),
        }];
        let r = run_scenario(&s, &ControlConfig::default()).unwrap();
        assert_eq!(r.rows[19].mode, OperatingMode::Battery);
        assert_eq!(r.rows[20].mode, OperatingMode::Grid);
        assert!((r.rows[20].grid_w - (800.0 + 600.0 + 4.7)).abs() < 1e-6);
    }

    #[test]
    fn outage_is_covered_quickly() {
        let mut s = scenario(300.0, 80.0);
        s.start_time_of_day = 3.0 * 3600.0;
        s.grid_outages = vec![Outage {
            start: 10.3,
            end: 40.0,
        }];
        let r = run_scenario(&s, &ControlConfig::default()).unwrap();
        let o = r.outages[0];
        assert!(
            o.unserved_s > 0.0 && o.unserved_s <= 1.0 + 0.25 - 0.3 + 1e-9,
            "{o:?}"
        );
        assert_eq!(r.unserved_outside_outages_s, 0.0);
        assert!(r.balance.within(1e-3));
    }

    #[test]
    fn silent_bms_falls_back_to_grid() {
        let mut s = scenario(800.0, 60.0);
        s.telemetry_gaps = vec![TelemetryGap {
            source: TelemetrySource::Bms,
            start: 10.0,
            end: 30.0,
        }];
        let r = run_scenario(&s, &ControlConfig::default()).unwrap();
        // Last frames at t = 9; silent for 3 s at t = 12.
        assert_eq!(r.events[11].decision.target, Target::Battery);
        assert_eq!(
            r.events[12].decision.reason,
            crate::control::Reason::StaleTelemetry
        );
        assert_eq!(r.rows[12].mode, OperatingMode::Grid);
    }

    #[test]
    fn replay_matches_run() {
        let mut s = scenario(650.0, 50.0);
        s.load = ProfileKind::Custom {
            segments: vec![(0.0, 650.0), (15.5, 900.0), (30.0, 100.0), (45.0, 1200.0)],
        };
        s.commands = vec![
            ScheduledCommand {
                at: 33.0,
                kind: CommandKind::EStop,
            },
            ScheduledCommand {
                at: 40.0,
                kind: CommandKind::ClearEStop,
            },
        ];
        let cfg = ControlConfig::default();
        let r = run_scenario(&s, &cfg).unwrap();
        assert!(replay_events(&cfg, &r.events).is_empty());
        let mut tampered = r.events.clone();
        tampered[20].inputs.load_w = Some(Sample::new(0.0, 20.0));
        assert!(!replay_events(&cfg, &tampered).is_empty());
    }

    #[test]
    fn sub_second_ticks_reuse_meter_values() {
        let mut s = scenario(800.0, 60.0);
        s.plant.tick = 0.5;
        s.duration = 4.0;
        let mut sim = Simulation::new(s, ControlConfig::default()).unwrap();
        let a = sim.step(&[]).unwrap();
        let b = sim.step(&[]).unwrap();
        assert_eq!(a.load.unwrap().timestamp, 0.0);
        assert_eq!(b.load.unwrap().timestamp, 0.0);
        assert!(b.bms_frames.is_empty());
        let c = sim.step(&[]).unwrap();
        assert_eq!(c.load.unwrap().timestamp, 1.0);
    }
}
