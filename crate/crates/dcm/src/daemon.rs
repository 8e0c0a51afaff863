//! Live controller: the closed-loop simulation paced in real time, with
//! telemetry, state and decisions published on the bus and operator
//! commands drained from it every tick.

use std::future::Future;
use std::io::Write;
use std::time::Duration;

use dcm_core::codec::{decode_bms_frame, BmsDecode, BmsUpdate};
use dcm_core::sim::{Row, Simulation, TickRecord};
use dcm_core::{Command, CommandSource, Decision, RelayBank};
use thiserror::Error;
use tokio::sync::mpsc::UnboundedReceiver;

use crate::bus::{InboundCommand, LocalBroker};
use crate::output::{EventLogWriter, OutputError};
use crate::telemetry::{
    battery_message, decision_message, parse_command, reading_message, rejected_message,
    relays_message, snapshot_message, Message, SnapshotPayload, TOPIC_GRID, TOPIC_LOAD,
};

#[derive(Debug, Error)]
pub enum DaemonError {
    #[error("event log: {0}")]
    Log(#[from] OutputError),
    #[error("speed must be positive, got {0}")]
    Speed(f64),
}

/// What has been published so far, to keep event-driven topics quiet when
/// nothing changed.
#[derive(Debug, Default)]
pub struct PublishState {
    bank: Option<RelayBank>,
    decision: Option<Decision>,
}

/// Messages for one completed tick, in publication order.
pub fn tick_messages(rec: &TickRecord, published: &mut PublishState) -> Vec<Message> {
    let mut out = Vec::new();
    let t = rec.row.t;
    for (topic, reading) in [(TOPIC_GRID, &rec.grid), (TOPIC_LOAD, &rec.load)] {
        if let Some(r) = reading {
            match reading_message(topic, r) {
                Ok(m) => out.push(m),
                Err(e) => tracing::error!(topic, error = %e, "reading refused"),
            }
        }
    }
    if !rec.bms_frames.is_empty() {
        let mut update = BmsUpdate::default();
        for f in &rec.bms_frames {
            if let Ok(BmsDecode::Update(u)) = decode_bms_frame(f) {
                update.merge(&u);
            }
        }
        match battery_message(&update, t) {
            Ok(m) => out.push(m),
            Err(e) => tracing::error!(error = %e, "battery payload refused"),
        }
    }
    let decision_changed = published.decision != Some(rec.event.decision);
    if decision_changed || !rec.event.actions.steps.is_empty() {
        out.push(decision_message(&rec.event));
        published.decision = Some(rec.event.decision);
    }
    if published.bank != Some(rec.bank) {
        out.push(relays_message(&rec.bank));
        published.bank = Some(rec.bank);
    }
    let snapshot = SnapshotPayload {
        t,
        soc: rec.event.inputs.soc.map(|s| s.value),
        load_w: rec.load.map(|r| r.active_power),
        grid_w: rec.grid.map(|r| r.active_power),
        pf_load: rec.load.map(|r| r.power_factor),
        pf_grid: rec.grid.map(|r| r.power_factor),
        mode: rec.state.mode,
        em: rec.state.estop,
        threshold: rec.state.threshold,
        relays: rec.bank,
        operating: rec.row.mode,
        reason: Some(rec.event.decision.reason.as_str().to_string()),
    };
    match snapshot_message(&snapshot) {
        Ok(m) => out.push(m),
        Err(e) => tracing::error!(error = %e, "snapshot refused"),
    }
    out
}

/// Parse queued commands; malformed ones are answered on the bus.
pub fn drain_commands(
    queue: &mut UnboundedReceiver<InboundCommand>,
    broker: &LocalBroker,
    now: f64,
) -> Vec<Command> {
    let mut cmds = Vec::new();
    while let Ok(raw) = queue.try_recv() {
        match parse_command(&raw.topic, &raw.payload, now, CommandSource::Dashboard) {
            Ok(c) => {
                tracing::info!(t = now, kind = ?c.kind, "command accepted");
                cmds.push(c);
            }
            Err(e) => {
                tracing::warn!(topic = %raw.topic, error = %e, "command rejected");
                broker.publish(rejected_message(&raw.topic, &e, &raw.payload));
            }
        }
    }
    cmds
}

#[derive(Debug, Clone, PartialEq)]
pub struct DaemonSummary {
    pub ticks: usize,
    pub rows: Vec<Row>,
    pub completed: bool,
}

/// Run until the scenario ends or `shutdown` resolves. `speed` is simulated
/// seconds per wall-clock second.
pub async fn run_controller<W: Write>(
    mut sim: Simulation,
    broker: LocalBroker,
    mut queue: UnboundedReceiver<InboundCommand>,
    speed: f64,
    mut log: Option<EventLogWriter<W>>,
    shutdown: impl Future<Output = ()>,
) -> Result<DaemonSummary, DaemonError> {
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(DaemonError::Speed(speed));
    }
    broker.publish(relays_message(sim.bank()));
    if let Ok(m) = snapshot_message(&SnapshotPayload::cold_start(sim.control_state())) {
        broker.publish(m);
    }

    let period = Duration::from_secs_f64(sim.scenario().plant.tick / speed);
    let mut interval = tokio::time::interval(period);
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let mut published = PublishState::default();
    let mut rows = Vec::new();
    tokio::pin!(shutdown);

    loop {
        tokio::select! {
            _ = &mut shutdown => break,
            _ = interval.tick() => {}
        }
        let cmds = drain_commands(&mut queue, &broker, sim.now());
        let Some(rec) = sim.step(&cmds) else { break };
        if let Some(log) = log.as_mut() {
            log.write(&rec.event)?;
            log.flush()?;
        }
        for m in tick_messages(&rec, &mut published) {
            broker.publish(m);
        }
        rows.push(rec.row);
    }
    Ok(DaemonSummary {
        ticks: rows.len(),
        completed: sim.is_done(),
        rows,
    })
}
