//! The topic contract: topic names, JSON payloads, payload guards and
//! command parsing.
//!
//! Retained topics (`dcm/state/relays`, `dcm/state/snapshot`) always carry
//! the full current state, so a late subscriber can rebuild everything from
//! them alone.

use dcm_core::codec::BmsUpdate;
use dcm_core::control::{ActionSequence, RelayBank};
use dcm_core::sim::{DecisionEvent, OperatingMode};
use dcm_core::{
    Command, CommandKind, CommandSource, ControlState, Decision, ElectricalReading, RelayMode,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const TOPIC_GRID: &str = "dcm/telemetry/grid";
pub const TOPIC_LOAD: &str = "dcm/telemetry/load";
pub const TOPIC_BATTERY: &str = "dcm/telemetry/battery";
pub const TOPIC_RELAYS: &str = "dcm/state/relays";
pub const TOPIC_DECISION: &str = "dcm/state/decision";
pub const TOPIC_SNAPSHOT: &str = "dcm/state/snapshot";
pub const TOPIC_CMD_MODE: &str = "dcm/cmd/mode";
pub const TOPIC_CMD_ESTOP: &str = "dcm/cmd/estop";
pub const TOPIC_CMD_THRESHOLD: &str = "dcm/cmd/threshold";
pub const TOPIC_CMD_REJECTED: &str = "dcm/cmd/rejected";
pub const TOPIC_CMD_PREFIX: &str = "dcm/cmd/";

/// One message on the bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub topic: String,
    pub payload: Value,
    #[serde(default)]
    pub retained: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PayloadError {
    #[error("{field}: {value} is not a finite number")]
    NotFinite { field: &'static str, value: f64 },
    #[error("{field}: {value} outside [{min}, {max}]")]
    Range {
        field: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
}

fn finite(field: &'static str, v: f64) -> Result<(), PayloadError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(PayloadError::NotFinite { field, value: v })
    }
}

fn within(field: &'static str, v: f64, min: f64, max: f64) -> Result<(), PayloadError> {
    finite(field, v)?;
    if v < min || v > max {
        return Err(PayloadError::Range {
            field,
            value: v,
            min,
            max,
        });
    }
    Ok(())
}

/// `dcm/telemetry/grid` and `dcm/telemetry/load`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadingPayload {
    pub t: f64,
    pub v: f64,
    pub i: f64,
    pub p: f64,
    pub pf: f64,
    pub f: f64,
    pub e: f64,
}

impl ReadingPayload {
    pub fn validate(&self) -> Result<(), PayloadError> {
        finite("t", self.t)?;
        within("v", self.v, 0.0, f64::MAX)?;
        within("i", self.i, 0.0, f64::MAX)?;
        within("p", self.p, 0.0, f64::MAX)?;
        within("pf", self.pf, 0.0, 1.0)?;
        within("f", self.f, 0.0, f64::MAX)?;
        within("e", self.e, 0.0, f64::MAX)
    }
}

impl From<&ElectricalReading> for ReadingPayload {
    fn from(r: &ElectricalReading) -> Self {
        ReadingPayload {
            t: r.timestamp,
            v: r.voltage,
            i: r.current,
            p: r.active_power,
            pf: r.power_factor,
            f: r.frequency,
            e: r.energy,
        }
    }
}

/// `dcm/telemetry/battery`: latest merged BMS values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryPayload {
    pub t: f64,
    pub soc: Option<u16>,
    pub soh: Option<u16>,
    pub v: Option<f64>,
    pub i: Option<f64>,
    pub temp: Option<f64>,
    pub alarms: Option<Vec<String>>,
}

impl BatteryPayload {
    pub fn from_update(u: &BmsUpdate, t: f64) -> Self {
        BatteryPayload {
            t,
            soc: u.soc,
            soh: u.soh,
            v: u.pack_voltage,
            i: u.pack_current,
            temp: u.temperature,
            alarms: u.alarms.map(|a| a.names().map(String::from).collect()),
        }
    }

    pub fn validate(&self) -> Result<(), PayloadError> {
        finite("t", self.t)?;
        if let Some(s) = self.soc {
            within("soc", s as f64, 0.0, 100.0)?;
        }
        if let Some(s) = self.soh {
            within("soh", s as f64, 0.0, 100.0)?;
        }
        for (field, v) in [("v", self.v), ("i", self.i), ("temp", self.temp)] {
            if let Some(v) = v {
                finite(field, v)?;
            }
        }
        Ok(())
    }
}

/// `dcm/state/decision`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionPayload {
    pub t: f64,
    #[serde(flatten)]
    pub decision: Decision,
    pub actions: ActionSequence,
}

/// `dcm/state/snapshot`: everything an operator display needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotPayload {
    pub t: f64,
    pub soc: Option<f64>,
    pub load_w: Option<f64>,
    pub grid_w: Option<f64>,
    pub pf_load: Option<f64>,
    pub pf_grid: Option<f64>,
    pub mode: RelayMode,
    pub em: bool,
    pub threshold: f64,
    pub relays: RelayBank,
    pub operating: OperatingMode,
    pub reason: Option<String>,
}

impl SnapshotPayload {
    /// State before any telemetry or decision exists.
    pub fn cold_start(state: &ControlState) -> Self {
        SnapshotPayload {
            t: 0.0,
            soc: None,
            load_w: None,
            grid_w: None,
            pf_load: None,
            pf_grid: None,
            mode: state.mode,
            em: state.estop,
            threshold: state.threshold,
            relays: RelayBank::DE_ENERGIZED,
            operating: OperatingMode::Grid,
            reason: None,
        }
    }

    pub fn validate(&self) -> Result<(), PayloadError> {
        finite("t", self.t)?;
        if let Some(s) = self.soc {
            within("soc", s, 0.0, 100.0)?;
        }
        for (field, v) in [("load_w", self.load_w), ("grid_w", self.grid_w)] {
            if let Some(v) = v {
                within(field, v, 0.0, f64::MAX)?;
            }
        }
        for (field, v) in [("pf_load", self.pf_load), ("pf_grid", self.pf_grid)] {
            if let Some(v) = v {
                within(field, v, 0.0, 1.0)?;
            }
        }
        within("threshold", self.threshold, f64::MIN_POSITIVE, f64::MAX)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedPayload {
    pub topic: String,
    pub error: String,
    pub payload: String,
}

fn message<T: Serialize>(topic: &str, payload: &T, retained: bool) -> Message {
    Message {
        topic: topic.to_string(),
        payload: serde_json::to_value(payload).expect("payload types serialize infallibly"),
        retained,
    }
}

/// Meter reading on its telemetry topic. Invalid readings are refused.
pub fn reading_message(topic: &str, r: &ElectricalReading) -> Result<Message, PayloadError> {
    let p = ReadingPayload::from(r);
    p.validate()?;
    Ok(message(topic, &p, false))
}

pub fn battery_message(u: &BmsUpdate, t: f64) -> Result<Message, PayloadError> {
    let p = BatteryPayload::from_update(u, t);
    p.validate()?;
    Ok(message(TOPIC_BATTERY, &p, false))
}

pub fn relays_message(bank: &RelayBank) -> Message {
    message(TOPIC_RELAYS, bank, true)
}

pub fn decision_message(e: &DecisionEvent) -> Message {
    let p = DecisionPayload {
        t: e.t,
        decision: e.decision,
        actions: e.actions.clone(),
    };
    message(TOPIC_DECISION, &p, false)
}

pub fn snapshot_message(s: &SnapshotPayload) -> Result<Message, PayloadError> {
    s.validate()?;
    Ok(message(TOPIC_SNAPSHOT, s, true))
}

pub fn rejected_message(topic: &str, error: &CommandError, payload: &[u8]) -> Message {
    let p = RejectedPayload {
        topic: topic.to_string(),
        error: error.to_string(),
        payload: String::from_utf8_lossy(payload).into_owned(),
    };
    message(TOPIC_CMD_REJECTED, &p, false)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CommandError {
    #[error("unknown command topic `{0}`")]
    UnknownTopic(String),
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("mode must be 0, 1 or 2, got {0}")]
    Mode(u64),
    #[error("threshold must be a positive number of watts, got {0}")]
    Threshold(f64),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModeCmd {
    mode: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EStopCmd {
    pressed: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ThresholdCmd {
    watts: f64,
}

fn decode<'a, T: Deserialize<'a>>(payload: &'a [u8]) -> Result<T, CommandError> {
    serde_json::from_slice(payload).map_err(|e| CommandError::Malformed(e.to_string()))
}

/// Parse an inbound command message.
pub fn parse_command(
    topic: &str,
    payload: &[u8],
    issued_at: f64,
    source: CommandSource,
) -> Result<Command, CommandError> {
    let kind = match topic {
        TOPIC_CMD_MODE => {
            let m = decode::<ModeCmd>(payload)?.mode;
            let mode = u8::try_from(m)
                .ok()
                .and_then(|m| RelayMode::try_from(m).ok())
                .ok_or(CommandError::Mode(m))?;
            CommandKind::SetMode(mode)
        }
        TOPIC_CMD_ESTOP => {
            if decode::<EStopCmd>(payload)?.pressed {
                CommandKind::EStop
            } else {
                CommandKind::ClearEStop
            }
        }
        TOPIC_CMD_THRESHOLD => CommandKind::SetThreshold(decode::<ThresholdCmd>(payload)?.watts),
        other => return Err(CommandError::UnknownTopic(other.to_string())),
    };
    Command::new(kind, issued_at, source).map_err(|e| match e {
        dcm_core::command::CommandError::Threshold(w) => CommandError::Threshold(w),
    })
}

/// Topic and payload that would produce `kind`; the inverse of
/// [`parse_command`].
pub fn command_message(kind: &CommandKind) -> Message {
    let (topic, payload) = match kind {
        CommandKind::SetMode(m) => (TOPIC_CMD_MODE, serde_json::json!({ "mode": u8::from(*m) })),
        CommandKind::EStop => (TOPIC_CMD_ESTOP, serde_json::json!({ "pressed": true })),
        CommandKind::ClearEStop => (TOPIC_CMD_ESTOP, serde_json::json!({ "pressed": false })),
        CommandKind::SetThreshold(w) => (TOPIC_CMD_THRESHOLD, serde_json::json!({ "watts": w })),
    };
    Message {
        topic: topic.into(),
        payload,
        retained: false,
    }
}

/// MQTT-style topic filter match with `+` and `#` wildcards.
pub fn topic_matches(filter: &str, topic: &str) -> bool {
    let mut f = filter.split('/');
    let mut t = topic.split('/');
    loop {
        match (f.next(), t.next()) {
            (Some("#"), _) => return true,
            (Some("+"), Some(_)) => {}
            (Some(a), Some(b)) if a == b => {}
            (None, None) => return true,
            _ => return false,
        }
    }
}

/// JSON Schema documents shipped with the contract, by topic.
pub fn schema_for(topic: &str) -> Option<&'static str> {
    Some(match topic {
        TOPIC_GRID | TOPIC_LOAD => include_str!("../schemas/reading.schema.json"),
        TOPIC_BATTERY => include_str!("../schemas/battery.schema.json"),
        TOPIC_RELAYS => include_str!("../schemas/relays.schema.json"),
        TOPIC_DECISION => include_str!("../schemas/decision.schema.json"),
        TOPIC_SNAPSHOT => include_str!("../schemas/snapshot.schema.json"),
        TOPIC_CMD_MODE => include_str!("../schemas/cmd_mode.schema.json"),
        TOPIC_CMD_ESTOP => include_str!("../schemas/cmd_estop.schema.json"),
        TOPIC_CMD_THRESHOLD => include_str!("../schemas/cmd_threshold.schema.json"),
        TOPIC_CMD_REJECTED => include_str!("../schemas/rejected.schema.json"),
        _ => return None,
    })
}
