//! File formats: the per-tick CSV series, the JSON-lines event log and the
//! arbitrage day export.

use std::io::{BufRead, Write};

use dcm_core::sim::{DecisionEvent, Row};
use dcm_core::tariff::DayResult;
use dcm_core::ControlConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LOG_FORMAT: &str = "dcm-events/1";

#[derive(Debug, Error)]
pub enum OutputError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("event log line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("event log has no header line")]
    MissingHeader,
    #[error("event log format `{0}` is not supported (expected {LOG_FORMAT})")]
    Format(String),
}

pub fn write_rows_csv<W: Write>(out: W, rows: &[Row]) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows_csv<R: std::io::Read>(input: R) -> Result<Vec<Row>, OutputError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<Vec<Row>, _>>()?)
}

/// First line of every event log. Carrying the control config makes a log
/// replayable without the config file that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub scenario: String,
    pub control: ControlConfig,
}

impl LogHeader {
    pub fn new(scenario: &str, control: ControlConfig) -> Self {
        LogHeader {
            format: LOG_FORMAT.into(),
            scenario: scenario.into(),
            control,
        }
    }
}

pub struct EventLogWriter<W: Write> {
    out: W,
}

impl<W: Write> EventLogWriter<W> {
    pub fn new(mut out: W, header: &LogHeader) -> Result<Self, OutputError> {
        serde_json::to_writer(&mut out, header)
            .map_err(|source| OutputError::Json { line: 1, source })?;
        out.write_all(b"\n")?;
        Ok(EventLogWriter { out })
    }

    pub fn write(&mut self, e: &DecisionEvent) -> Result<(), OutputError> {
        serde_json::to_writer(&mut self.out, e)
            .map_err(|source| OutputError::Json { line: 0, source })?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), OutputError> {
        Ok(self.out.flush()?)
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

pub fn read_event_log<R: BufRead>(
    input: R,
) -> Result<(LogHeader, Vec<DecisionEvent>), OutputError> {
    let mut lines = input.lines().enumerate();
    let header: LogHeader = loop {
        match lines.next() {
            None => return Err(OutputError::MissingHeader),
            Some((_, l)) if l.as_ref().is_ok_and(|l| l.trim().is_empty()) => continue,
            Some((i, l)) => {
                break serde_json::from_str(&l?).map_err(|source| OutputError::Json {
                    line: i + 1,
                    source,
                })?;
            }
        }
    };
    if header.format != LOG_FORMAT {
        return Err(OutputError::Format(header.format));
    }
    let mut events = Vec::new();
    for (i, l) in lines {
        let l = l?;
        if l.trim().is_empty() {
            continue;
        }
        events.push(
            serde_json::from_str(&l).map_err(|source| OutputError::Json {
                line: i + 1,
                source,
            })?,
        );
    }
    Ok((header, events))
}

#[derive(Serialize)]
struct DayRow {
    t: f64,
    base_w: f64,
    net_w: f64,
    battery_w: f64,
}

/// Arbitrage series as CSV: one row per step with time of day in seconds.
pub fn write_day_csv<W: Write>(out: W, day: &DayResult) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_writer(out);
    for (i, ((b, n), p)) in day
        .base_load_series
        .iter()
        .zip(&day.net_grid_series)
        .zip(&day.battery_power_series)
        .enumerate()
    {
        w.serialize(DayRow {
            t: i as f64 * day.step_s,
            base_w: *b,
            net_w: *n,
            battery_w: *p,
        })?;
    }
    w.flush()?;
    Ok(())
}
