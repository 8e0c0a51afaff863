//! Host side of the demand charge manager: configuration, the telemetry
//! topic contract, the in-process broker with its WebSocket bridge and
//! optional MQTT link, file formats and the `dcm` command line.

pub mod bridge;
pub mod bus;
pub mod cli;
pub mod config;
pub mod daemon;
pub mod framedump;
pub mod mqtt;
pub mod output;
pub mod report;
pub mod scenarios;
pub mod telemetry;
