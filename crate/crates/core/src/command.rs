use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::RelayMode;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum CommandKind {
    SetMode(RelayMode),
    EStop,
    ClearEStop,
    SetThreshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandSource {
    #[default]
    Dashboard,
    Cli,
}

/// Operator command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub kind: CommandKind,
    pub issued_at: f64,
    pub source: CommandSource,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CommandError {
    #[error("threshold must be a positive number of watts, got {0}")]
    Threshold(f64),
}

impl Command {
    pub fn new(
        kind: CommandKind,
        issued_at: f64,
        source: CommandSource,
    ) -> Result<Self, CommandError> {
        if let CommandKind::SetThreshold(w) = kind {
            if !(w > 0.0 && w.is_finite()) {
                return Err(CommandError::Threshold(w));
            }
        }
        Ok(Command {
            kind,
            issued_at,
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_must_be_positive() {
        assert!(Command::new(CommandKind::SetThreshold(0.0), 0.0, CommandSource::Cli).is_err());
        assert!(Command::new(CommandKind::SetThreshold(-5.0), 0.0, CommandSource::Cli).is_err());
        assert!(Command::new(CommandKind::SetThreshold(700.0), 0.0, CommandSource::Cli).is_ok());
    }
}
