//! Control layer: the relay decision chain, relay sequencing and the
//! supervisory tick that merges operator input and safety rules.

mod algorithm;
mod relays;
mod supervisor;

use thiserror::Error;

pub use algorithm::{
    decide_relays, ControlInputs, Decision, InputError, Reason, RelayMode, Target,
    DEFAULT_POWER_THRESHOLD_W, DEFAULT_WINDOW_BOUNDARY, SOC_FULL_PCT, SOC_LOW_PCT,
};
pub use relays::{
    apply_decision, ActionSequence, BatteryPath, DcRelay, RelayBank, RelayCommand, SourcePosition,
    Step, DC_RELAY_CLOSE_DELAY_S,
};
pub use supervisor::{
    control_tick, ControlConfig, ControlState, Sample, Supply, TelemetrySnapshot, TickOutcome,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PowerError {
    #[error("power factor {0} outside [0, 1]")]
    PowerFactor(f64),
    #[error("voltage and current must be non-negative (got {voltage} V, {current} A)")]
    Negative { voltage: f64, current: f64 },
}

/// Active power `V · I · PF`.
pub fn compute_active_power(voltage: f64, current: f64, pf: f64) -> Result<f64, PowerError> {
    if !(0.0..=1.0).contains(&pf) {
        return Err(PowerError::PowerFactor(pf));
    }
    if !(voltage >= 0.0 && current >= 0.0) {
        return Err(PowerError::Negative { voltage, current });
    }
    Ok(voltage * current * pf)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn active_power_product() {
        assert!((compute_active_power(230.0, 1.0, 0.95).unwrap() - 218.5).abs() < 1e-9);
        assert_eq!(compute_active_power(230.0, 3.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn active_power_rejects_bad_pf() {
        assert_eq!(
            compute_active_power(230.0, 1.0, 1.2),
            Err(PowerError::PowerFactor(1.2))
        );
        assert!(compute_active_power(230.0, 1.0, -0.1).is_err());
        assert!(compute_active_power(-1.0, 1.0, 0.5).is_err());
    }
}
