use serde::{Deserialize, Serialize};

/// One energy-meter sample.
///
/// Units: volts RMS, amps RMS, watts, unitless power factor, hertz, and
/// watt-hours for the meter's cumulative energy counter. `timestamp` is
/// seconds since scenario (or daemon) start.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ElectricalReading {
    pub voltage: f64,
    pub current: f64,
    pub active_power: f64,
    pub power_factor: f64,
    pub frequency: f64,
    pub energy: f64,
    pub timestamp: f64,
}

impl ElectricalReading {
    /// A dead line: every quantity zero except the energy counter.
    pub fn dead(energy: f64, timestamp: f64) -> Self {
        ElectricalReading {
            energy,
            timestamp,
            ..Default::default()
        }
    }

    pub fn apparent_power(&self) -> f64 {
        self.voltage * self.current
    }

    /// Reactive power magnitude derived from apparent and active power.
    pub fn reactive_power(&self) -> f64 {
        let s = self.apparent_power();
        let q2 = s * s - self.active_power * self.active_power;
        if q2 > 0.0 {
            libm::sqrt(q2)
        } else {
            0.0
        }
    }

    pub fn is_live(&self) -> bool {
        self.voltage > 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reactive_power_of_unity_pf_is_zero() {
        let r = ElectricalReading {
            voltage: 230.0,
            current: 1.0,
            active_power: 230.0,
            power_factor: 1.0,
            ..Default::default()
        };
        assert_eq!(r.reactive_power(), 0.0);
    }

    #[test]
    fn reactive_power_triangle() {
        let r = ElectricalReading {
            voltage: 100.0,
            current: 1.0,
            active_power: 60.0,
            power_factor: 0.6,
            ..Default::default()
        };
        assert!((r.reactive_power() - 80.0).abs() < 1e-9);
    }
}
