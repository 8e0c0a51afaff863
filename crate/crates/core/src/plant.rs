//! Battery, charger, inverter, grid and household load as one lumped plant.
//!
//! The plant is integrated piecewise: the caller advances it over spans in
//! which the relay bank, the grid status and the load demand are constant.
//! Meter readings are produced from the instantaneous flows and carry the
//! power factors configured for each operating mode.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::battery::{step_battery, BatteryState, StepEvents};
use crate::control::{RelayBank, SourcePosition};
use crate::reading::ElectricalReading;
use crate::scenario::Scenario;
use crate::SECONDS_PER_HOUR;

/// Load at which the load power factor reaches the top of its band.
const LOAD_PF_FULL_SCALE_W: f64 = 2000.0;
/// Amplitude of the optional uniform power noise, one meter resolution step.
const NOISE_AMPLITUDE_W: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub charge_efficiency: f64,
    pub discharge_efficiency: f64,
    pub charger_power: f64,
    pub inverter_rating: f64,
    pub standby_grid_draw: f64,
    pub load_pf_min: f64,
    pub load_pf_max: f64,
    pub grid_pf_battery_mode: f64,
    pub grid_pf_grid_mode: f64,
    /// Longest tolerated gap in supply after a grid loss.
    pub failover_latency: f64,
    pub tick: f64,
    pub grid_voltage: f64,
    pub grid_frequency: f64,
    pub measurement_noise: bool,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            charge_efficiency: 0.95,
            discharge_efficiency: 0.95,
            charger_power: 600.0,
            inverter_rating: 3000.0,
            standby_grid_draw: 4.7,
            load_pf_min: 0.95,
            load_pf_max: 0.98,
            grid_pf_battery_mode: 0.45,
            grid_pf_grid_mode: 0.75,
            failover_latency: 2.0,
            tick: 1.0,
            grid_voltage: 230.0,
            grid_frequency: 50.0,
            measurement_noise: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("plant.{field}: {reason}")]
    InvalidConfig {
        field: &'static str,
        reason: &'static str,
    },
    #[error("time {t} s outside scenario [0, {duration})")]
    TimeOutOfRange { t: f64, duration: f64 },
}

fn invalid(field: &'static str, reason: &'static str) -> PlantError {
    PlantError::InvalidConfig { field, reason }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<(), PlantError> {
        let ratio = |v: f64| v > 0.0 && v <= 1.0;
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let non_negative = |v: f64| v >= 0.0 && v.is_finite();
        if !ratio(self.charge_efficiency) {
            return Err(invalid("charge_efficiency", "must be in (0, 1]"));
        }
        if !ratio(self.discharge_efficiency) {
            return Err(invalid("discharge_efficiency", "must be in (0, 1]"));
        }
        for (field, v) in [
            ("charger_power", self.charger_power),
            ("inverter_rating", self.inverter_rating),
            ("standby_grid_draw", self.standby_grid_draw),
            ("failover_latency", self.failover_latency),
            ("grid_frequency", self.grid_frequency),
        ] {
            if !non_negative(v) {
                return Err(invalid(field, "must be a non-negative number"));
            }
        }
        for (field, v) in [
            ("load_pf_min", self.load_pf_min),
            ("load_pf_max", self.load_pf_max),
            ("grid_pf_battery_mode", self.grid_pf_battery_mode),
            ("grid_pf_grid_mode", self.grid_pf_grid_mode),
        ] {
            if !unit(v) || v == 0.0 {
                return Err(invalid(field, "must be in (0, 1]"));
            }
        }
        if self.load_pf_min > self.load_pf_max {
            return Err(invalid("load_pf_min", "must not exceed load_pf_max"));
        }
        if !(self.tick > 0.0 && self.tick.is_finite()) {
            return Err(invalid("tick", "must be positive"));
        }
        if !(self.grid_voltage > 0.0 && self.grid_voltage.is_finite()) {
            return Err(invalid("grid_voltage", "must be positive"));
        }
        Ok(())
    }

    /// Load power factor, rising linearly across the configured band up to
    /// 2 kW.
    pub fn load_pf(&self, load_w: f64) -> f64 {
        let x = (load_w / LOAD_PF_FULL_SCALE_W).clamp(0.0, 1.0);
        self.load_pf_min + (self.load_pf_max - self.load_pf_min) * x
    }
}

/// External conditions over one integration span.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conditions {
    pub load_w: f64,
    pub grid_up: bool,
}

/// Instantaneous power flows for a relay configuration.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Flows {
    pub grid_w: f64,
    pub load_served_w: f64,
    pub load_from_grid_w: f64,
    pub load_from_battery_w: f64,
    pub charger_w: f64,
    pub standby_w: f64,
    pub unserved_w: f64,
}

/// Energy bookkeeping over a run, all in Wh.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub grid_in: f64,
    pub load_served: f64,
    pub load_from_battery: f64,
    pub charger_in: f64,
    pub charger_losses: f64,
    pub inverter_losses: f64,
    pub standby: f64,
    pub unserved: f64,
    /// Seconds during which demand was present but nothing served it.
    pub unserved_time: f64,
}

/// Result of the energy-balance check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Balance {
    pub grid_in: f64,
    /// Net energy taken out of storage, from the SoC change.
    pub battery_out: f64,
    pub sinks: f64,
    pub throughput: f64,
    /// |sources − sinks| / throughput (0 for an idle run).
    pub relative_error: f64,
}

impl Balance {
    pub fn within(&self, tolerance: f64) -> bool {
        self.relative_error <= tolerance
    }
}

/// What one integration span did.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Span {
    pub grid_wh: f64,
    pub load_wh: f64,
    /// Seconds of the span during which the load went unserved (inverter
    /// starved or grid missing).
    pub unserved_s: f64,
    pub events: StepEvents,
}

#[derive(Debug, Clone)]
pub struct Plant {
    pub cfg: PlantConfig,
    pub battery: BatteryState,
    pub ledger: EnergyLedger,
    initial_stored: f64,
    grid_meter_wh: f64,
    load_meter_wh: f64,
    rng: Option<ChaCha8Rng>,
}

impl Plant {
    pub fn new(cfg: PlantConfig, battery: BatteryState, seed: u64) -> Self {
        let rng = cfg
            .measurement_noise
            .then(|| ChaCha8Rng::seed_from_u64(seed));
        Plant {
            cfg,
            battery,
            ledger: EnergyLedger::default(),
            initial_stored: battery.stored_energy(),
            grid_meter_wh: 0.0,
            load_meter_wh: 0.0,
            rng,
        }
    }

    /// Power flows right now, assuming the battery can sustain them.
    pub fn flows(&self, cond: Conditions, bank: &RelayBank) -> Flows {
        let load = cond.load_w.max(0.0);
        let mut f = Flows::default();
        if cond.grid_up {
            f.standby_w = self.cfg.standby_grid_draw;
        }
        match bank.relay4_load_source {
            SourcePosition::GridNc if cond.grid_up => f.load_from_grid_w = load,
            SourcePosition::InverterNo if bank.inverter_fed() && self.battery.soc > 0.0 => {
                f.load_from_battery_w = load.min(self.cfg.inverter_rating);
            }
            _ => {}
        }
        if bank.charger_connected() && cond.grid_up && self.battery.soc < 100.0 {
            f.charger_w = self.cfg.charger_power;
        }
        f.load_served_w = f.load_from_grid_w + f.load_from_battery_w;
        f.unserved_w = load - f.load_served_w;
        f.grid_w = f.standby_w + f.load_from_grid_w + f.charger_w;
        f
    }

    /// Integrate `dt` seconds with everything held constant.
    pub fn advance(&mut self, dt: f64, cond: Conditions, bank: &RelayBank) -> Span {
        let mut span = Span::default();
        if dt <= 0.0 {
            return span;
        }
        let h = dt / SECONDS_PER_HOUR;
        let load = cond.load_w.max(0.0);
        let mut grid_wh = 0.0;
        let mut served_wh = 0.0;

        if cond.grid_up {
            let standby = self.cfg.standby_grid_draw * h;
            self.ledger.standby += standby;
            grid_wh += standby;
        }

        match bank.relay4_load_source {
            SourcePosition::GridNc if cond.grid_up => {
                served_wh += load * h;
                grid_wh += load * h;
            }
            SourcePosition::InverterNo if bank.inverter_fed() && load > 0.0 => {
                let step = step_battery(&self.battery, load, dt, &self.cfg);
                self.battery = step.state;
                span.events |= step.events;
                let delivered = step.terminal_energy;
                served_wh += delivered;
                self.ledger.load_from_battery += delivered;
                self.ledger.inverter_losses += -step.stored_delta - delivered;
                if step.active_time < dt {
                    span.unserved_s = dt - step.active_time;
                    self.ledger.unserved_time += span.unserved_s;
                }
            }
            _ => {
                if load > 0.0 {
                    span.unserved_s = dt;
                    self.ledger.unserved_time += dt;
                }
            }
        }

        if bank.charger_connected() && cond.grid_up && self.cfg.charger_power > 0.0 {
            let step = step_battery(&self.battery, -self.cfg.charger_power, dt, &self.cfg);
            self.battery = step.state;
            span.events |= step.events;
            grid_wh += step.terminal_energy;
            self.ledger.charger_in += step.terminal_energy;
            self.ledger.charger_losses += step.terminal_energy - step.stored_delta;
        }

        self.ledger.grid_in += grid_wh;
        self.ledger.load_served += served_wh;
        self.ledger.unserved += (load * h - served_wh).max(0.0);
        self.grid_meter_wh += grid_wh;
        self.load_meter_wh += served_wh;
        span.grid_wh = grid_wh;
        span.load_wh = served_wh;
        span
    }

    fn noisy(&mut self, p: f64) -> f64 {
        match self.rng.as_mut() {
            Some(rng) if p > 0.0 => {
                (p + rng.gen_range(-NOISE_AMPLITUDE_W..=NOISE_AMPLITUDE_W)).max(0.0)
            }
            _ => p,
        }
    }

    fn reading(&self, p: f64, pf: f64, energy: f64, t: f64) -> ElectricalReading {
        let v = self.cfg.grid_voltage;
        ElectricalReading {
            voltage: v,
            current: p / (v * pf),
            active_power: p,
            power_factor: pf,
            frequency: self.cfg.grid_frequency,
            energy,
            timestamp: t,
        }
    }

    /// What the grid-side meter would measure right now.
    pub fn grid_reading(
        &mut self,
        cond: Conditions,
        bank: &RelayBank,
        t: f64,
    ) -> ElectricalReading {
        if !cond.grid_up {
            return ElectricalReading::dead(self.grid_meter_wh, t);
        }
        let f = self.flows(cond, bank);
        let pf = if bank.relay4_load_source == SourcePosition::InverterNo {
            self.cfg.grid_pf_battery_mode
        } else {
            self.cfg.grid_pf_grid_mode
        };
        let p = self.noisy(f.grid_w);
        self.reading(p, pf, self.grid_meter_wh, t)
    }

    /// What the load-side meter would measure right now.
    pub fn load_reading(
        &mut self,
        cond: Conditions,
        bank: &RelayBank,
        t: f64,
    ) -> ElectricalReading {
        let f = self.flows(cond, bank);
        if f.load_served_w <= 0.0 && f.unserved_w > 0.0 {
            return ElectricalReading::dead(self.load_meter_wh, t);
        }
        let pf = self.cfg.load_pf(f.load_served_w);
        let p = self.noisy(f.load_served_w);
        self.reading(p, pf, self.load_meter_wh, t)
    }

    pub fn balance(&self) -> Balance {
        let l = &self.ledger;
        let battery_out = self.initial_stored - self.battery.stored_energy();
        let sinks = l.load_served + l.charger_losses + l.inverter_losses + l.standby;
        let throughput =
            l.grid_in + l.charger_in + l.load_from_battery + l.inverter_losses + l.load_served;
        let diff = libm::fabs(l.grid_in + battery_out - sinks);
        Balance {
            grid_in: l.grid_in,
            battery_out,
            sinks,
            throughput,
            relative_error: if throughput > 0.0 {
                diff / throughput
            } else {
                diff
            },
        }
    }
}

/// Readings and battery state after one tick from `t` with a fixed relay
/// bank.
pub fn plant_step(
    scenario: &Scenario,
    t: f64,
    bank: &RelayBank,
    battery: &BatteryState,
) -> Result<(ElectricalReading, ElectricalReading, BatteryState), PlantError> {
    if !(t >= 0.0 && t < scenario.duration) {
        return Err(PlantError::TimeOutOfRange {
            t,
            duration: scenario.duration,
        });
    }
    scenario.plant.validate()?;
    let profile = scenario
        .load_profile()
        .map_err(|_| invalid("load", "invalid load profile"))?;
    let cond = Conditions {
        load_w: profile.power_at(t),
        grid_up: !scenario.grid_down_at(t),
    };
    let mut plant = Plant::new(scenario.plant, *battery, scenario.seed);
    let grid = plant.grid_reading(cond, bank, t);
    let load = plant.load_reading(cond, bank, t);
    let dt = scenario.plant.tick.min(scenario.duration - t);
    plant.advance(dt, cond, bank);
    Ok((grid, load, plant.battery))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{decode_pzem_response, PzemRegisters};

    fn ideal() -> PlantConfig {
        PlantConfig {
            charge_efficiency: 1.0,
            discharge_efficiency: 1.0,
            ..PlantConfig::default()
        }
    }

    fn on(load_w: f64) -> Conditions {
        Conditions {
            load_w,
            grid_up: true,
        }
    }

    #[test]
    fn battery_mode_grid_carries_standby_only() {
        let mut p = Plant::new(
            PlantConfig::default(),
            BatteryState::with_soc(80.0).unwrap(),
            0,
        );
        let g = p.grid_reading(on(700.0), &RelayBank::BATTERY_MODE, 0.0);
        assert!((g.active_power - 4.7).abs() < 1e-9);
        assert_eq!(g.power_factor, 0.45);
        let l = p.load_reading(on(700.0), &RelayBank::BATTERY_MODE, 0.0);
        assert_eq!(l.active_power, 700.0);
        assert!((0.95..=0.98).contains(&l.power_factor));
    }

    #[test]
    fn grid_mode_carries_load_charger_and_standby() {
        let mut p = Plant::new(
            PlantConfig::default(),
            BatteryState::with_soc(50.0).unwrap(),
            0,
        );
        let g = p.grid_reading(on(700.0), &RelayBank::DE_ENERGIZED, 0.0);
        assert!((g.active_power - (700.0 + 600.0 + 4.7)).abs() < 1e-9);
        assert_eq!(g.power_factor, 0.75);
        // Full battery: no charging.
        let mut p = Plant::new(
            PlantConfig::default(),
            BatteryState::with_soc(100.0).unwrap(),
            0,
        );
        let g = p.grid_reading(on(0.0), &RelayBank::DE_ENERGIZED, 0.0);
        assert!((g.active_power - 4.7).abs() < 1e-9);
    }

    #[test]
    fn seven_watt_bulb_through_meter() {
        let mut p = Plant::new(
            PlantConfig::default(),
            BatteryState::with_soc(100.0).unwrap(),
            0,
        );
        let r = p.load_reading(on(7.0), &RelayBank::DE_ENERGIZED, 3.0);
        let frame = PzemRegisters::from_reading(&r).encode_response(1);
        let back = decode_pzem_response(&frame, 3.0).unwrap();
        assert!((back.active_power - 7.0).abs() <= 0.1);
    }

    #[test]
    fn outage_leaves_grid_load_unserved() {
        let mut p = Plant::new(
            PlantConfig::default(),
            BatteryState::with_soc(50.0).unwrap(),
            0,
        );
        let cond = Conditions {
            load_w: 500.0,
            grid_up: false,
        };
        let span = p.advance(2.0, cond, &RelayBank::DE_ENERGIZED);
        assert_eq!(span.unserved_s, 2.0);
        assert_eq!(
            p.grid_reading(cond, &RelayBank::DE_ENERGIZED, 0.0).voltage,
            0.0
        );
        assert_eq!(
            p.load_reading(cond, &RelayBank::DE_ENERGIZED, 0.0)
                .active_power,
            0.0
        );
        let span = p.advance(2.0, cond, &RelayBank::BATTERY_MODE);
        assert_eq!(span.unserved_s, 0.0);
    }

    #[test]
    fn ideal_battery_energy_equals_load_served() {
        let cfg = PlantConfig {
            standby_grid_draw: 0.0,
            ..ideal()
        };
        let mut p = Plant::new(cfg, BatteryState::with_soc(90.0).unwrap(), 0);
        for i in 0..600 {
            p.advance(1.0, on(300.0 + i as f64), &RelayBank::BATTERY_MODE);
        }
        let b = p.balance();
        assert!((b.battery_out - p.ledger.load_served).abs() <= 1e-9 * p.ledger.load_served);
    }

    #[test]
    fn mixed_run_conserves_energy() {
        let mut p = Plant::new(
            PlantConfig::default(),
            BatteryState::with_soc(40.0).unwrap(),
            0,
        );
        let banks = [RelayBank::DE_ENERGIZED, RelayBank::BATTERY_MODE];
        for i in 0..5000 {
            let bank = banks[(i / 700) % 2];
            p.advance(
                0.7,
                Conditions {
                    load_w: (i % 13) as f64 * 97.0,
                    grid_up: i % 900 > 20,
                },
                &bank,
            );
        }
        assert!(p.balance().within(1e-3), "{:?}", p.balance());
        assert!((0.0..=100.0).contains(&p.battery.soc));
    }

    #[test]
    fn validate_names_field() {
        let cfg = PlantConfig {
            charge_efficiency: 1.5,
            ..PlantConfig::default()
        };
        assert_eq!(
            cfg.validate(),
            Err(invalid("charge_efficiency", "must be in (0, 1]"))
        );
        let cfg = PlantConfig {
            tick: 0.0,
            ..PlantConfig::default()
        };
        assert!(matches!(
            cfg.validate(),
            Err(PlantError::InvalidConfig { field: "tick", .. })
        ));
        assert!(PlantConfig::default().validate().is_ok());
    }

    #[test]
    fn noise_stays_within_resolution() {
        let cfg = PlantConfig {
            measurement_noise: true,
            ..PlantConfig::default()
        };
        let mut p = Plant::new(cfg, BatteryState::with_soc(100.0).unwrap(), 42);
        for _ in 0..1000 {
            let r = p.load_reading(on(700.0), &RelayBank::DE_ENERGIZED, 0.0);
            assert!((r.active_power - 700.0).abs() <= 0.1 + 1e-12);
        }
    }
}
