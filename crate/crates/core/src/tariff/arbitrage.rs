//! Rule-based arbitrage over one day: discharge through peak windows,
//! recharge off-peak, and optionally top up in shoulder windows that still
//! have a peak ahead of them.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::demand::{demand_charge, energy_cost, peak_demand_kw};
use super::metrics::{flattening_metrics, FlatteningMetrics};
use super::{TariffError, TariffSchedule, WindowLabel};
use crate::battery::{
    step_battery, BatteryState, DEFAULT_NOMINAL_CAPACITY_WH, DEFAULT_USABLE_CAPACITY_WH,
};
use crate::plant::PlantConfig;
use crate::profile::LoadProfile;
use crate::SECONDS_PER_HOUR;

const DAY_S: f64 = 86_400.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArbitrageConfig {
    pub nominal_capacity: f64,
    pub usable_capacity: f64,
    pub initial_soc: f64,
    pub charge_efficiency: f64,
    pub discharge_efficiency: f64,
    pub charger_power: f64,
    pub inverter_rating: f64,
    pub step_s: f64,
    /// Charge during shoulder windows that precede a later peak.
    pub shoulder_recharge: bool,
}

impl Default for ArbitrageConfig {
    fn default() -> Self {
        let plant = PlantConfig::default();
        ArbitrageConfig {
            nominal_capacity: DEFAULT_NOMINAL_CAPACITY_WH,
            usable_capacity: DEFAULT_USABLE_CAPACITY_WH,
            initial_soc: 100.0,
            charge_efficiency: plant.charge_efficiency,
            discharge_efficiency: plant.discharge_efficiency,
            charger_power: plant.charger_power,
            inverter_rating: plant.inverter_rating,
            step_s: 60.0,
            shoulder_recharge: false,
        }
    }
}

impl ArbitrageConfig {
    /// Lossless 600 W charger and a 900 W discharge limit, starting the day
    /// at the usable floor with shoulder recharging enabled.
    pub fn reference() -> Self {
        ArbitrageConfig {
            initial_soc: 10.0,
            charge_efficiency: 1.0,
            discharge_efficiency: 1.0,
            charger_power: 600.0,
            inverter_rating: 900.0,
            shoulder_recharge: true,
            ..ArbitrageConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), TariffError> {
        let eff = |v: f64| v > 0.0 && v <= 1.0;
        let nn = |v: f64| v >= 0.0 && v.is_finite();
        if !nn(self.nominal_capacity) {
            return Err(TariffError::Config("nominal_capacity"));
        }
        if !(nn(self.usable_capacity) && self.usable_capacity <= self.nominal_capacity) {
            return Err(TariffError::Config("usable_capacity"));
        }
        if !(0.0..=100.0).contains(&self.initial_soc) {
            return Err(TariffError::Config("initial_soc"));
        }
        if !eff(self.charge_efficiency) {
            return Err(TariffError::Config("charge_efficiency"));
        }
        if !eff(self.discharge_efficiency) {
            return Err(TariffError::Config("discharge_efficiency"));
        }
        if !nn(self.charger_power) {
            return Err(TariffError::Config("charger_power"));
        }
        if !nn(self.inverter_rating) {
            return Err(TariffError::Config("inverter_rating"));
        }
        if !(self.step_s > 0.0 && self.step_s <= 3600.0) {
            return Err(TariffError::Config("step_s"));
        }
        Ok(())
    }

    fn plant(&self) -> PlantConfig {
        PlantConfig {
            charge_efficiency: self.charge_efficiency,
            discharge_efficiency: self.discharge_efficiency,
            charger_power: self.charger_power,
            inverter_rating: self.inverter_rating,
            ..PlantConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArbitrageWarning {
    /// Zero storage; the net series is the base series.
    NoBattery,
    /// No charger and no stored energy above the floor.
    NoChargeSource,
    /// Storage hit the usable floor while a peak window still had load.
    PeakUnderserved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayResult {
    pub step_s: f64,
    pub base_load_series: Vec<f64>,
    pub net_grid_series: Vec<f64>,
    /// Positive while discharging, negative while charging.
    pub battery_power_series: Vec<f64>,
    /// kWh delivered during peak windows.
    pub discharged_peak: f64,
    /// kWh drawn by the charger during off-peak windows.
    pub charged_offpeak: f64,
    /// kWh drawn by the charger in shoulder windows.
    pub charged_other: f64,
    pub initial_soc: f64,
    pub final_soc: f64,
    pub peak_demand_before: f64,
    pub peak_demand_after: f64,
    pub energy_cost_before: f64,
    pub energy_cost_after: f64,
    pub demand_charge_before: f64,
    pub demand_charge_after: f64,
    pub metrics: FlatteningMetrics,
    pub warnings: Vec<ArbitrageWarning>,
}

/// Run the dispatch rule over a one-day profile starting at midnight.
pub fn simulate_arbitrage(
    profile: &LoadProfile,
    tariff: &TariffSchedule,
    cfg: &ArbitrageConfig,
) -> Result<DayResult, TariffError> {
    if libm::fabs(profile.duration - DAY_S) > 1e-6 {
        return Err(TariffError::ProfileDuration(profile.duration));
    }
    tariff.validate()?;
    cfg.validate()?;

    let step = cfg.step_s;
    let h = step / SECONDS_PER_HOUR;
    let base = profile.sample(step);
    let plant = cfg.plant();
    let mut warnings = Vec::new();

    let mut battery = if cfg.nominal_capacity > 0.0 {
        Some(
            BatteryState::new(cfg.nominal_capacity, cfg.usable_capacity, cfg.initial_soc)
                .map_err(|_| TariffError::Config("nominal_capacity"))?,
        )
    } else {
        warnings.push(ArbitrageWarning::NoBattery);
        None
    };
    if let Some(b) = &battery {
        if cfg.charger_power == 0.0 && b.stored_energy() <= b.usable_floor_energy() {
            warnings.push(ArbitrageWarning::NoChargeSource);
        }
    }

    let mut battery_power = Vec::with_capacity(base.len());
    let mut net = Vec::with_capacity(base.len());
    let (mut discharged_peak, mut charged_offpeak, mut charged_other) = (0.0, 0.0, 0.0);

    for (i, &load) in base.iter().enumerate() {
        let tod = i as f64 * step;
        let label = tariff.label_at(tod + step / 2.0);
        let mut power = 0.0;
        if let Some(b) = battery.as_mut() {
            let request = match label {
                Some(WindowLabel::Peak) => {
                    let want = load.min(cfg.inverter_rating);
                    let deliverable = (b.stored_energy() - b.usable_floor_energy()).max(0.0)
                        * cfg.discharge_efficiency;
                    if deliverable < want * h && load > 0.0 {
                        if !warnings.contains(&ArbitrageWarning::PeakUnderserved) {
                            warnings.push(ArbitrageWarning::PeakUnderserved);
                        }
                        deliverable / h
                    } else {
                        want
                    }
                }
                Some(WindowLabel::OffPeak) => -cfg.charger_power,
                Some(WindowLabel::Shoulder) if cfg.shoulder_recharge && tariff.peak_ahead(tod) => {
                    -cfg.charger_power
                }
                _ => 0.0,
            };
            if request != 0.0 {
                let s = step_battery(b, request, step, &plant);
                *b = s.state;
                power = s.terminal_energy / h * request.signum();
                let kwh = s.terminal_energy / 1000.0;
                match (label, request > 0.0) {
                    (Some(WindowLabel::Peak), true) => discharged_peak += kwh,
                    (Some(WindowLabel::OffPeak), false) => charged_offpeak += kwh,
                    (_, false) => charged_other += kwh,
                    _ => {}
                }
            }
        }
        battery_power.push(power);
        net.push(load - power);
    }

    let interval_check = peak_demand_kw(&base, step, tariff)?;
    let peak_before = interval_check.iter().copied().fold(0.0, f64::max);
    let peak_after = peak_demand_kw(&net, step, tariff)?
        .iter()
        .copied()
        .fold(0.0, f64::max);

    Ok(DayResult {
        step_s: step,
        discharged_peak,
        charged_offpeak,
        charged_other,
        initial_soc: cfg.initial_soc,
        final_soc: battery.map_or(0.0, |b| b.soc),
        peak_demand_before: peak_before,
        peak_demand_after: peak_after,
        energy_cost_before: energy_cost(&base, step, 0.0, tariff)?,
        energy_cost_after: energy_cost(&net, step, 0.0, tariff)?,
        demand_charge_before: demand_charge(&base, step, tariff)?,
        demand_charge_after: demand_charge(&net, step, tariff)?,
        metrics: flattening_metrics(&base, &net)?,
        base_load_series: base,
        net_grid_series: net,
        battery_power_series: battery_power,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{make_load_profile, ProfileKind};
    use proptest::prelude::*;

    fn household() -> LoadProfile {
        make_load_profile(&ProfileKind::HouseholdDay { mean_w: 1300.0 }, DAY_S).unwrap()
    }

    #[test]
    fn reference_day() {
        let r = simulate_arbitrage(
            &household(),
            &TariffSchedule::reference(),
            &ArbitrageConfig::reference(),
        )
        .unwrap();
        assert!(
            (r.discharged_peak - 5.4).abs() <= 0.1,
            "{}",
            r.discharged_peak
        );
        assert!(
            (r.charged_offpeak - 3.6).abs() <= 0.1,
            "{}",
            r.charged_offpeak
        );
        assert!(r.metrics.variance_ratio < 1.0);
        assert!(r.metrics.peak_reduction_w > 0.0);
        assert!(r.warnings.is_empty(), "{:?}", r.warnings);
        for ((b, n), p) in r
            .base_load_series
            .iter()
            .zip(&r.net_grid_series)
            .zip(&r.battery_power_series)
        {
            assert!((n - (b - p)).abs() < 1e-9);
        }
    }

    #[test]
    fn no_battery_leaves_base_untouched() {
        let cfg = ArbitrageConfig {
            nominal_capacity: 0.0,
            usable_capacity: 0.0,
            ..ArbitrageConfig::reference()
        };
        let r = simulate_arbitrage(&household(), &TariffSchedule::reference(), &cfg).unwrap();
        assert_eq!(r.net_grid_series, r.base_load_series);
        assert_eq!(r.warnings, [ArbitrageWarning::NoBattery]);
    }

    #[test]
    fn flat_tariff_never_discharges() {
        let r = simulate_arbitrage(
            &household(),
            &TariffSchedule::flat(0.3, 10.0),
            &ArbitrageConfig::reference(),
        )
        .unwrap();
        assert_eq!(r.discharged_peak, 0.0);
        assert!(r.battery_power_series.iter().all(|p| *p <= 0.0));
    }

    #[test]
    fn empty_battery_without_charger_warns() {
        let cfg = ArbitrageConfig {
            charger_power: 0.0,
            ..ArbitrageConfig::reference()
        };
        let r = simulate_arbitrage(&household(), &TariffSchedule::reference(), &cfg).unwrap();
        assert!(r.warnings.contains(&ArbitrageWarning::NoChargeSource));
        assert_eq!(r.discharged_peak, 0.0);
    }

    #[test]
    fn wrong_duration_rejected() {
        let p = make_load_profile(&ProfileKind::Flat { watts: 1.0 }, 3600.0).unwrap();
        assert!(matches!(
            simulate_arbitrage(
                &p,
                &TariffSchedule::reference(),
                &ArbitrageConfig::default()
            ),
            Err(TariffError::ProfileDuration(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn storage_accounting(
            soc in 0.0f64..=100.0,
            ec in 0.8f64..=1.0,
            ed in 0.8f64..=1.0,
            charger in 0.0f64..1500.0,
            inverter in 0.0f64..3000.0,
            mean in 200.0f64..3000.0,
        ) {
            let cfg = ArbitrageConfig {
                initial_soc: soc,
                charge_efficiency: ec,
                discharge_efficiency: ed,
                charger_power: charger,
                inverter_rating: inverter,
                shoulder_recharge: true,
                ..ArbitrageConfig::default()
            };
            let p = make_load_profile(&ProfileKind::HouseholdDay { mean_w: mean }, DAY_S).unwrap();
            let r = simulate_arbitrage(&p, &TariffSchedule::reference(), &cfg).unwrap();
            let stored_delta = (r.final_soc - r.initial_soc) / 100.0 * cfg.nominal_capacity;
            let charged = (r.charged_offpeak + r.charged_other) * 1000.0;
            let expected = charged * ec - r.discharged_peak * 1000.0 / ed;
            let scale = charged + r.discharged_peak * 1000.0;
            prop_assert!((stored_delta - expected).abs() <= 1e-3 * scale.max(1.0));
            prop_assert!(r.discharged_peak >= 0.0 && r.charged_offpeak >= 0.0);
        }

        #[test]
        fn discharge_never_raises_energy_cost(mean in 200.0f64..3000.0, inverter in 1.0f64..3000.0) {
            let cfg = ArbitrageConfig {
                initial_soc: 100.0,
                charge_efficiency: 1.0,
                discharge_efficiency: 1.0,
                inverter_rating: inverter,
                ..ArbitrageConfig::default()
            };
            let p = make_load_profile(&ProfileKind::HouseholdDay { mean_w: mean }, DAY_S).unwrap();
            let r = simulate_arbitrage(&p, &TariffSchedule::reference(), &cfg).unwrap();
            prop_assert!(r.discharged_peak > 0.0);
            prop_assert!(r.energy_cost_after <= r.energy_cost_before + 1e-9);
        }

        #[test]
        fn deterministic(soc in 0.0f64..=100.0) {
            let cfg = ArbitrageConfig { initial_soc: soc, ..ArbitrageConfig::reference() };
            let a = simulate_arbitrage(&household(), &TariffSchedule::reference(), &cfg).unwrap();
            let b = simulate_arbitrage(&household(), &TariffSchedule::reference(), &cfg).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
