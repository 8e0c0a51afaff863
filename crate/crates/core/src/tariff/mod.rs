//! Time-of-use tariffs, demand-charge billing, the arbitrage day model and
//! runtime calculators.

mod arbitrage;
mod demand;
mod metrics;

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use arbitrage::{simulate_arbitrage, ArbitrageConfig, ArbitrageWarning, DayResult};
pub use demand::{demand_charge, energy_cost, interval_averages, peak_demand_kw};
pub use metrics::{flattening_metrics, FlatteningMetrics};

pub const MINUTES_PER_DAY: u32 = 1440;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowLabel {
    Peak,
    OffPeak,
    Shoulder,
}

impl WindowLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            WindowLabel::Peak => "peak",
            WindowLabel::OffPeak => "off_peak",
            WindowLabel::Shoulder => "shoulder",
        }
    }
}

/// `[start, end)` in minutes after midnight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TariffWindow {
    pub start: u32,
    pub end: u32,
    /// Currency per kWh.
    pub rate: f64,
    pub label: WindowLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TariffSchedule {
    pub windows: Vec<TariffWindow>,
    /// Currency per kW of peak interval demand.
    pub demand_rate: f64,
    #[serde(default = "default_interval")]
    pub demand_interval_min: u32,
    #[serde(default = "default_billing")]
    pub billing_period_s: f64,
}

fn default_interval() -> u32 {
    15
}

fn default_billing() -> f64 {
    86_400.0
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TariffError {
    #[error("tariff windows must cover the day without gaps or overlaps (problem at minute {0})")]
    Coverage(u32),
    #[error("windows[{0}]: rate must be a non-negative number")]
    Rate(usize),
    #[error("demand_rate must be a non-negative number")]
    DemandRate,
    #[error("demand_interval_min must be positive")]
    Interval,
    #[error("billing_period_s must be positive")]
    BillingPeriod,
    #[error("series is empty or shorter than one demand interval")]
    ShortSeries,
    #[error("sample step must be positive")]
    Step,
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("load must be positive, got {0} W")]
    Load(f64),
    #[error("capacity must be non-negative, got {0} Wh")]
    Capacity(f64),
    #[error("profile must span exactly one day, got {0} s")]
    ProfileDuration(f64),
    #[error("arbitrage.{0} out of range")]
    Config(&'static str),
}

impl TariffSchedule {
    pub fn validate(&self) -> Result<(), TariffError> {
        let mut ws: Vec<&TariffWindow> = self.windows.iter().collect();
        ws.sort_by_key(|w| w.start);
        let mut at = 0;
        for w in &ws {
            if w.start != at || w.end <= w.start {
                return Err(TariffError::Coverage(at));
            }
            at = w.end;
        }
        if at != MINUTES_PER_DAY {
            return Err(TariffError::Coverage(at));
        }
        for (i, w) in self.windows.iter().enumerate() {
            if !(w.rate >= 0.0 && w.rate.is_finite()) {
                return Err(TariffError::Rate(i));
            }
        }
        if !(self.demand_rate >= 0.0 && self.demand_rate.is_finite()) {
            return Err(TariffError::DemandRate);
        }
        if self.demand_interval_min == 0 {
            return Err(TariffError::Interval);
        }
        if !(self.billing_period_s > 0.0) {
            return Err(TariffError::BillingPeriod);
        }
        Ok(())
    }

    pub fn window_at(&self, time_of_day_s: f64) -> Option<&TariffWindow> {
        let tod = libm::fmod(time_of_day_s, 86_400.0);
        let tod = if tod < 0.0 { tod + 86_400.0 } else { tod };
        let minute = tod / 60.0;
        self.windows
            .iter()
            .find(|w| minute >= w.start as f64 && minute < w.end as f64)
    }

    pub fn rate_at(&self, time_of_day_s: f64) -> f64 {
        self.window_at(time_of_day_s).map_or(0.0, |w| w.rate)
    }

    pub fn label_at(&self, time_of_day_s: f64) -> Option<WindowLabel> {
        self.window_at(time_of_day_s).map(|w| w.label)
    }

    /// True when a peak window starts at or after `time_of_day_s`.
    pub fn peak_ahead(&self, time_of_day_s: f64) -> bool {
        let minute = time_of_day_s / 60.0;
        self.windows
            .iter()
            .any(|w| w.label == WindowLabel::Peak && w.start as f64 >= minute)
    }

    /// Schedule used for the reference arbitrage day: off-peak 00:00-06:00,
    /// a breakfast peak 07:00-08:00, the evening peak 16:00-21:00, shoulder
    /// in between.
    pub fn reference() -> Self {
        let w = |start: u32, end: u32, rate: f64, label| TariffWindow {
            start: start * 60,
            end: end * 60,
            rate,
            label,
        };
        TariffSchedule {
            windows: vec![
                w(0, 6, 0.12, WindowLabel::OffPeak),
                w(6, 7, 0.25, WindowLabel::Shoulder),
                w(7, 8, 0.45, WindowLabel::Peak),
                w(8, 16, 0.25, WindowLabel::Shoulder),
                w(16, 21, 0.45, WindowLabel::Peak),
                w(21, 24, 0.25, WindowLabel::Shoulder),
            ],
            demand_rate: 15.0,
            demand_interval_min: 15,
            billing_period_s: 86_400.0,
        }
    }

    /// A single all-day window at one rate.
    pub fn flat(rate: f64, demand_rate: f64) -> Self {
        TariffSchedule {
            windows: vec![TariffWindow {
                start: 0,
                end: MINUTES_PER_DAY,
                rate,
                label: WindowLabel::Shoulder,
            }],
            demand_rate,
            demand_interval_min: 15,
            billing_period_s: 86_400.0,
        }
    }
}

/// Hours a store of `capacity_wh` can carry a constant `load_w`.
pub fn backup_runtime(capacity_wh: f64, load_w: f64) -> Result<f64, TariffError> {
    if !(load_w > 0.0 && load_w.is_finite()) {
        return Err(TariffError::Load(load_w));
    }
    if !(capacity_wh >= 0.0 && capacity_wh.is_finite()) {
        return Err(TariffError::Capacity(capacity_wh));
    }
    Ok(capacity_wh / load_w)
}
