//! Plain-text summaries for the terminal.

use std::fmt::Write;

use dcm_core::sim::{OperatingMode, SimReport};
use dcm_core::tariff::DayResult;

fn line(out: &mut String, label: &str, value: impl std::fmt::Display) {
    let _ = writeln!(out, "  {label:<28} {value:>14}");
}

pub fn simulation_summary(name: &str, tick: f64, r: &SimReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "scenario {name}");
    line(&mut out, "ticks", r.rows.len());
    line(&mut out, "tick (s)", format!("{tick}"));
    let secs = |m: OperatingMode| r.rows.iter().filter(|row| row.mode == m).count() as f64 * tick;
    line(
        &mut out,
        "time on grid (s)",
        format!("{:.0}", secs(OperatingMode::Grid)),
    );
    line(
        &mut out,
        "time on battery (s)",
        format!("{:.0}", secs(OperatingMode::Battery)),
    );
    line(
        &mut out,
        "time in transition (s)",
        format!("{:.0}", secs(OperatingMode::Transition)),
    );
    line(
        &mut out,
        "time in emergency (s)",
        format!("{:.0}", secs(OperatingMode::Emergency)),
    );
    let switches = r
        .events
        .iter()
        .filter(|e| !e.actions.steps.is_empty())
        .count();
    line(&mut out, "relay action sequences", switches);
    line(
        &mut out,
        "grid energy in (Wh)",
        format!("{:.1}", r.balance.grid_in),
    );
    line(
        &mut out,
        "battery energy out (Wh)",
        format!("{:.1}", r.balance.battery_out),
    );
    line(
        &mut out,
        "load + losses (Wh)",
        format!("{:.1}", r.balance.sinks),
    );
    line(
        &mut out,
        "balance error",
        format!("{:.4}%", r.balance.relative_error * 100.0),
    );
    line(
        &mut out,
        "SoC range (%)",
        format!("{:.1} - {:.1}", r.soc_min, r.soc_max),
    );
    if !r.outages.is_empty() {
        let worst = r.outages.iter().map(|o| o.unserved_s).fold(0.0, f64::max);
        line(&mut out, "grid outages", r.outages.len());
        line(&mut out, "worst unserved (s)", format!("{worst:.3}"));
    }
    line(
        &mut out,
        "unserved outside outages (s)",
        format!("{:.3}", r.unserved_outside_outages_s),
    );
    if r.floor_deviations > 0 {
        line(&mut out, "SoC floor overrides", r.floor_deviations);
    }
    out
}

pub fn arbitrage_summary(tariff: &str, d: &DayResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "arbitrage against {tariff}");
    line(
        &mut out,
        "discharged in peak (kWh)",
        format!("{:.2}", d.discharged_peak),
    );
    line(
        &mut out,
        "charged off-peak (kWh)",
        format!("{:.2}", d.charged_offpeak),
    );
    line(
        &mut out,
        "charged in shoulder (kWh)",
        format!("{:.2}", d.charged_other),
    );
    line(
        &mut out,
        "SoC start / end (%)",
        format!("{:.1} / {:.1}", d.initial_soc, d.final_soc),
    );
    let _ = writeln!(out, "  {:<28} {:>14} {:>14}", "", "before", "after");
    let row = |out: &mut String, label: &str, a: f64, b: f64| {
        let _ = writeln!(out, "  {label:<28} {a:>14.2} {b:>14.2}");
    };
    row(
        &mut out,
        "peak demand (kW)",
        d.peak_demand_before,
        d.peak_demand_after,
    );
    row(
        &mut out,
        "energy cost",
        d.energy_cost_before,
        d.energy_cost_after,
    );
    row(
        &mut out,
        "demand charge",
        d.demand_charge_before,
        d.demand_charge_after,
    );
    row(
        &mut out,
        "load factor",
        d.metrics.load_factor_before,
        d.metrics.load_factor_after,
    );
    line(
        &mut out,
        "peak reduction (W)",
        format!("{:.1}", d.metrics.peak_reduction_w),
    );
    line(
        &mut out,
        "variance ratio",
        format!("{:.3}", d.metrics.variance_ratio),
    );
    for w in &d.warnings {
        let _ = writeln!(
            out,
            "  warning: {}",
            serde_json::to_string(w)
                .unwrap_or_default()
                .trim_matches('"')
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use dcm_core::profile::{make_load_profile, ProfileKind};
    use dcm_core::tariff::{simulate_arbitrage, ArbitrageConfig, TariffSchedule};

    #[test]
    fn arbitrage_table_mentions_figures() {
        let p = make_load_profile(&ProfileKind::HouseholdDay { mean_w: 1300.0 }, 86_400.0).unwrap();
        let d = simulate_arbitrage(
            &p,
            &TariffSchedule::reference(),
            &ArbitrageConfig::reference(),
        )
        .unwrap();
        let text = arbitrage_summary("reference_tariff", &d);
        assert!(text.contains("5.40"), "{text}");
        assert!(text.contains("3.60"), "{text}");
    }
}
