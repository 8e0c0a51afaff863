use alloc::vec::Vec;

use super::{TariffError, TariffSchedule};
use crate::SECONDS_PER_HOUR;

fn check_series(series: &[f64], step_s: f64) -> Result<(), TariffError> {
    if !(step_s > 0.0 && step_s.is_finite()) {
        return Err(TariffError::Step);
    }
    if series.is_empty() {
        return Err(TariffError::ShortSeries);
    }
    Ok(())
}

/// Average power in each interval `[k·interval, (k+1)·interval)` of a
/// series sampled every `step_s` seconds from t = 0. A trailing partial
/// interval is averaged over the part the series covers.
pub fn interval_averages(
    series: &[f64],
    step_s: f64,
    interval_s: f64,
) -> Result<Vec<f64>, TariffError> {
    check_series(series, step_s)?;
    if !(interval_s > 0.0) {
        return Err(TariffError::Interval);
    }
    let span = series.len() as f64 * step_s;
    let n = libm::ceil(span / interval_s - 1e-9) as usize;
    let mut sums = alloc::vec![0.0; n];
    let mut covered = alloc::vec![0.0; n];
    for (i, &p) in series.iter().enumerate() {
        let mut a = i as f64 * step_s;
        let b = a + step_s;
        while a < b - 1e-9 {
            let k = ((libm::floor(a / interval_s + 1e-9)) as usize).min(n - 1);
            let end = ((k + 1) as f64 * interval_s).min(b);
            let dt = end - a;
            if dt <= 0.0 {
                break;
            }
            sums[k] += p * dt;
            covered[k] += dt;
            a = end;
        }
    }
    Ok(sums
        .iter()
        .zip(&covered)
        .map(|(s, c)| if *c > 0.0 { s / c } else { 0.0 })
        .collect())
}

/// Highest interval-average demand in kW for each billing period.
pub fn peak_demand_kw(
    series: &[f64],
    step_s: f64,
    tariff: &TariffSchedule,
) -> Result<Vec<f64>, TariffError> {
    let interval_s = tariff.demand_interval_min as f64 * 60.0;
    if (series.len() as f64) * step_s < interval_s - 1e-9 {
        return Err(TariffError::ShortSeries);
    }
    let avgs = interval_averages(series, step_s, interval_s)?;
    let mut peaks: Vec<f64> = Vec::new();
    for (k, avg) in avgs.iter().enumerate() {
        let period = libm::floor(k as f64 * interval_s / tariff.billing_period_s + 1e-9) as usize;
        if peaks.len() <= period {
            peaks.resize(period + 1, 0.0);
        }
        peaks[period] = peaks[period].max(avg / 1000.0);
    }
    Ok(peaks)
}

/// Demand charge: `demand_rate ×` the peak interval demand (kW), summed
/// over billing periods.
pub fn demand_charge(
    series: &[f64],
    step_s: f64,
    tariff: &TariffSchedule,
) -> Result<f64, TariffError> {
    Ok(peak_demand_kw(series, step_s, tariff)?
        .iter()
        .map(|kw| kw * tariff.demand_rate)
        .sum())
}

/// Energy cost of a series whose first sample starts at `start_tod_s`
/// seconds after midnight. Each sample is billed at the rate at its midpoint.
pub fn energy_cost(
    series: &[f64],
    step_s: f64,
    start_tod_s: f64,
    tariff: &TariffSchedule,
) -> Result<f64, TariffError> {
    check_series(series, step_s)?;
    Ok(series
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mid = start_tod_s + (i as f64 + 0.5) * step_s;
            p * step_s / SECONDS_PER_HOUR / 1000.0 * tariff.rate_at(mid)
        })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn rate(r: f64) -> TariffSchedule {
        TariffSchedule::flat(0.2, r)
    }

    #[test]
    fn constant_series() {
        let s = vec![1300.0; 1440];
        assert!((demand_charge(&s, 60.0, &rate(10.0)).unwrap() - 13.0).abs() < 1e-9);
    }

    #[test]
    fn single_spike_window() {
        let mut s = vec![1000.0; 1440];
        for p in &mut s[600..615] {
            *p = 5000.0;
        }
        assert!((demand_charge(&s, 60.0, &rate(10.0)).unwrap() - 50.0).abs() < 1e-9);
        // The same spike straddling two aligned windows averages down.
        let mut s = vec![1000.0; 1440];
        for p in &mut s[605..620] {
            *p = 5000.0;
        }
        let expected = (1000.0 * 5.0 + 5000.0 * 10.0) / 15.0 / 1000.0 * 10.0;
        assert!((demand_charge(&s, 60.0, &rate(10.0)).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn zero_rate_and_errors() {
        assert_eq!(
            demand_charge(&[5000.0; 100], 60.0, &rate(0.0)).unwrap(),
            0.0
        );
        assert_eq!(
            demand_charge(&[], 60.0, &rate(10.0)),
            Err(TariffError::ShortSeries)
        );
        assert_eq!(
            demand_charge(&[1.0; 14], 60.0, &rate(10.0)),
            Err(TariffError::ShortSeries)
        );
    }

    #[test]
    fn billing_periods_add() {
        let mut t = rate(1.0);
        t.billing_period_s = 3600.0;
        let mut s = vec![1000.0; 120];
        s[100] = 16_000.0;
        // Hour 1 has one window averaging 2 kW, hour 0 peaks at 1 kW.
        assert!((demand_charge(&s, 60.0, &t).unwrap() - 3.0).abs() < 1e-9);
    }

    #[test]
    fn energy_cost_flat() {
        let s = vec![1000.0; 24];
        let c = energy_cost(&s, 3600.0, 0.0, &TariffSchedule::flat(0.2, 0.0)).unwrap();
        assert!((c - 4.8).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn demand_is_monotone(base in proptest::collection::vec(0.0f64..5000.0, 15..200), bump in proptest::collection::vec(0.0f64..2000.0, 200)) {
            let bigger: Vec<f64> = base.iter().zip(&bump).map(|(a, b)| a + b).collect();
            let t = rate(15.0);
            prop_assert!(demand_charge(&bigger, 60.0, &t).unwrap() >= demand_charge(&base, 60.0, &t).unwrap() - 1e-9);
        }

        #[test]
        fn interval_average_of_resampled_series(p in proptest::collection::vec(0.0f64..3000.0, 1..10)) {
            // Upsampling each hour to minutes leaves hourly averages unchanged.
            let fine: Vec<f64> = p.iter().flat_map(|&w| core::iter::repeat_n(w, 60)).collect();
            let a = interval_averages(&p, 3600.0, 3600.0).unwrap();
            let b = interval_averages(&fine, 60.0, 3600.0).unwrap();
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }
    }
}
