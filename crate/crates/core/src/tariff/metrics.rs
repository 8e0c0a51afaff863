use serde::{Deserialize, Serialize};

use super::TariffError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatteningMetrics {
    pub peak_reduction_w: f64,
    /// var(net) / var(base); 1 when the base is itself flat.
    pub variance_ratio: f64,
    pub load_factor_before: f64,
    pub load_factor_after: f64,
}

fn mean(s: &[f64]) -> f64 {
    s.iter().sum::<f64>() / s.len() as f64
}

fn variance(s: &[f64]) -> f64 {
    let m = mean(s);
    s.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / s.len() as f64
}

fn max(s: &[f64]) -> f64 {
    s.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn load_factor(s: &[f64]) -> f64 {
    let m = max(s);
    if m > 0.0 {
        mean(s) / m
    } else {
        0.0
    }
}

pub fn flattening_metrics(base: &[f64], net: &[f64]) -> Result<FlatteningMetrics, TariffError> {
    if base.len() != net.len() {
        return Err(TariffError::LengthMismatch(base.len(), net.len()));
    }
    if base.is_empty() {
        return Err(TariffError::ShortSeries);
    }
    let vb = variance(base);
    let vn = variance(net);
    let variance_ratio = if vb > 0.0 {
        vn / vb
    } else if vn > 0.0 {
        f64::INFINITY
    } else {
        1.0
    };
    Ok(FlatteningMetrics {
        peak_reduction_w: max(base) - max(net),
        variance_ratio,
        load_factor_before: load_factor(base),
        load_factor_after: load_factor(net),
    })
}
