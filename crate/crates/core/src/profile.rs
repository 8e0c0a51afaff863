//! Piecewise-constant household load profiles.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::SECONDS_PER_HOUR;

/// Hourly shape of a household day in watts, averaging exactly 1300 W:
/// a low night base, a breakfast bump at 07:00 and an evening peak
/// between 17:00 and 21:00.
const HOUSEHOLD_DAY_W: [f64; 24] = [
    675.0, 625.0, 575.0, 575.0, 625.0, 725.0, 975.0, 1475.0, 1375.0, 1175.0, 1075.0, 1075.0,
    1275.0, 1175.0, 1075.0, 1175.0, 1675.0, 2075.0, 2575.0, 2675.0, 2375.0, 1875.0, 1375.0, 925.0,
];
const HOUSEHOLD_DAY_MEAN_W: f64 = 1300.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileKind {
    Flat {
        watts: f64,
    },
    HouseholdDay {
        #[serde(default = "default_mean")]
        mean_w: f64,
    },
    /// `(start_s, watts)` steps; the first must start at 0.
    Custom {
        segments: Vec<(f64, f64)>,
    },
}

fn default_mean() -> f64 {
    HOUSEHOLD_DAY_MEAN_W
}

impl ProfileKind {
    /// Parameterless constructor by name, with default parameters.
    pub fn from_name(name: &str) -> Result<Self, ProfileError> {
        match name {
            "flat" => Ok(ProfileKind::Flat {
                watts: HOUSEHOLD_DAY_MEAN_W,
            }),
            "household_day" => Ok(ProfileKind::HouseholdDay {
                mean_w: HOUSEHOLD_DAY_MEAN_W,
            }),
            other => Err(ProfileError::UnknownKind(other.into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProfileError {
    #[error("unknown load profile kind `{0}`")]
    UnknownKind(alloc::string::String),
    #[error("profile duration must be positive, got {0}")]
    Duration(f64),
    #[error("load power must be a non-negative number, got {0}")]
    Negative(f64),
    #[error("custom profile must start at t = 0")]
    Start,
    #[error("segment starts must strictly increase (segment {0})")]
    Order(usize),
    #[error("custom profile has no segments")]
    Empty,
}

/// Load demand as `(start_s, watts)` steps over `[0, duration)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadProfile {
    pub segments: Vec<(f64, f64)>,
    pub duration: f64,
}

impl LoadProfile {
    fn index_at(&self, t: f64) -> usize {
        match self.segments.partition_point(|&(s, _)| s <= t) {
            0 => 0,
            n => n - 1,
        }
    }

    pub fn power_at(&self, t: f64) -> f64 {
        self.segments[self.index_at(t)].1
    }

    /// First segment boundary strictly after `t`, if any before `duration`.
    pub fn next_change_after(&self, t: f64) -> Option<f64> {
        self.segments
            .get(self.index_at(t) + 1)
            .map(|&(s, _)| s)
            .filter(|&s| s > t && s < self.duration)
    }

    pub fn energy_wh(&self) -> f64 {
        let mut total = 0.0;
        for (i, &(start, w)) in self.segments.iter().enumerate() {
            let end = self
                .segments
                .get(i + 1)
                .map_or(self.duration, |s| s.0)
                .min(self.duration);
            if end > start {
                total += w * (end - start);
            }
        }
        total / SECONDS_PER_HOUR
    }

    pub fn mean_w(&self) -> f64 {
        self.energy_wh() * SECONDS_PER_HOUR / self.duration
    }

    /// Average power over consecutive `step_s` buckets from t = 0.
    pub fn sample(&self, step_s: f64) -> Vec<f64> {
        let n = libm::ceil(self.duration / step_s - 1e-9) as usize;
        (0..n)
            .map(|k| {
                let a = k as f64 * step_s;
                let b = (a + step_s).min(self.duration);
                self.average(a, b)
            })
            .collect()
    }

    fn average(&self, a: f64, b: f64) -> f64 {
        let mut t = a;
        let mut acc = 0.0;
        while t < b {
            let end = self.next_change_after(t).map_or(b, |c| c.min(b));
            acc += self.power_at(t) * (end - t);
            t = end;
        }
        acc / (b - a)
    }
}

pub fn make_load_profile(kind: &ProfileKind, duration: f64) -> Result<LoadProfile, ProfileError> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(ProfileError::Duration(duration));
    }
    let check = |w: f64| {
        if w >= 0.0 && w.is_finite() {
            Ok(w)
        } else {
            Err(ProfileError::Negative(w))
        }
    };
    let segments = match kind {
        ProfileKind::Flat { watts } => alloc::vec![(0.0, check(*watts)?)],
        ProfileKind::HouseholdDay { mean_w } => {
            let scale = check(*mean_w)? / HOUSEHOLD_DAY_MEAN_W;
            let mut segs = Vec::new();
            let mut start = 0.0;
            let mut hour = 0usize;
            while start < duration {
                segs.push((start, HOUSEHOLD_DAY_W[hour % 24] * scale));
                hour += 1;
                start = hour as f64 * SECONDS_PER_HOUR;
            }
            segs
        }
        ProfileKind::Custom { segments } => {
            let first = segments.first().ok_or(ProfileError::Empty)?;
            if first.0 != 0.0 {
                return Err(ProfileError::Start);
            }
            for (i, w) in segments.windows(2).enumerate() {
                if !(w[1].0 > w[0].0) {
                    return Err(ProfileError::Order(i + 1));
                }
            }
            for &(_, w) in segments {
                check(w)?;
            }
            segments.clone()
        }
    };
    Ok(LoadProfile { segments, duration })
}

#[cfg(test)]
mod tests {
    use super::*;

    const DAY_S: f64 = 86_400.0;

    #[test]
    fn flat_day_energy() {
        let p = make_load_profile(&ProfileKind::Flat { watts: 1300.0 }, DAY_S).unwrap();
        assert!((p.energy_wh() - 31_200.0).abs() < 1e-6);
    }

    #[test]
    fn household_day_mean() {
        let p =
            make_load_profile(&ProfileKind::from_name("household_day").unwrap(), DAY_S).unwrap();
        assert!((p.mean_w() - 1300.0).abs() <= 10.0);
        assert_eq!(p.segments.len(), 24);
        let half = make_load_profile(&ProfileKind::HouseholdDay { mean_w: 650.0 }, DAY_S).unwrap();
        assert!((half.mean_w() - 650.0).abs() < 1e-9);
    }

    #[test]
    fn custom_single_step() {
        let p = make_load_profile(
            &ProfileKind::Custom {
                segments: alloc::vec![(0.0, 0.0), (3600.0, 700.0)],
            },
            7200.0,
        )
        .unwrap();
        assert_eq!(p.segments.len(), 2);
        assert_eq!(p.power_at(3599.0), 0.0);
        assert_eq!(p.power_at(3600.0), 700.0);
        assert_eq!(p.next_change_after(10.0), Some(3600.0));
        assert_eq!(p.next_change_after(3600.0), None);
    }

    #[test]
    fn invalid_profiles() {
        assert!(matches!(
            ProfileKind::from_name("sawtooth"),
            Err(ProfileError::UnknownKind(_))
        ));
        let bad =
            |segments: Vec<(f64, f64)>| make_load_profile(&ProfileKind::Custom { segments }, 100.0);
        assert_eq!(bad(alloc::vec![(5.0, 1.0)]), Err(ProfileError::Start));
        assert_eq!(
            bad(alloc::vec![(0.0, 1.0), (0.0, 2.0)]),
            Err(ProfileError::Order(1))
        );
        assert_eq!(
            bad(alloc::vec![(0.0, -1.0)]),
            Err(ProfileError::Negative(-1.0))
        );
        assert_eq!(bad(alloc::vec![]), Err(ProfileError::Empty));
    }

    #[test]
    fn bucket_averages() {
        let p = make_load_profile(
            &ProfileKind::Custom {
                segments: alloc::vec![(0.0, 100.0), (30.0, 200.0)],
            },
            120.0,
        )
        .unwrap();
        assert_eq!(p.sample(60.0), alloc::vec![150.0, 200.0]);
    }
}
