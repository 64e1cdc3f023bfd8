//! Firing rates, rasters and predicted-versus-observed regressions.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::afferent::AfferentType;
use crate::error::{Error, Result};
use crate::neural::SpikeTrain;

/// Slack for comparing window ends against the simulated duration.
const TIME_EPS_MS: f64 = 1e-9;

/// Spikes with `discard ≤ t < discard + window`.
pub fn count_spikes(spike_times_ms: &[f64], discard_ms: f64, window_ms: f64) -> usize {
    let end = discard_ms + window_ms;
    spike_times_ms
        .iter()
        .filter(|&&t| t >= discard_ms && t < end)
        .count()
}

/// Spikes per second over the half-open window `[discard, discard + window)`.
pub fn firing_rate(train: &SpikeTrain, discard_ms: f64, window_ms: f64) -> Result<f64> {
    let end = discard_ms + window_ms;
    let duration = train.duration_ms();
    if !(discard_ms >= 0.0 && window_ms > 0.0) || end > duration + TIME_EPS_MS {
        return Err(Error::WindowOverrun {
            start_ms: discard_ms,
            end_ms: end,
            duration_ms: duration,
        });
    }
    Ok(count_spikes(&train.spike_times_ms, discard_ms, window_ms) as f64 * 1000.0 / window_ms)
}

/// Smallest nonzero rate a window can report.
pub fn quantization_floor_ips(window_ms: f64) -> f64 {
    1000.0 / window_ms
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRecord {
    pub afferent: AfferentType,
    pub stimulus_id: String,
    pub freq_hz: f64,
    pub amplitude_um: f64,
    pub predicted_ips: f64,
    pub observed_ips: Option<f64>,
    pub window_ms: f64,
}

impl RateRecord {
    /// Nonzero prediction equal to one spike in the window.
    pub fn at_quantization_floor(&self) -> bool {
        self.predicted_ips > 0.0
            && (self.predicted_ips - quantization_floor_ips(self.window_ms)).abs() < 1e-9
    }
}

/// Rate table as `afferent,stimulus_id,freq_hz,amplitude_um,predicted_ips,observed_ips`.
/// Predictions at the quantization floor are listed in a trailing comment.
pub fn rates_csv(records: &[RateRecord]) -> String {
    let mut out =
        String::from("afferent,stimulus_id,freq_hz,amplitude_um,predicted_ips,observed_ips\n");
    for r in records {
        let observed = r.observed_ips.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.afferent, r.stimulus_id, r.freq_hz, r.amplitude_um, r.predicted_ips, observed
        );
    }
    let floor: Vec<String> = records
        .iter()
        .filter(|r| r.at_quantization_floor())
        .map(|r| format!("{}:{}", r.afferent, r.stimulus_id))
        .collect();
    if !floor.is_empty() {
        let _ = writeln!(
            out,
            "# at quantization floor (one spike per window): {}",
            floor.join(" ")
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Two-sided, for slope ≠ 0.
    pub p_value: f64,
    pub n: usize,
}

/// Least-squares line `predicted = slope·observed + intercept` over
/// `(observed, predicted)` pairs.
pub fn regression(pairs: &[(f64, f64)]) -> Result<RegressionReport> {
    let n = pairs.len();
    if n < 3 {
        return Err(Error::DegenerateRegression(format!(
            "need at least 3 pairs, got {n}"
        )));
    }
    if pairs.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::DegenerateRegression("non-finite value".into()));
    }
    let nf = n as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateRegression(
            "all observed values are equal".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };

    let df = nf - 2.0;
    let p_value = if r_squared >= 1.0 {
        0.0
    } else if syy == 0.0 {
        1.0
    } else {
        let t = (r_squared * df / (1.0 - r_squared)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df >= 1");
        (2.0 * dist.sf(t)).min(1.0)
    };
    Ok(RegressionReport {
        slope,
        intercept,
        r_squared,
        p_value,
        n,
    })
}

/// `(trial, t_ms)` rows sorted by trial, then time.
pub fn raster(trains: &[SpikeTrain]) -> Vec<(usize, f64)> {
    let mut rows: Vec<(usize, f64)> = trains
        .iter()
        .enumerate()
        .flat_map(|(i, t)| t.spike_times_ms.iter().map(move |&s| (i, s)))
        .collect();
    rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    rows
}

pub fn raster_csv(rows: &[(usize, f64)]) -> String {
    let mut out = String::from("trial,t_ms\n");
    for (trial, t) in rows {
        let _ = writeln!(out, "{trial},{t}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn train(spikes: &[f64], duration_ms: f64) -> SpikeTrain {
        SpikeTrain {
            dt_ms: 0.5,
            spike_times_ms: spikes.to_vec(),
            membrane_mv: vec![-65.0; (duration_ms / 0.5) as usize + 1],
        }
    }

    #[test]
    fn window_is_half_open() {
        let t = train(&[100.0, 150.0, 200.0], 250.0);
        assert_eq!(firing_rate(&t, 100.0, 100.0).unwrap(), 20.0);
    }

    #[test]
    fn overrun_rejected() {
        let t = train(&[], 250.0);
        assert!(matches!(
            firing_rate(&t, 100.0, 245.0),
            Err(Error::WindowOverrun { .. })
        ));
    }

    #[test]
    fn affine_data_fits_exactly() {
        let pairs: Vec<(f64, f64)> = (0..6).map(|i| (i as f64, 2.0 * i as f64 + 3.0)).collect();
        let r = regression(&pairs).unwrap();
        assert!((r.slope - 2.0).abs() < 1e-12 && (r.intercept - 3.0).abs() < 1e-12);
        assert_eq!(r.r_squared, 1.0);
        assert_eq!(r.p_value, 0.0);
    }

    #[test]
    fn constant_observed_is_degenerate() {
        assert!(regression(&[(1.0, 2.0), (1.0, 3.0), (1.0, 4.0)]).is_err());
    }

    #[test]
    fn raster_orders_by_trial_then_time() {
        let rows = raster(&[
            train(&[5.0, 1.0], 10.0),
            train(&[], 10.0),
            train(&[2.0], 10.0),
        ]);
        assert_eq!(rows, vec![(0, 1.0), (0, 5.0), (2, 2.0)]);
    }
}
