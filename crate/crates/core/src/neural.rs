//! Afferent neural stage: stress filtering, saturating stress-to-drive
//! transforms and a leaky integrate-and-fire membrane.
//!
//! The SA chain averages |σ| and |σ′| over short windows, RA takes the
//! absolute first difference of σ′ and PC that of σ″. Each filtered signal
//! `x` enters the membrane as `α′·x/(a + x)` in mV/ms.

use serde::{Deserialize, Serialize};

use crate::afferent::AfferentType;
use crate::error::{Error, Result};
use crate::fem::StressTrace;

/// Membrane update scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// `u += dt·(−(u − u_rest)/τ_m + I)`.
    #[default]
    Euler,
    /// Exact solution for input held constant over each step.
    Exponential,
}

/// Per-afferent-type constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AfferentParams {
    pub afferent: AfferentType,
    pub tau_m_ms: f64,
    /// Half-saturation constants: SA `[a1 (Pa), a2 (Pa/ms)]`, RA
    /// `[a3 (Pa/ms)]`, PC `[a4 (Pa/ms²)]`.
    pub half_saturation: Vec<f64>,
    /// Saturated drive per term, mV/ms.
    pub alpha_prime: f64,
    pub threshold_mv: f64,
    pub u_rest_mv: f64,
    pub u_reset_mv: f64,
    pub tau_r_ms: f64,
    /// SA averaging widths `[m1, m2, m3, m4]`; σ uses samples `t−m2 ..= t+m1`
    /// and σ′ uses `t−m4 ..= t+m3`.
    #[serde(default = "default_widths")]
    pub filter_widths: [usize; 4],
    #[serde(default)]
    pub integrator: Integrator,
}

fn default_widths() -> [usize; 4] {
    [9, 9, 9, 8]
}

impl AfferentParams {
    /// Shipped fitted values for each afferent type.
    pub fn table2(afferent: AfferentType) -> AfferentParams {
        let (tau_m_ms, half_saturation, alpha_prime, threshold_mv, tau_r_ms) = match afferent {
            AfferentType::SA => (32.14, vec![1926.32, 9850.98], 1.79, -50.0, 1.0),
            AfferentType::RA => (456.70, vec![17191.87], 10.23, -55.0, 0.5),
            AfferentType::PC => (639.85, vec![16.34], 4.14, -55.0, 0.5),
        };
        AfferentParams {
            afferent,
            tau_m_ms,
            half_saturation,
            alpha_prime,
            threshold_mv,
            u_rest_mv: -65.0,
            u_reset_mv: -65.0,
            tau_r_ms,
            filter_widths: default_widths(),
            integrator: Integrator::Euler,
        }
    }

    pub fn saturation_terms(afferent: AfferentType) -> usize {
        match afferent {
            AfferentType::SA => 2,
            AfferentType::RA | AfferentType::PC => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.tau_m_ms) {
            return Err(Error::validation("tau_m_ms", "must be finite and > 0"));
        }
        let terms = Self::saturation_terms(self.afferent);
        if self.half_saturation.len() != terms {
            return Err(Error::validation(
                "half_saturation",
                format!(
                    "{} afferents take {terms} constant(s), got {}",
                    self.afferent,
                    self.half_saturation.len()
                ),
            ));
        }
        if !self.half_saturation.iter().all(|&a| positive(a)) {
            return Err(Error::validation(
                "half_saturation",
                "all constants must be finite and > 0",
            ));
        }
        if !positive(self.alpha_prime) {
            return Err(Error::validation("alpha_prime", "must be finite and > 0"));
        }
        if !(self.tau_r_ms.is_finite() && self.tau_r_ms >= 0.0) {
            return Err(Error::validation("tau_r_ms", "must be finite and >= 0"));
        }
        if !(self.u_reset_mv <= self.u_rest_mv && self.u_rest_mv < self.threshold_mv) {
            return Err(Error::validation(
                "threshold_mv",
                "need u_reset <= u_rest < threshold",
            ));
        }
        Ok(())
    }

    fn expect(&self, afferent: AfferentType) -> Result<()> {
        if self.afferent != afferent {
            return Err(Error::AfferentMismatch {
                expected: afferent.to_string(),
                got: self.afferent.to_string(),
            });
        }
        Ok(())
    }
}

/// Backward difference `(x[k] − x[k−1])/dt` with `d[0] = 0`.
pub fn derivative(trace: &[f64], dt_ms: f64) -> Result<Vec<f64>> {
    if trace.len() < 2 {
        return Err(Error::TraceTooShort {
            needed: 2,
            len: trace.len(),
        });
    }
    let mut d = Vec::with_capacity(trace.len());
    d.push(0.0);
    d.extend(trace.windows(2).map(|w| (w[1] - w[0]) / dt_ms));
    Ok(d)
}

/// `y[t] = Σ_{n=−lag}^{lead} |x[t+n]| / (lead + lag + 1)`, zero outside
/// the trace.
pub fn moving_average_abs(trace: &[f64], lead: usize, lag: usize) -> Vec<f64> {
    let n = trace.len();
    let width = (lead + lag + 1) as f64;
    let abs: Vec<f64> = trace.iter().map(|v| v.abs()).collect();
    // Direct sums rather than a running total: no drift on long traces.
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        let lo = t.saturating_sub(lag);
        let hi = (t + lead).min(n - 1);
        out.push(abs[lo..=hi].iter().sum::<f64>() / width);
    }
    out
}

/// `y[t] = |x[t] − x[t−1]|`, `y[0] = 0`.
pub fn abs_difference_filter(trace: &[f64]) -> Result<Vec<f64>> {
    if trace.len() < 2 {
        return Err(Error::TraceTooShort {
            needed: 2,
            len: trace.len(),
        });
    }
    let mut y = Vec::with_capacity(trace.len());
    y.push(0.0);
    y.extend(trace.windows(2).map(|w| (w[1] - w[0]).abs()));
    Ok(y)
}

/// Filtered stress channels feeding one afferent's saturation terms.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredStress {
    pub afferent: AfferentType,
    pub dt_ms: f64,
    /// SA: `[avg|σ|, avg|σ′|]`; RA: `[|Δσ′|]`; PC: `[|Δσ″|]`.
    pub channels: Vec<Vec<f64>>,
}

pub fn filter_stress(
    stress: &[f64],
    dt_ms: f64,
    params: &AfferentParams,
) -> Result<FilteredStress> {
    let channels = match params.afferent {
        AfferentType::SA => {
            let [m1, m2, m3, m4] = params.filter_widths;
            let d1 = derivative(stress, dt_ms)?;
            vec![
                moving_average_abs(stress, m1, m2),
                moving_average_abs(&d1, m3, m4),
            ]
        }
        AfferentType::RA => vec![abs_difference_filter(&derivative(stress, dt_ms)?)?],
        AfferentType::PC => {
            let d2 = derivative(&derivative(stress, dt_ms)?, dt_ms)?;
            vec![abs_difference_filter(&d2)?]
        }
    };
    Ok(FilteredStress {
        afferent: params.afferent,
        dt_ms,
        channels,
    })
}

/// Membrane drive `I(t)·R_m/τ_m` in mV/ms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveTrace {
    pub dt_ms: f64,
    pub values: Vec<f64>,
}

/// `x/(a + x)` for `x ≥ 0`.
pub fn saturation(x: f64, a: f64) -> f64 {
    let x = x.abs();
    if x.is_infinite() {
        return 1.0;
    }
    x / (a + x)
}

pub fn stress_to_drive(inputs: &FilteredStress, params: &AfferentParams) -> Result<DriveTrace> {
    params.expect(inputs.afferent)?;
    let terms = AfferentParams::saturation_terms(params.afferent);
    if inputs.channels.len() != terms || params.half_saturation.len() != terms {
        return Err(Error::AfferentMismatch {
            expected: format!("{} with {terms} channel(s)", params.afferent),
            got: format!("{} channel(s)", inputs.channels.len()),
        });
    }
    let n = inputs.channels[0].len();
    if inputs.channels.iter().any(|c| c.len() != n) {
        return Err(Error::validation("channels", "channel lengths differ"));
    }
    let values = (0..n)
        .map(|t| {
            let s: f64 = inputs
                .channels
                .iter()
                .zip(&params.half_saturation)
                .map(|(c, &a)| saturation(c[t], a))
                .sum();
            params.alpha_prime * s
        })
        .collect();
    Ok(DriveTrace {
        dt_ms: inputs.dt_ms,
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeTrain {
    pub dt_ms: f64,
    pub spike_times_ms: Vec<f64>,
    pub membrane_mv: Vec<f64>,
}

impl SpikeTrain {
    pub fn duration_ms(&self) -> f64 {
        self.membrane_mv.len().saturating_sub(1) as f64 * self.dt_ms
    }

    pub fn membrane_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("t_ms,u_mv\n");
        for (k, u) in self.membrane_mv.iter().enumerate() {
            let _ = writeln!(out, "{},{}", k as f64 * self.dt_ms, u);
        }
        out
    }
}

/// Integrates the membrane from `u_rest`. A spike is recorded when the
/// updated potential reaches threshold; the potential resets and the drive
/// is withheld for `⌈τ_r/dt⌉` steps while the leak continues.
pub fn simulate_lif(drive: &DriveTrace, params: &AfferentParams) -> Result<SpikeTrain> {
    params.validate()?;
    let dt = drive.dt_ms;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::validation("dt_ms", "must be finite and > 0"));
    }
    if let Some(k) = drive.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { step: k });
    }
    let n = drive.values.len();
    let tau = params.tau_m_ms;
    let refractory_steps = (params.tau_r_ms / dt - 1e-9).ceil().max(0.0) as usize;
    let decay = (-dt / tau).exp();

    let mut membrane = Vec::with_capacity(n);
    let mut spikes = Vec::new();
    let mut u = params.u_rest_mv;
    let mut blocked = 0usize;
    if n > 0 {
        membrane.push(u);
    }
    for k in 0..n.saturating_sub(1) {
        let input = if blocked > 0 {
            blocked -= 1;
            0.0
        } else {
            drive.values[k]
        };
        u = match params.integrator {
            Integrator::Euler => u + dt * (-(u - params.u_rest_mv) / tau + input),
            Integrator::Exponential => {
                let target = params.u_rest_mv + tau * input;
                target + (u - target) * decay
            }
        };
        if u >= params.threshold_mv {
            spikes.push((k + 1) as f64 * dt);
            u = params.u_reset_mv;
            blocked = refractory_steps;
        }
        membrane.push(u);
    }
    Ok(SpikeTrain {
        dt_ms: dt,
        spike_times_ms: spikes,
        membrane_mv: membrane,
    })
}

/// Full chain from a stress trace to spikes.
pub fn run_afferent(stress: &StressTrace, params: &AfferentParams) -> Result<SpikeTrain> {
    params.expect(stress.afferent)?;
    run_chain(&stress.values, stress.dt_ms, params)
}

/// [`run_afferent`] on raw stress samples (Pa) at step `dt_ms`.
pub fn run_chain(stress: &[f64], dt_ms: f64, params: &AfferentParams) -> Result<SpikeTrain> {
    params.validate()?;
    let filtered = filter_stress(stress, dt_ms, params)?;
    let drive = stress_to_drive(&filtered, params)?;
    simulate_lif(&drive, params)
}
