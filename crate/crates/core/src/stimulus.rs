//! Indenter displacement traces: sinusoids, diharmonics and band-pass noise.
//!
//! Traces are in mm and sampled at `k·dt` for `k = 0..=duration/dt`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::DEFAULT_DT_MS;

const UM_PER_MM: f64 = 1000.0;

/// Default per-edge Butterworth order of the noise band-pass.
pub const DEFAULT_NOISE_ORDER: usize = 4;

/// Transient discarded before counting spikes.
pub const DEFAULT_DISCARD_MS: f64 = 100.0;

fn nyquist_hz(dt_ms: f64) -> f64 {
    500.0 / dt_ms
}

fn sample_count(duration_ms: f64, dt_ms: f64) -> Result<usize> {
    if !(dt_ms.is_finite() && dt_ms > 0.0) {
        return Err(Error::validation("dt_ms", "must be finite and > 0"));
    }
    if !(duration_ms.is_finite() && duration_ms > 0.0) {
        return Err(Error::validation("duration_ms", "must be finite and > 0"));
    }
    Ok((duration_ms / dt_ms).round() as usize + 1)
}

fn check_frequency(freq_hz: f64, dt_ms: f64) -> Result<()> {
    let nyq = nyquist_hz(dt_ms);
    if !(freq_hz.is_finite() && freq_hz >= 0.0) {
        return Err(Error::validation("freq_hz", "must be finite and >= 0"));
    }
    if freq_hz >= nyq {
        return Err(Error::Nyquist {
            freq_hz,
            nyquist_hz: nyq,
        });
    }
    Ok(())
}

fn check_amplitude(field: &str, amplitude_um: f64) -> Result<()> {
    if !(amplitude_um.is_finite() && amplitude_um >= 0.0) {
        return Err(Error::validation(field, "must be finite and >= 0"));
    }
    Ok(())
}

/// `A·sin(2πf·k·dt)`, amplitude in μm, output in mm.
pub fn sinusoid(freq_hz: f64, amplitude_um: f64, duration_ms: f64, dt_ms: f64) -> Result<Vec<f64>> {
    let n = sample_count(duration_ms, dt_ms)?;
    check_frequency(freq_hz, dt_ms)?;
    check_amplitude("amplitude_um", amplitude_um)?;
    let a = amplitude_um / UM_PER_MM;
    let w = 2.0 * PI * freq_hz * dt_ms / 1000.0;
    Ok((0..n).map(|k| a * (w * k as f64).sin()).collect())
}

pub fn diharmonic(
    f1_hz: f64,
    a1_um: f64,
    f2_hz: f64,
    a2_um: f64,
    duration_ms: f64,
    dt_ms: f64,
) -> Result<Vec<f64>> {
    let first = sinusoid(f1_hz, a1_um, duration_ms, dt_ms)?;
    let second = sinusoid(f2_hz, a2_um, duration_ms, dt_ms)?;
    Ok(first.iter().zip(&second).map(|(x, y)| x + y).collect())
}

/// One biquad `[b0, b1, b2, a0, a1, a2]` with `a0 = 1`.
pub type Section = [f64; 6];

/// Digital Butterworth band-pass as a cascade of a high-pass at `low_hz` and
/// a low-pass at `high_hz`, each of order `order`, by the bilinear transform
/// with prewarped cutoffs.
pub fn butterworth_bandpass(
    low_hz: f64,
    high_hz: f64,
    order: usize,
    dt_ms: f64,
) -> Result<Vec<Section>> {
    let nyq = nyquist_hz(dt_ms);
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < nyq) {
        return Err(Error::InvalidBand {
            low_hz,
            high_hz,
            nyquist_hz: nyq,
        });
    }
    if order == 0 {
        return Err(Error::validation("order", "must be >= 1"));
    }
    let fs = 1000.0 / dt_ms;
    let mut sections = butterworth_sections(low_hz, fs, order, true);
    sections.extend(butterworth_sections(high_hz, fs, order, false));
    Ok(sections)
}

fn butterworth_sections(cutoff_hz: f64, fs: f64, order: usize, highpass: bool) -> Vec<Section> {
    let k = (PI * cutoff_hz / fs).tan();
    let mut out = Vec::new();
    // Conjugate pole pairs of the unit-cutoff analog prototype; `a` is
    // `-2·Re(p)` of each pair.
    for m in 0..order / 2 {
        let theta = PI * (2 * m + 1 + order) as f64 / (2 * order) as f64;
        let a = -2.0 * theta.cos();
        let d0 = 1.0 + a * k + k * k;
        let d1 = 2.0 * (k * k - 1.0);
        let d2 = 1.0 - a * k + k * k;
        let num = if highpass {
            [1.0, -2.0, 1.0]
        } else {
            [k * k, 2.0 * k * k, k * k]
        };
        out.push([num[0] / d0, num[1] / d0, num[2] / d0, 1.0, d1 / d0, d2 / d0]);
    }
    if order % 2 == 1 {
        let d0 = 1.0 + k;
        let num = if highpass { [1.0, -1.0] } else { [k, k] };
        out.push([num[0] / d0, num[1] / d0, 0.0, 1.0, (k - 1.0) / d0, 0.0]);
    }
    out
}

/// Causal filtering in transposed direct form II, starting from the given
/// per-section states.
fn sosfilt(sos: &[Section], x: &mut [f64], mut zi: Vec<[f64; 2]>) {
    for v in x.iter_mut() {
        let mut s = *v;
        for (sec, z) in sos.iter().zip(zi.iter_mut()) {
            let y = sec[0] * s + z[0];
            z[0] = sec[1] * s - sec[4] * y + z[1];
            z[1] = sec[2] * s - sec[5] * y;
            s = y;
        }
        *v = s;
    }
}

/// Steady-state section states for a unit step input.
fn sosfilt_zi(sos: &[Section]) -> Vec<[f64; 2]> {
    let mut scale = 1.0;
    sos.iter()
        .map(|s| {
            let (b0, b1, b2, a1, a2) = (s[0], s[1], s[2], s[4], s[5]);
            // (I - Aᵀ) z = b[1:] - a[1:]·b0 with A the companion matrix.
            let r0 = b1 - a1 * b0;
            let r1 = b2 - a2 * b0;
            let det = (1.0 + a1) + a2;
            let z0 = (r0 + r1) / det;
            let z1 = r1 - a2 * z0;
            let zi = [z0 * scale, z1 * scale];
            scale *= (b0 + b1 + b2) / (1.0 + a1 + a2);
            zi
        })
        .collect()
}

/// Zero-phase forward-backward filtering with odd extension at both ends
/// and steady-state initial conditions.
pub fn sosfiltfilt(sos: &[Section], x: &[f64]) -> Result<Vec<f64>> {
    let trailing_zeros = sos
        .iter()
        .filter(|s| s[2] == 0.0)
        .count()
        .min(sos.iter().filter(|s| s[5] == 0.0).count());
    let pad = 3 * (2 * sos.len() + 1 - trailing_zeros);
    if x.len() <= pad {
        return Err(Error::TraceTooShort {
            needed: pad + 1,
            len: x.len(),
        });
    }
    let n = x.len();
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let zi = sosfilt_zi(sos);
    let scaled = |x0: f64| {
        zi.iter()
            .map(|z| [z[0] * x0, z[1] * x0])
            .collect::<Vec<_>>()
    };
    let x0 = ext[0];
    sosfilt(sos, &mut ext, scaled(x0));
    ext.reverse();
    let y0 = ext[0];
    sosfilt(sos, &mut ext, scaled(y0));
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

/// Seeded Gaussian noise, band-pass filtered with zero phase, mean removed
/// and rescaled so its sample RMS is exactly `rms_um` (output in mm).
pub fn bandpass_noise(
    low_hz: f64,
    high_hz: f64,
    rms_um: f64,
    duration_ms: f64,
    dt_ms: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    bandpass_noise_with_order(
        low_hz,
        high_hz,
        rms_um,
        duration_ms,
        dt_ms,
        seed,
        DEFAULT_NOISE_ORDER,
    )
}

pub fn bandpass_noise_with_order(
    low_hz: f64,
    high_hz: f64,
    rms_um: f64,
    duration_ms: f64,
    dt_ms: f64,
    seed: u64,
    order: usize,
) -> Result<Vec<f64>> {
    let n = sample_count(duration_ms, dt_ms)?;
    check_amplitude("rms_um", rms_um)?;
    let sos = butterworth_bandpass(low_hz, high_hz, order, dt_ms)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let white: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut y = sosfiltfilt(&sos, &white)?;
    let mean = y.iter().sum::<f64>() / n as f64;
    y.iter_mut().for_each(|v| *v -= mean);
    let rms = (y.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms_um == 0.0 {
        return Ok(vec![0.0; n]);
    }
    if !(rms > 0.0) {
        return Err(Error::validation("rms_um", "filtered noise has zero power"));
    }
    let gain = rms_um / UM_PER_MM / rms;
    Ok(y.into_iter().map(|v| v * gain).collect())
}

/// Waveform-specific stimulus parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StimulusKind {
    Sinusoid {
        freq_hz: f64,
        amplitude_um: f64,
    },
    Diharmonic {
        f1_hz: f64,
        a1_um: f64,
        f2_hz: f64,
        a2_um: f64,
    },
    BandpassNoise {
        low_hz: f64,
        high_hz: f64,
        rms_um: f64,
        seed: u64,
        #[serde(default = "default_order")]
        order: usize,
    },
}

fn default_order() -> usize {
    DEFAULT_NOISE_ORDER
}

fn default_dt() -> f64 {
    DEFAULT_DT_MS
}

fn default_discard() -> f64 {
    DEFAULT_DISCARD_MS
}

/// One stimulus of a protocol, with the spike-counting window used for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusSpec {
    pub id: String,
    #[serde(flatten)]
    pub kind: StimulusKind,
    pub duration_ms: f64,
    #[serde(default = "default_dt")]
    pub dt_ms: f64,
    #[serde(default = "default_discard")]
    pub discard_ms: f64,
    /// Counting window after the discard; defaults to the rest of the trace.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_ms: Option<f64>,
}

impl StimulusSpec {
    pub fn window_ms(&self) -> f64 {
        self.window_ms.unwrap_or(self.duration_ms - self.discard_ms)
    }

    /// Representative (frequency, amplitude) of the stimulus: the sinusoid's
    /// own values, the first diharmonic component, or the noise band's upper
    /// cutoff and RMS.
    pub fn nominal(&self) -> (f64, f64) {
        match self.kind {
            StimulusKind::Sinusoid {
                freq_hz,
                amplitude_um,
            } => (freq_hz, amplitude_um),
            StimulusKind::Diharmonic { f1_hz, a1_um, .. } => (f1_hz, a1_um),
            StimulusKind::BandpassNoise {
                high_hz, rms_um, ..
            } => (high_hz, rms_um),
        }
    }

    pub fn validate(&self) -> Result<()> {
        sample_count(self.duration_ms, self.dt_ms)?;
        let w = self.window_ms();
        if !(self.discard_ms >= 0.0 && w > 0.0 && self.discard_ms + w <= self.duration_ms + 1e-9) {
            return Err(Error::WindowOverrun {
                start_ms: self.discard_ms,
                end_ms: self.discard_ms + w,
                duration_ms: self.duration_ms,
            });
        }
        Ok(())
    }

    /// Displacement trace in mm. `seed_offset` shifts the noise seed so a
    /// run-level seed can vary noise realizations.
    pub fn generate(&self, seed_offset: u64) -> Result<Vec<f64>> {
        self.validate()?;
        let (d, dt) = (self.duration_ms, self.dt_ms);
        match self.kind {
            StimulusKind::Sinusoid {
                freq_hz,
                amplitude_um,
            } => sinusoid(freq_hz, amplitude_um, d, dt),
            StimulusKind::Diharmonic {
                f1_hz,
                a1_um,
                f2_hz,
                a2_um,
            } => diharmonic(f1_hz, a1_um, f2_hz, a2_um, d, dt),
            StimulusKind::BandpassNoise {
                low_hz,
                high_hz,
                rms_um,
                seed,
                order,
            } => bandpass_noise_with_order(
                low_hz,
                high_hz,
                rms_um,
                d,
                dt,
                seed.wrapping_add(seed_offset),
                order,
            ),
        }
    }
}

/// Trace export as `t_ms,displacement_mm`.
pub fn trace_csv(trace: &[f64], dt_ms: f64) -> String {
    let mut out = String::from("t_ms,displacement_mm\n");
    for (k, v) in trace.iter().enumerate() {
        let _ = writeln!(out, "{},{}", k as f64 * dt_ms, v);
    }
    out
}

/// Named, ordered list of stimuli.
#[derive(Debug, Clone, PartialEq)]
pub struct Protocol {
    pub name: String,
    pub stimuli: Vec<StimulusSpec>,
}

const APPENDIX_A: &str = include_str!("../protocols/appendix_a.json");
const APPENDIX_B: &str = include_str!("../protocols/appendix_b.json");
const APPENDIX_C: &str = include_str!("../protocols/appendix_c.json");

impl Protocol {
    pub fn from_json(name: &str, text: &str) -> Result<Protocol> {
        let stimuli: Vec<StimulusSpec> = serde_json::from_str(text)?;
        if stimuli.is_empty() {
            return Err(Error::validation("protocol", "no stimuli"));
        }
        let mut ids = std::collections::BTreeSet::new();
        for s in &stimuli {
            s.validate()?;
            if !ids.insert(s.id.as_str()) {
                return Err(Error::validation(
                    "protocol",
                    format!("duplicate stimulus id `{}`", s.id),
                ));
            }
        }
        Ok(Protocol {
            name: name.to_string(),
            stimuli,
        })
    }

    /// Sinusoids used for fitting: 12 + 10 + 9 + 6 conditions.
    pub fn appendix_a() -> Protocol {
        Protocol::from_json("appendixA", APPENDIX_A).expect("bundled protocol parses")
    }

    /// Diharmonic validation stimuli.
    pub fn appendix_b() -> Protocol {
        Protocol::from_json("appendixB", APPENDIX_B).expect("bundled protocol parses")
    }

    /// Band-pass noise validation stimuli, one seed per (band, RMS) pair.
    pub fn appendix_c() -> Protocol {
        Protocol::from_json("appendixC", APPENDIX_C).expect("bundled protocol parses")
    }

    pub fn builtin(name: &str) -> Option<Protocol> {
        match name {
            "appendixA" => Some(Self::appendix_a()),
            "appendixB" => Some(Self::appendix_b()),
            "appendixC" => Some(Self::appendix_c()),
            _ => None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.stimuli).expect("stimuli serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sinusoid_starts_at_zero_and_peaks_at_amplitude() {
        let s = sinusoid(20.0, 250.0, 250.0, 0.5).unwrap();
        assert_eq!(s.len(), 501);
        assert_eq!(s[0], 0.0);
        let peak = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 0.25).abs() < 1e-12);
    }

    #[test]
    fn step_response_state_is_steady() {
        let sos = butterworth_bandpass(25.0, 250.0, 4, 0.5).unwrap();
        let mut x = vec![1.0; 50];
        sosfilt(&sos, &mut x, sosfilt_zi(&sos));
        // A band-pass has zero DC gain, so a settled unit step stays at 0.
        assert!(x.iter().all(|v| v.abs() < 1e-12), "{:?}", &x[..4]);
    }

    #[test]
    fn lowpass_section_has_unit_dc_gain() {
        for order in 1..=5 {
            let gain: f64 = butterworth_sections(100.0, 2000.0, order, false)
                .iter()
                .map(|s| (s[0] + s[1] + s[2]) / (1.0 + s[4] + s[5]))
                .product();
            assert!((gain - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn band_outside_nyquist_rejected() {
        assert!(matches!(
            butterworth_bandpass(25.0, 1000.0, 4, 0.5),
            Err(Error::InvalidBand { .. })
        ));
        assert!(matches!(
            sinusoid(1000.0, 1.0, 10.0, 0.5),
            Err(Error::Nyquist { .. })
        ));
    }

    #[test]
    fn bundled_protocols_have_expected_sizes() {
        assert_eq!(Protocol::appendix_a().stimuli.len(), 37);
        assert_eq!(Protocol::appendix_b().stimuli.len(), 20);
        assert_eq!(Protocol::appendix_c().stimuli.len(), 25);
    }
}
