//! Recording-level features: frontal alpha asymmetry, the 4/14 Hz drowsiness
//! index and the two biometric fingerprints.

use serde::{Deserialize, Serialize};

use super::ar::yule_walker;
use super::spectral::{band_power, psd_welch_default, FrequencyBand, PsdEstimate};
use super::DspError;
use crate::recording::EegRecording;

/// Band powers below this (µV²) are treated as degenerate.
pub const POWER_FLOOR: f64 = 1e-12;
/// Added to the 14 Hz power before dividing.
pub const DROWSINESS_EPSILON: f64 = 1e-9;
pub const AR_ORDER_DEFAULT: usize = 6;
pub const ALPHA_SUBBAND_DEFAULT: usize = 5;

fn channel(rec: &EegRecording, label: &str) -> Result<Vec<f64>, DspError> {
    rec.channel_f64(label).ok_or_else(|| DspError::MissingChannel(label.to_string()))
}

fn channel_psd(rec: &EegRecording, label: &str) -> Result<PsdEstimate, DspError> {
    psd_welch_default(&channel(rec, label)?, rec.sample_rate_hz())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaAsymmetry {
    pub left_power: f64,
    pub right_power: f64,
    /// ln(right) − ln(left)
    pub asymmetry: f64,
}

pub fn alpha_asymmetry(rec: &EegRecording, left: &str, right: &str) -> Result<AlphaAsymmetry, DspError> {
    let left_psd = channel_psd(rec, left)?;
    let right_psd = channel_psd(rec, right)?;
    let left_power = band_power(&left_psd, &FrequencyBand::alpha())?;
    let right_power = band_power(&right_psd, &FrequencyBand::alpha())?;
    for power in [left_power, right_power] {
        if power < POWER_FLOOR {
            return Err(DspError::DegeneratePower { power });
        }
    }
    Ok(AlphaAsymmetry {
        left_power,
        right_power,
        asymmetry: right_power.ln() - left_power.ln(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrowsinessIndex {
    pub p4: f64,
    pub p14: f64,
    pub ratio: f64,
}

/// Power in 1 Hz bands centred on 4 and 14 Hz and their ratio.
pub fn drowsiness_index(rec: &EegRecording, label: &str) -> Result<DrowsinessIndex, DspError> {
    if rec.sample_rate_hz() < 32.0 {
        return Err(DspError::InvalidParameter(format!(
            "drowsiness index needs a sample rate of at least 32 Hz, got {}",
            rec.sample_rate_hz()
        )));
    }
    let psd = channel_psd(rec, label)?;
    let p4 = band_power(&psd, &FrequencyBand { name: "p4".into(), low_hz: 3.5, high_hz: 4.5 })?;
    let p14 = band_power(&psd, &FrequencyBand { name: "p14".into(), low_hz: 13.5, high_hz: 14.5 })?;
    Ok(DrowsinessIndex { p4, p14, ratio: p4 / (p14 + DROWSINESS_EPSILON) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FingerprintKind {
    ArCoeffs,
    AlphaSubbands,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub subject_id: String,
    pub kind: FingerprintKind,
    pub vector: Vec<f64>,
    pub channel_set: Vec<String>,
}

/// Per-channel Yule–Walker AR(`order`) coefficients, concatenated
/// channel-major. `subject_id` is taken from the recording's user.
pub fn ar_fingerprint(rec: &EegRecording, order: usize) -> Result<Fingerprint, DspError> {
    if order == 0 {
        return Err(DspError::InvalidParameter("AR order must be at least 1".into()));
    }
    if rec.sample_count() < 10 * order {
        return Err(DspError::SignalTooShort { needed: 10 * order, got: rec.sample_count() });
    }
    let mut vector = Vec::with_capacity(order * rec.channel_count());
    for label in rec.channels() {
        let x = channel(rec, label.as_str())?;
        let model = yule_walker(&x, order)
            .ok_or_else(|| DspError::SingularAutocovariance { channel: label.to_string() })?;
        vector.extend(model.coefficients);
    }
    Ok(Fingerprint {
        subject_id: rec.metadata().user_id.clone(),
        kind: FingerprintKind::ArCoeffs,
        vector,
        channel_set: rec.channels().iter().map(|c| c.to_string()).collect(),
    })
}

/// Normalized power in `subbands` equal-width slices of 8–13 Hz.
///
/// Slices partition the PSD bins half-open, `[lo, hi)`, so a bin sitting on a
/// slice edge is counted once, in the upper slice.
pub fn alpha_subband_powers(psd: &PsdEstimate, subbands: usize) -> Result<Vec<f64>, DspError> {
    if subbands < 2 {
        return Err(DspError::InvalidParameter(format!("need at least 2 subbands, got {subbands}")));
    }
    let alpha = FrequencyBand::alpha();
    if psd.max_frequency() < alpha.high_hz {
        return Err(DspError::BandOutOfRange {
            low_hz: alpha.low_hz,
            high_hz: alpha.high_hz,
            max_hz: psd.max_frequency(),
        });
    }
    let width = (alpha.high_hz - alpha.low_hz) / subbands as f64;
    let tol = 1e-9 * psd.resolution_hz;
    let mut powers = vec![0.0f64; subbands];
    for (&f, &p) in psd.frequencies_hz.iter().zip(&psd.power) {
        if f < alpha.low_hz - tol || f >= alpha.high_hz - tol {
            continue;
        }
        let slot = (((f - alpha.low_hz + tol) / width).floor() as usize).min(subbands - 1);
        powers[slot] += p * psd.resolution_hz;
    }
    let total: f64 = powers.iter().sum();
    if total < POWER_FLOOR {
        return Err(DspError::DegeneratePower { power: total });
    }
    Ok(powers.into_iter().map(|p| p / total).collect())
}

pub fn alpha_subband_fingerprint(rec: &EegRecording, subbands: usize) -> Result<Fingerprint, DspError> {
    let mut vector = Vec::with_capacity(subbands * rec.channel_count());
    for label in rec.channels() {
        vector.extend(alpha_subband_powers(&channel_psd(rec, label.as_str())?, subbands)?);
    }
    Ok(Fingerprint {
        subject_id: rec.metadata().user_id.clone(),
        kind: FingerprintKind::AlphaSubbands,
        vector,
        channel_set: rec.channels().iter().map(|c| c.to_string()).collect(),
    })
}
