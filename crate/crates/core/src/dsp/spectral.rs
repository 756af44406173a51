//! Welch PSD, band power and spectrogram.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::DspError;

pub const WELCH_DEFAULT_WINDOW_SECONDS: f64 = 2.0;
pub const WELCH_DEFAULT_OVERLAP: f64 = 0.5;

/// One-sided power spectral density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdEstimate {
    pub frequencies_hz: Vec<f64>,
    /// µV²/Hz
    pub power: Vec<f64>,
    pub resolution_hz: f64,
    pub window_seconds: f64,
    pub overlap_fraction: f64,
}

impl PsdEstimate {
    /// Σ power·Δf, which equals the mean-removed signal variance.
    pub fn total_power(&self) -> f64 {
        self.power.iter().sum::<f64>() * self.resolution_hz
    }

    pub fn max_frequency(&self) -> f64 {
        *self.frequencies_hz.last().expect("psd has at least one bin")
    }

    pub fn peak_frequency(&self) -> f64 {
        let (i, _) = self
            .power
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best });
        self.frequencies_hz[i]
    }

    /// Frequencies of the `k` largest local maxima, strongest first.
    pub fn peaks(&self, k: usize) -> Vec<f64> {
        let p = &self.power;
        let mut maxima: Vec<usize> = (0..p.len())
            .filter(|&i| {
                p[i] > 0.0 && (i == 0 || p[i] >= p[i - 1]) && (i + 1 == p.len() || p[i] > p[i + 1])
            })
            .collect();
        maxima.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
        maxima.into_iter().take(k).map(|i| self.frequencies_hz[i]).collect()
    }
}

/// Named frequency range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBand {
    pub name: String,
    pub low_hz: f64,
    pub high_hz: f64,
}

impl FrequencyBand {
    pub fn new(name: impl Into<String>, low_hz: f64, high_hz: f64) -> Result<Self, DspError> {
        if !(low_hz.is_finite() && high_hz.is_finite() && 0.0 <= low_hz && low_hz < high_hz) {
            return Err(DspError::InvalidParameter(format!("band edges {low_hz}-{high_hz} Hz")));
        }
        Ok(FrequencyBand { name: name.into(), low_hz, high_hz })
    }

    fn fixed(name: &str, low_hz: f64, high_hz: f64) -> Self {
        FrequencyBand { name: name.to_string(), low_hz, high_hz }
    }

    pub fn delta() -> Self {
        Self::fixed("delta", 0.5, 4.0)
    }

    pub fn theta() -> Self {
        Self::fixed("theta", 4.0, 8.0)
    }

    pub fn alpha() -> Self {
        Self::fixed("alpha", 8.0, 13.0)
    }

    pub fn beta() -> Self {
        Self::fixed("beta", 13.0, 30.0)
    }

    pub fn gamma() -> Self {
        Self::fixed("gamma", 30.0, 45.0)
    }

    /// One of the five conventional bands by name.
    pub fn named(name: &str) -> Option<Self> {
        match name {
            "delta" => Some(Self::delta()),
            "theta" => Some(Self::theta()),
            "alpha" => Some(Self::alpha()),
            "beta" => Some(Self::beta()),
            "gamma" => Some(Self::gamma()),
            _ => None,
        }
    }
}

fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

fn segment_len(window_seconds: f64, sample_rate_hz: f64) -> Result<usize, DspError> {
    if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
        return Err(DspError::InvalidParameter(format!("sample rate {sample_rate_hz}")));
    }
    if !(window_seconds.is_finite() && window_seconds > 0.0) {
        return Err(DspError::InvalidParameter(format!("window {window_seconds} s")));
    }
    let n = (window_seconds * sample_rate_hz).round() as usize;
    if n < 2 {
        return Err(DspError::InvalidParameter(format!(
            "window of {window_seconds} s is under two samples"
        )));
    }
    Ok(n)
}

/// Welch estimate: periodic-Hann segments, per-segment mean removal,
/// averaged periodograms, one-sided density scaling.
pub fn psd_welch(
    signal: &[f64],
    sample_rate_hz: f64,
    window_seconds: f64,
    overlap_fraction: f64,
) -> Result<PsdEstimate, DspError> {
    let nperseg = segment_len(window_seconds, sample_rate_hz)?;
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(DspError::InvalidParameter(format!("overlap {overlap_fraction} not in [0, 1)")));
    }
    if signal.len() < nperseg {
        return Err(DspError::SignalTooShort { needed: nperseg, got: signal.len() });
    }
    let step = (nperseg - (overlap_fraction * nperseg as f64).floor() as usize).max(1);
    let window = hann(nperseg);
    let window_energy: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(nperseg);
    let bins = nperseg / 2 + 1;
    let mut acc = vec![0.0f64; bins];
    let mut buf = vec![Complex::new(0.0, 0.0); nperseg];
    let mut segments = 0usize;

    let mut start = 0;
    while start + nperseg <= signal.len() {
        let seg = &signal[start..start + nperseg];
        let mean = seg.iter().sum::<f64>() / nperseg as f64;
        for ((b, &x), &w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new((x - mean) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        segments += 1;
        start += step;
    }

    let scale = 1.0 / (sample_rate_hz * window_energy * segments as f64);
    let nyquist_bin = if nperseg % 2 == 0 { Some(bins - 1) } else { None };
    let power = acc
        .iter()
        .enumerate()
        .map(|(k, &a)| {
            let one_sided = if k == 0 || Some(k) == nyquist_bin { 1.0 } else { 2.0 };
            a * scale * one_sided
        })
        .collect();
    let resolution_hz = sample_rate_hz / nperseg as f64;
    Ok(PsdEstimate {
        frequencies_hz: (0..bins).map(|k| k as f64 * resolution_hz).collect(),
        power,
        resolution_hz,
        window_seconds,
        overlap_fraction,
    })
}

/// [`psd_welch`] with 2 s windows and 50% overlap.
pub fn psd_welch_default(signal: &[f64], sample_rate_hz: f64) -> Result<PsdEstimate, DspError> {
    psd_welch(signal, sample_rate_hz, WELCH_DEFAULT_WINDOW_SECONDS, WELCH_DEFAULT_OVERLAP)
}

fn interpolate(psd: &PsdEstimate, f: f64) -> f64 {
    let pos = f / psd.resolution_hz;
    let i = (pos.floor() as usize).min(psd.power.len() - 1);
    if i + 1 >= psd.power.len() {
        return psd.power[i];
    }
    let t = pos - i as f64;
    psd.power[i] * (1.0 - t) + psd.power[i + 1] * t
}

/// Trapezoidal integral of the PSD over `[low_hz, high_hz]`, with linear
/// interpolation at band edges that fall between bins.
pub fn band_power(psd: &PsdEstimate, band: &FrequencyBand) -> Result<f64, DspError> {
    let max_hz = psd.max_frequency();
    let tol = 1e-9 * psd.resolution_hz;
    if !(band.low_hz >= 0.0 && band.low_hz < band.high_hz && band.high_hz <= max_hz + tol) {
        return Err(DspError::BandOutOfRange { low_hz: band.low_hz, high_hz: band.high_hz, max_hz });
    }
    let high = band.high_hz.min(max_hz);
    let mut points = vec![(band.low_hz, interpolate(psd, band.low_hz))];
    points.extend(
        psd.frequencies_hz
            .iter()
            .zip(&psd.power)
            .filter(|(&f, _)| f > band.low_hz + tol && f < high - tol)
            .map(|(&f, &p)| (f, p)),
    );
    points.push((high, interpolate(psd, high)));
    let area: f64 = points.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum();
    Ok(area.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramFrame {
    pub t_start_seconds: f64,
    pub psd: PsdEstimate,
}

/// Sliding Hann periodograms, one frame per hop.
pub fn spectrogram(
    signal: &[f64],
    sample_rate_hz: f64,
    window_seconds: f64,
    hop_seconds: f64,
) -> Result<Vec<SpectrogramFrame>, DspError> {
    let win = segment_len(window_seconds, sample_rate_hz)?;
    if !(hop_seconds.is_finite() && hop_seconds > 0.0) {
        return Err(DspError::InvalidParameter(format!("hop {hop_seconds} s")));
    }
    let hop = ((hop_seconds * sample_rate_hz).round() as usize).max(1);
    if signal.len() < win {
        return Err(DspError::SignalTooShort { needed: win, got: signal.len() });
    }
    let count = (signal.len() - win) / hop + 1;
    (0..count)
        .map(|i| {
            let start = i * hop;
            Ok(SpectrogramFrame {
                t_start_seconds: start as f64 / sample_rate_hz,
                psd: psd_welch(&signal[start..start + win], sample_rate_hz, window_seconds, 0.0)?,
            })
        })
        .collect()
}
