//! Synthetic EEG generator used as a test substrate.
//!
//! Each channel is a sum of components: exact sinusoids, stable AR(p)
//! processes and white Gaussian noise. Randomness comes from a ChaCha stream
//! keyed by `(seed, channel, component)`, so adding a channel never perturbs
//! the others.

use std::f64::consts::PI;

use chrono::{DateTime, Utc};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::metadata::decode_lines;
use super::{ChannelLabel, EegRecording, GeoPoint, RecordingError, RecordingMetadata};

/// Samples discarded before an AR process is recorded.
pub const AR_BURN_IN: usize = 1000;

/// One additive signal component, in microvolts.
#[derive(Debug, Clone, PartialEq)]
pub enum Component {
    Sinusoid { amplitude: f64, frequency_hz: f64, phase: f64 },
    /// `x[n] = Σ coefficients[i] · x[n-1-i] + e[n]`, `e ~ N(0, noise_std²)`.
    Ar { coefficients: Vec<f64>, noise_std: f64 },
    WhiteNoise { std: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSpec {
    pub label: ChannelLabel,
    pub components: Vec<Component>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub sample_rate_hz: f64,
    pub duration_seconds: f64,
    pub start_time: DateTime<Utc>,
    pub channels: Vec<ChannelSpec>,
    pub metadata: RecordingMetadata,
}

impl SyntheticSpec {
    pub fn new(sample_rate_hz: f64, duration_seconds: f64) -> Self {
        SyntheticSpec {
            sample_rate_hz,
            duration_seconds,
            start_time: DateTime::UNIX_EPOCH,
            channels: Vec::new(),
            metadata: RecordingMetadata::default(),
        }
    }

    pub fn channel(mut self, label: &str, components: Vec<Component>) -> Self {
        self.channels.push(ChannelSpec {
            label: ChannelLabel::new(label).expect("non-empty label"),
            components,
        });
        self
    }

    pub fn starting_at(mut self, start: DateTime<Utc>) -> Self {
        self.start_time = start;
        self
    }

    pub fn with_metadata(mut self, metadata: RecordingMetadata) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn sample_count(&self) -> usize {
        (self.duration_seconds * self.sample_rate_hz).round() as usize
    }

    /// Parses a spec file in the metadata line format, one `key<TAB>value`
    /// pair per line (tabs shown as spaces):
    ///
    /// ```text
    /// sample_rate    128
    /// duration    60
    /// start    2024-05-01T08:00:00Z
    /// channels    F3,F4
    /// F3.sine    10,10,0          amplitude,frequency,phase (repeatable)
    /// F3.ar    1.0;0.75,-0.5     noise_std;coefficients
    /// F4.noise    2.0
    /// user    alice              any recording metadata key
    /// ```
    pub fn from_spec_text(text: &str) -> Result<Self, RecordingError> {
        let bad = |m: String| RecordingError::BadSpec(m);
        let num = |key: &str, v: &str| -> Result<f64, RecordingError> {
            v.trim().parse::<f64>().map_err(|_| bad(format!("{key}: not a number: {v:?}")))
        };
        let mut rate = None;
        let mut duration = None;
        let mut start = DateTime::UNIX_EPOCH;
        let mut channels: Vec<ChannelSpec> = Vec::new();
        let mut meta = RecordingMetadata::default();
        let mut lat = None;
        let mut lon = None;

        for (key, value) in decode_lines(text).map_err(|e| bad(e.to_string()))? {
            match key.as_str() {
                "sample_rate" => rate = Some(num(&key, &value)?),
                "duration" => duration = Some(num(&key, &value)?),
                "start" => {
                    start = DateTime::parse_from_rfc3339(value.trim())
                        .map_err(|e| bad(format!("start: {e}")))?
                        .with_timezone(&Utc)
                }
                "channels" => {
                    for name in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                        channels.push(ChannelSpec {
                            label: ChannelLabel::new(name).map_err(|e| bad(e.to_string()))?,
                            components: Vec::new(),
                        });
                    }
                }
                "user" => meta.user_id = value,
                "description" => meta.description = value,
                "battery" => {
                    meta.battery_level_percent =
                        Some(value.trim().parse().map_err(|_| bad(format!("battery: {value:?}")))?)
                }
                "lat" => lat = Some(num(&key, &value)?),
                "lon" => lon = Some(num(&key, &value)?),
                _ => {
                    if let Some(extra) = key.strip_prefix("meta.") {
                        meta.extra.insert(extra.to_string(), value);
                        continue;
                    }
                    let (label, kind) = key
                        .rsplit_once('.')
                        .ok_or_else(|| bad(format!("unknown key {key:?}")))?;
                    let channel = channels
                        .iter_mut()
                        .find(|c| c.label.as_str() == label)
                        .ok_or_else(|| bad(format!("component for undeclared channel {label:?}")))?;
                    channel.components.push(parse_component(kind, &value).map_err(bad)?);
                }
            }
        }
        meta.location = match (lat, lon) {
            (None, None) => None,
            (Some(lat), Some(lon)) => Some(GeoPoint::new(lat, lon).map_err(|e| bad(e.to_string()))?),
            _ => return Err(bad("lat and lon must be given together".into())),
        };
        meta.validate().map_err(|e| bad(e.to_string()))?;
        Ok(SyntheticSpec {
            sample_rate_hz: rate.ok_or_else(|| bad("missing sample_rate".into()))?,
            duration_seconds: duration.ok_or_else(|| bad("missing duration".into()))?,
            start_time: start,
            channels,
            metadata: meta,
        })
    }
}

fn parse_component(kind: &str, value: &str) -> Result<Component, String> {
    let nums = |s: &str| -> Result<Vec<f64>, String> {
        s.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| format!("{kind}: not a number: {p:?}")))
            .collect()
    };
    match kind {
        "sine" => match nums(value)?.as_slice() {
            [a, f] => Ok(Component::Sinusoid { amplitude: *a, frequency_hz: *f, phase: 0.0 }),
            [a, f, p] => Ok(Component::Sinusoid { amplitude: *a, frequency_hz: *f, phase: *p }),
            _ => Err(format!("sine expects amplitude,frequency[,phase], got {value:?}")),
        },
        "ar" => {
            let (std, coeffs) = value
                .split_once(';')
                .ok_or_else(|| format!("ar expects noise_std;coefficients, got {value:?}"))?;
            let noise_std = std.trim().parse::<f64>().map_err(|_| format!("ar: bad noise std {std:?}"))?;
            Ok(Component::Ar { coefficients: nums(coeffs)?, noise_std })
        }
        "noise" => Ok(Component::WhiteNoise {
            std: value.trim().parse().map_err(|_| format!("noise: bad std {value:?}"))?,
        }),
        other => Err(format!("unknown component kind {other:?}")),
    }
}

/// Largest modulus among the roots of `z^p - a1 z^(p-1) - ... - ap`.
pub(crate) fn ar_root_modulus(coefficients: &[f64]) -> f64 {
    let p = coefficients.len();
    if p == 0 {
        return 0.0;
    }
    let mut companion = DMatrix::<f64>::zeros(p, p);
    for (j, a) in coefficients.iter().enumerate() {
        companion[(0, j)] = *a;
    }
    for i in 1..p {
        companion[(i, i - 1)] = 1.0;
    }
    companion
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub(crate) fn check_ar_stable(coefficients: &[f64]) -> Result<(), RecordingError> {
    if coefficients.iter().any(|a| !a.is_finite()) {
        return Err(RecordingError::BadSpec("non-finite AR coefficient".into()));
    }
    let modulus = ar_root_modulus(coefficients);
    if modulus >= 1.0 - 1e-10 {
        return Err(RecordingError::UnstableArModel { modulus });
    }
    Ok(())
}

fn rng_for(seed: u64, channel: usize, component: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((channel as u64) << 32) | component as u64);
    rng
}

fn normal(std: f64) -> Result<Normal<f64>, RecordingError> {
    Normal::new(0.0, std).map_err(|_| RecordingError::BadSpec(format!("invalid noise stdev {std}")))
}

/// Generates a recording from `spec`. Deterministic for a fixed `seed`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<EegRecording, RecordingError> {
    let fs = spec.sample_rate_hz;
    if !(fs.is_finite() && fs > 0.0) {
        return Err(RecordingError::BadSpec(format!("sample rate {fs} must be positive")));
    }
    let n = spec.sample_count();
    if n == 0 {
        return Err(RecordingError::BadSpec("duration yields zero samples".into()));
    }
    if spec.channels.is_empty() {
        return Err(RecordingError::BadSpec("no channels".into()));
    }
    for channel in &spec.channels {
        for component in &channel.components {
            if let Component::Ar { coefficients, .. } = component {
                check_ar_stable(coefficients)?;
            }
        }
    }

    let mut rows = Vec::with_capacity(spec.channels.len());
    for (ci, channel) in spec.channels.iter().enumerate() {
        let mut acc = vec![0.0f64; n];
        for (ki, component) in channel.components.iter().enumerate() {
            match component {
                Component::Sinusoid { amplitude, frequency_hz, phase } => {
                    for (i, v) in acc.iter_mut().enumerate() {
                        *v += amplitude * (2.0 * PI * frequency_hz * i as f64 / fs + phase).sin();
                    }
                }
                Component::WhiteNoise { std } => {
                    let dist = normal(*std)?;
                    let mut rng = rng_for(seed, ci, ki);
                    for v in acc.iter_mut() {
                        *v += dist.sample(&mut rng);
                    }
                }
                Component::Ar { coefficients, noise_std } => {
                    let dist = normal(*noise_std)?;
                    let mut rng = rng_for(seed, ci, ki);
                    let p = coefficients.len();
                    let mut x = vec![0.0f64; AR_BURN_IN + n];
                    for t in 0..x.len() {
                        let mut value = dist.sample(&mut rng);
                        for (i, a) in coefficients.iter().enumerate().take(p.min(t)) {
                            value += a * x[t - 1 - i];
                        }
                        x[t] = value;
                    }
                    for (v, s) in acc.iter_mut().zip(&x[AR_BURN_IN..]) {
                        *v += s;
                    }
                }
            }
        }
        rows.push(acc.into_iter().map(|v| v as f32).collect());
    }
    EegRecording::new(
        spec.channels.iter().map(|c| c.label.clone()).collect(),
        fs,
        spec.start_time,
        rows,
        spec.metadata.clone(),
    )
}
