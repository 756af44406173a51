//! Feature extraction over raw EEG.
//!
//! Everything here is a pure function of its inputs (and seed, for ICA).
//! Recordings are read as `f64`; powers are in µV² and densities in µV²/Hz.

mod ar;
mod features;
mod identify;
mod ica;
mod spectral;

use thiserror::Error;

pub use ar::{ar_from_reflection, yule_walker, ArModel};
pub use features::{
    alpha_asymmetry, alpha_subband_fingerprint, alpha_subband_powers, ar_fingerprint, drowsiness_index,
    AlphaAsymmetry, DrowsinessIndex, Fingerprint, FingerprintKind, ALPHA_SUBBAND_DEFAULT, AR_ORDER_DEFAULT,
    DROWSINESS_EPSILON, POWER_FLOOR,
};
pub use ica::{fastica, IcaResult, ICA_DEFAULT_MAX_ITERATIONS, ICA_DEFAULT_TOLERANCE};
pub use identify::{enroll, identify, Identification, IdentityModel};
pub use nalgebra::DMatrix;
pub use spectral::{
    band_power, psd_welch, psd_welch_default, spectrogram, FrequencyBand, PsdEstimate, SpectrogramFrame,
    WELCH_DEFAULT_OVERLAP, WELCH_DEFAULT_WINDOW_SECONDS,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DspError {
    #[error("signal too short: need {needed} samples, got {got}")]
    SignalTooShort { needed: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("band {low_hz}-{high_hz} Hz outside 0-{max_hz} Hz")]
    BandOutOfRange { low_hz: f64, high_hz: f64, max_hz: f64 },
    #[error("missing channel {0}")]
    MissingChannel(String),
    #[error("degenerate power {power:e} below floor")]
    DegeneratePower { power: f64 },
    #[error("singular autocovariance on channel {channel}")]
    SingularAutocovariance { channel: String },
    #[error("fingerprint kind or length does not match the model")]
    KindMismatch,
    #[error("identity model needs at least two enrolled subjects, got {enrolled}")]
    EmptyModel { enrolled: usize },
    #[error("ICA did not converge within {} iterations", .0.iterations_used)]
    NotConverged(Box<IcaResult>),
    #[error("covariance is rank deficient (eigenvalue ratio {ratio:e})")]
    RankDeficient { ratio: f64 },
}
