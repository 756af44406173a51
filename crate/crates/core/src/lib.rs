//! Core of a personal EEG data store.
//!
//! * [`recording`]: the raw recording model, its binary file format and a
//!   synthetic generator.
//! * [`dsp`]: spectral estimation and the feature extractors served as answers.
//! * [`questions`]: installable questions, the periodic answer scheduler and
//!   the answer store.
//! * [`aggregate`]: fixed-point encoding and pairwise additive masking for
//!   group sums across stores.

pub mod recording;
pub mod dsp;
pub mod questions;
pub mod aggregate;
