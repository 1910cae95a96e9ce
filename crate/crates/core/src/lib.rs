//! Multichannel speech enhancement for microphone arrays on multirotor UAVs.
//!
//! The crate implements the GEVD-based multichannel Wiener filter (MWF) and
//! its prior-knowledge variant (PK-MWF), which treats microphones mounted next
//! to the propellers as speech-free ego-noise references. Around the filters
//! sit the pieces needed to run them end to end: WAV I/O and resampling, a
//! square-root-Hann STFT, a speech presence probability (SPP) estimator,
//! batch correlation estimation, objective metrics (SNR, STOI) and a
//! synthetic scene generator with ground-truth components.

pub mod audio_io;
pub mod cli;
pub mod covariance;
pub mod error;
pub mod filters;
pub mod gevd;
pub mod metrics;
pub mod pipeline;
pub mod scenegen;
pub mod spp;
pub mod stft;

pub use error::{Error, Result};
