//! End-to-end batch enhancement: one filter bank estimated from the whole
//! recording and applied to every frame.

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio_io::{resample, AudioClip};
use crate::covariance::estimate_correlations;
use crate::error::{Error, Result};
use crate::filters::{design_filterbank, ChannelPartition, FilterBank, Method};
use crate::scenegen::oracle_mask;
use crate::spp::{estimate_spp, select_spp_channel, SppMask, SppMode, SppParams};
use crate::stft::{analyze, synthesize, StftGrid, StftParams};

pub const DEFAULT_DELTA: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SppConfig {
    #[serde(flatten)]
    pub params: SppParams,
    pub mode: SppMode,
    /// Channel the SPP is estimated on. Defaults to the reference channel for
    /// internal mode and to the last input channel for external mode.
    pub channel: Option<usize>,
}

impl Default for SppConfig {
    fn default() -> Self {
        Self {
            params: SppParams::default(),
            mode: SppMode::Internal,
            channel: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhanceConfig {
    #[serde(default)]
    pub stft: StftParams,
    #[serde(default)]
    pub spp: SppConfig,
    pub partition: ChannelPartition,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Resample inputs whose rate differs from `stft.sample_rate_hz`.
    #[serde(default = "default_true")]
    pub auto_resample: bool,
}

fn default_method() -> Method {
    Method::PkMwf
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

fn default_true() -> bool {
    true
}

impl EnhanceConfig {
    pub fn new(partition: ChannelPartition, method: Method, spp_mode: SppMode) -> Self {
        Self {
            stft: StftParams::default(),
            spp: SppConfig {
                mode: spp_mode,
                ..SppConfig::default()
            },
            partition,
            method,
            delta: DEFAULT_DELTA,
            auto_resample: true,
        }
    }

    /// Every problem with this config, given the input channel count if known.
    pub fn violations(&self, channel_count: Option<usize>) -> Vec<String> {
        let mut v = Vec::new();
        if let Err(e) = self.stft.validate() {
            v.push(format!("stft: {e}"));
        }
        v.extend(self.spp.params.violations());
        v.extend(self.partition.violations(channel_count));
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            v.push(format!("delta must be a finite non-negative number, got {}", self.delta));
        }
        if let (Some(c), Some(n)) = (self.spp.channel, channel_count) {
            if c >= n {
                v.push(format!("spp.channel {c} out of range for a {n}-channel input"));
            }
        }
        v
    }

    pub fn validate(&self, channel_count: Option<usize>) -> Result<()> {
        let v = self.violations(channel_count);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    fn spp_channel(&self, channel_count: usize) -> usize {
        self.spp.channel.unwrap_or(match self.spp.mode {
            SppMode::External => channel_count - 1,
            _ => self.partition.reference_physical(),
        })
    }
}

/// Separately recorded speech and noise components of the input, same
/// channel layout as the mixture.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub speech_image: AudioClip,
    pub noise_image: AudioClip,
}

#[derive(Debug, Clone)]
pub struct EnhanceResult {
    pub enhanced: AudioClip,
    pub shadow_speech: Option<AudioClip>,
    pub shadow_noise: Option<AudioClip>,
    pub filterbank: FilterBank,
    pub mask: SppMask,
}

/// `d̂(κ, l) = w(κ)^H·y(κ, l)` for a grid already holding the filter's input channels.
pub fn apply_filterbank(grid: &StftGrid, fb: &FilterBank) -> Result<Array2<Complex64>> {
    if grid.channels() != fb.weights.ncols() || grid.bins() != fb.bins() {
        return Err(Error::Shape(format!(
            "grid is {} bins × {} channels, filter bank is {} bins × {} weights",
            grid.bins(),
            grid.channels(),
            fb.bins(),
            fb.weights.ncols()
        )));
    }
    let data = grid.data();
    let frames = grid.frames();
    let rows: Vec<Complex64> = (0..grid.bins())
        .into_par_iter()
        .flat_map_iter(|k| {
            let w = fb.weights.row(k);
            (0..frames).map(move |l| {
                w.iter()
                    .enumerate()
                    .map(|(m, wm)| wm.conj() * data[[k, l, m]])
                    .sum::<Complex64>()
            })
        })
        .collect();
    let out = Array2::from_shape_vec((grid.bins(), frames), rows).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(out)
}

fn filter_clip(clip: &AudioClip, fb: &FilterBank, params: &StftParams) -> Result<AudioClip> {
    let grid = analyze(&clip.select_channels(&fb.input_channels())?, params)?;
    let d = apply_filterbank(&grid, fb)?;
    synthesize(&StftGrid::from_single(d, *params)?.with_signal_len(clip.frames()))
}

fn at_rate(clip: &AudioClip, cfg: &EnhanceConfig) -> Result<AudioClip> {
    let want = cfg.stft.sample_rate_hz;
    if clip.sample_rate_hz() == want {
        Ok(clip.clone())
    } else if cfg.auto_resample {
        resample(clip, want)
    } else {
        Err(Error::RateMismatch {
            clip: clip.sample_rate_hz(),
            expected: want,
        })
    }
}

/// Runs the full chain on `clip`; ground truth enables oracle SPP and
/// shadow filtering.
pub fn enhance(clip: &AudioClip, cfg: &EnhanceConfig, truth: Option<&GroundTruth>) -> Result<EnhanceResult> {
    cfg.validate(Some(clip.channels()))?;
    let clip = at_rate(clip, cfg)?;
    let truth = truth
        .map(|t| -> Result<GroundTruth> {
            let gt = GroundTruth {
                speech_image: at_rate(&t.speech_image, cfg)?,
                noise_image: at_rate(&t.noise_image, cfg)?,
            };
            for c in [&gt.speech_image, &gt.noise_image] {
                if c.channels() != clip.channels() || c.frames() != clip.frames() {
                    return Err(Error::Shape(format!(
                        "ground truth is {}×{}, mixture is {}×{}",
                        c.channels(),
                        c.frames(),
                        clip.channels(),
                        clip.frames()
                    )));
                }
            }
            Ok(gt)
        })
        .transpose()?;

    let grid = analyze(&clip, &cfg.stft)?;
    let mask = match cfg.spp.mode {
        SppMode::Oracle => {
            let t = truth.as_ref().ok_or_else(|| {
                Error::Config(vec!["oracle SPP needs ground-truth speech and noise images".into()])
            })?;
            oracle_mask(&t.speech_image, &t.noise_image, cfg.partition.reference_physical())?
        }
        mode => {
            let (spec, source) = select_spp_channel(&grid, mode, cfg.spp_channel(clip.channels()))?;
            estimate_spp(spec.view(), &cfg.spp.params)?.with_source(source)
        }
    };

    let stats = estimate_correlations(&grid, &mask, &cfg.partition.ordered_channels())?;
    let fb = design_filterbank(&stats, cfg.method, &cfg.partition, cfg.delta)?;
    let d = apply_filterbank(&grid.select_channels(&fb.input_channels())?, &fb)?;
    let enhanced = synthesize(&StftGrid::from_single(d, cfg.stft)?.with_signal_len(clip.frames()))?;

    let (shadow_speech, shadow_noise) = match &truth {
        Some(t) => (
            Some(filter_clip(&t.speech_image, &fb, &cfg.stft)?),
            Some(filter_clip(&t.noise_image, &fb, &cfg.stft)?),
        ),
        None => (None, None),
    };
    Ok(EnhanceResult {
        enhanced,
        shadow_speech,
        shadow_noise,
        filterbank: fb,
        mask,
    })
}
