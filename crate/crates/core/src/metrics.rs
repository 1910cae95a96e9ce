//! Objective evaluation: SNR via shadow components, and STOI.

use ndarray::Array2;
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio_io::{AudioClip, Resampler};
use crate::error::{Error, Result};
use crate::pipeline::EnhanceResult;
use crate::spp::{SppMode, SppSource};

/// Value reported in place of ±∞ when one component has no energy.
pub const SNR_CAP_DB: f64 = 120.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snr {
    pub db: f64,
    /// True when the value was clamped to ±[`SNR_CAP_DB`].
    pub capped: bool,
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// `10·log10(Σs² / Σn²)` on raw sample slices.
pub fn snr_db_slices(speech: &[f64], noise: &[f64]) -> Result<Snr> {
    if speech.len() != noise.len() {
        return Err(Error::Metric(format!(
            "speech has {} samples, noise has {}",
            speech.len(),
            noise.len()
        )));
    }
    let (es, en) = (energy(speech), energy(noise));
    if en == 0.0 && es == 0.0 {
        return Err(Error::Metric("both components are silent".into()));
    }
    let db = 10.0 * (es / en).log10();
    if db.abs() > SNR_CAP_DB || !db.is_finite() {
        return Ok(Snr {
            db: SNR_CAP_DB.copysign(db),
            capped: true,
        });
    }
    Ok(Snr { db, capped: false })
}

fn mono_view(clip: &AudioClip, what: &str) -> Result<Vec<f64>> {
    if clip.channels() != 1 {
        return Err(Error::Metric(format!(
            "{what} must be single-channel, got {} channels",
            clip.channels()
        )));
    }
    Ok(clip.channel(0).to_vec())
}

/// SNR between single-channel speech and noise components.
pub fn snr_db(speech: &AudioClip, noise: &AudioClip) -> Result<Snr> {
    snr_db_slices(&mono_view(speech, "speech")?, &mono_view(noise, "noise")?)
}

// STOI constants (Taal et al. 2011), fixed by design.
const STOI_FS: u32 = 10_000;
const STOI_FRAME: usize = 256;
const STOI_NFFT: usize = 512;
const STOI_BANDS: usize = 15;
const STOI_MIN_FREQ: f64 = 150.0;
const STOI_SEGMENT: usize = 30;
const STOI_BETA_DB: f64 = -15.0;
const STOI_DYN_RANGE_DB: f64 = 40.0;

/// `hann(N + 2)[1..N+1]`, the zero-free symmetric Hann window STOI uses.
fn stoi_window() -> Vec<f64> {
    let n = STOI_FRAME + 2;
    (1..=STOI_FRAME)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// One-third-octave band matrix, `bands × (nfft/2 + 1)` of 0/1.
pub(crate) fn third_octave_bands() -> Array2<f64> {
    let bins = STOI_NFFT / 2 + 1;
    let freqs: Vec<f64> = (0..bins)
        .map(|i| i as f64 * STOI_FS as f64 / STOI_NFFT as f64)
        .collect();
    let nearest = |target: f64| {
        (0..bins)
            .min_by(|&a, &b| (freqs[a] - target).abs().total_cmp(&(freqs[b] - target).abs()))
            .unwrap()
    };
    let mut obm = Array2::zeros((STOI_BANDS, bins));
    for k in 0..STOI_BANDS {
        let lo = STOI_MIN_FREQ * 2f64.powf((2 * k) as f64 / 6.0 - 1.0 / 6.0);
        let hi = STOI_MIN_FREQ * 2f64.powf((2 * k) as f64 / 6.0 + 1.0 / 6.0);
        for b in nearest(lo)..nearest(hi) {
            obm[[k, b]] = 1.0;
        }
    }
    obm
}

/// Drops frames more than 40 dB below the loudest clean frame and
/// overlap-adds the survivors of both signals.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = stoi_window();
    let hop = STOI_FRAME / 2;
    if x.len() < STOI_FRAME {
        return (Vec::new(), Vec::new());
    }
    let starts: Vec<usize> = (0..=x.len() - STOI_FRAME).step_by(hop).collect();
    let frame = |s: &[f64], i: usize| -> Vec<f64> { (0..STOI_FRAME).map(|j| w[j] * s[i + j]).collect() };
    let energies: Vec<f64> = starts
        .iter()
        .map(|&i| 20.0 * (energy(&frame(x, i)).sqrt() + f64::EPSILON).log10())
        .collect();
    let peak = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts
        .iter()
        .zip(&energies)
        .filter(|(_, e)| peak - STOI_DYN_RANGE_DB - **e < 0.0)
        .map(|(i, _)| *i)
        .collect();
    if kept.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let len = (kept.len() - 1) * hop + STOI_FRAME;
    let mut xs = vec![0.0; len];
    let mut ys = vec![0.0; len];
    for (n, &i) in kept.iter().enumerate() {
        for (j, (fx, fy)) in frame(x, i).into_iter().zip(frame(y, i)).enumerate() {
            xs[n * hop + j] += fx;
            ys[n * hop + j] += fy;
        }
    }
    (xs, ys)
}

/// Third-octave band envelopes, `bands × frames`.
fn band_envelopes(x: &[f64], obm: &Array2<f64>) -> Array2<f64> {
    let w = stoi_window();
    let hop = STOI_FRAME / 2;
    let starts: Vec<usize> = (0..x.len().saturating_sub(STOI_FRAME)).step_by(hop).collect();
    let fft = FftPlanner::new().plan_fft_forward(STOI_NFFT);
    let bins = STOI_NFFT / 2 + 1;
    let mut out = Array2::zeros((STOI_BANDS, starts.len()));
    let mut buf = vec![Complex64::new(0.0, 0.0); STOI_NFFT];
    for (f, &i) in starts.iter().enumerate() {
        buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for j in 0..STOI_FRAME {
            buf[j].re = w[j] * x[i + j];
        }
        fft.process(&mut buf);
        for k in 0..STOI_BANDS {
            let p: f64 = (0..bins).map(|b| obm[[k, b]] * buf[b].norm_sqr()).sum();
            out[[k, f]] = p.sqrt();
        }
    }
    out
}

fn centre_and_normalise(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let n = energy(v).sqrt() + f64::EPSILON;
    v.iter_mut().for_each(|x| *x /= n);
}

/// Short-time objective intelligibility of `processed` against `clean`.
pub fn stoi(clean: &[f64], processed: &[f64], rate_hz: u32) -> Result<f64> {
    if clean.len() != processed.len() {
        return Err(Error::Metric(format!(
            "clean has {} samples, processed has {}",
            clean.len(),
            processed.len()
        )));
    }
    let (x, y) = if rate_hz == STOI_FS {
        (clean.to_vec(), processed.to_vec())
    } else {
        let rs = Resampler::new(rate_hz, STOI_FS)?;
        (rs.process(clean), rs.process(processed))
    };
    if energy(&x) == 0.0 {
        return Err(Error::Metric("clean signal is silent".into()));
    }
    let (x, y) = remove_silent_frames(&x, &y);
    let obm = third_octave_bands();
    let xe = band_envelopes(&x, &obm);
    let ye = band_envelopes(&y, &obm);
    let frames = xe.ncols();
    if frames < STOI_SEGMENT {
        return Err(Error::TooShort {
            got: frames,
            need: STOI_SEGMENT,
        });
    }
    let clip = 10f64.powf(-STOI_BETA_DB / 20.0);
    let mut total = 0.0;
    let segments = frames - STOI_SEGMENT + 1;
    for m in STOI_SEGMENT..=frames {
        for k in 0..STOI_BANDS {
            let mut xs: Vec<f64> = (m - STOI_SEGMENT..m).map(|l| xe[[k, l]]).collect();
            let ys: Vec<f64> = (m - STOI_SEGMENT..m).map(|l| ye[[k, l]]).collect();
            let scale = energy(&xs).sqrt() / (energy(&ys).sqrt() + f64::EPSILON);
            let mut yp: Vec<f64> = ys
                .iter()
                .zip(&xs)
                .map(|(yv, xv)| (yv * scale).min(xv * (1.0 + clip)))
                .collect();
            centre_and_normalise(&mut yp);
            centre_and_normalise(&mut xs);
            total += xs.iter().zip(&yp).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Ok(total / (segments * STOI_BANDS) as f64)
}

/// STOI on single-channel clips of the same rate.
pub fn stoi_clips(clean: &AudioClip, processed: &AudioClip) -> Result<f64> {
    if clean.sample_rate_hz() != processed.sample_rate_hz() {
        return Err(Error::RateMismatch {
            clip: processed.sample_rate_hz(),
            expected: clean.sample_rate_hz(),
        });
    }
    stoi(
        &mono_view(clean, "clean")?,
        &mono_view(processed, "processed")?,
        clean.sample_rate_hz(),
    )
}

/// Short description of the channel split a result was produced with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub m_speech_noise: usize,
    pub m_noise: usize,
    pub reference_channel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub snr_in_db: Option<f64>,
    pub snr_out_db: Option<f64>,
    pub snr_improvement_db: Option<f64>,
    pub stoi_in: f64,
    pub stoi_out: f64,
    pub stoi_improvement: f64,
    pub method: Option<String>,
    pub partition: Option<PartitionSummary>,
    pub spp_mode: Option<String>,
    /// Conditions worth knowing when reading the numbers, e.g. `no_ground_truth`.
    pub flags: Vec<String>,
}

/// Shadow-filtered output components.
#[derive(Debug, Clone, Copy)]
pub struct ShadowPair<'a> {
    pub speech: &'a AudioClip,
    pub noise: &'a AudioClip,
}

fn check_len(a: &AudioClip, b: &AudioClip, what: &str) -> Result<()> {
    if a.frames() != b.frames() {
        return Err(Error::Metric(format!(
            "{what} has {} samples, clean reference has {}",
            b.frames(),
            a.frames()
        )));
    }
    Ok(())
}

/// Metrics from plain signals: the clean and noisy reference channel, the
/// enhanced output and optionally its shadow-filtered components.
pub fn evaluate_signals(
    clean_ref: &AudioClip,
    noisy_ref: &AudioClip,
    processed: &AudioClip,
    shadow: Option<ShadowPair<'_>>,
) -> Result<MetricsReport> {
    check_len(clean_ref, noisy_ref, "noisy reference")?;
    check_len(clean_ref, processed, "processed signal")?;
    let clean = mono_view(clean_ref, "clean reference")?;
    let noisy = mono_view(noisy_ref, "noisy reference")?;
    let mut flags = Vec::new();

    let (mut snr_in, mut snr_out) = (None, None);
    match shadow {
        None => flags.push("no_ground_truth".to_string()),
        Some(pair) => {
            check_len(clean_ref, pair.speech, "shadow speech")?;
            check_len(clean_ref, pair.noise, "shadow noise")?;
            let noise_in: Vec<f64> = noisy.iter().zip(&clean).map(|(y, s)| y - s).collect();
            let input = snr_db_slices(&clean, &noise_in)?;
            if input.capped {
                flags.push("snr_in_capped".into());
            }
            snr_in = Some(input.db);
            match snr_db(pair.speech, pair.noise) {
                Ok(out) => {
                    if out.capped {
                        flags.push("snr_out_capped".into());
                    }
                    snr_out = Some(out.db);
                }
                Err(Error::Metric(_)) => flags.push("snr_out_undefined".into()),
                Err(e) => return Err(e),
            }
        }
    }
    let rate = clean_ref.sample_rate_hz();
    let stoi_in = stoi(&clean, &noisy, rate)?;
    let stoi_out = stoi(&clean, &mono_view(processed, "processed signal")?, rate)?;
    Ok(MetricsReport {
        snr_in_db: snr_in,
        snr_out_db: snr_out,
        snr_improvement_db: snr_in.zip(snr_out).map(|(i, o)| o - i),
        stoi_in,
        stoi_out,
        stoi_improvement: stoi_out - stoi_in,
        method: None,
        partition: None,
        spp_mode: None,
        flags,
    })
}

/// Metrics for a pipeline result, with descriptors filled in from the result.
pub fn evaluate(result: &EnhanceResult, clean_ref: &AudioClip, noisy_ref: &AudioClip) -> Result<MetricsReport> {
    let shadow = match (&result.shadow_speech, &result.shadow_noise) {
        (Some(speech), Some(noise)) => Some(ShadowPair { speech, noise }),
        _ => None,
    };
    let mut report = evaluate_signals(clean_ref, noisy_ref, &result.enhanced, shadow)?;
    let p = &result.filterbank.partition;
    report.method = Some(result.filterbank.method.to_string());
    report.partition = Some(PartitionSummary {
        m_speech_noise: p.m_speech_noise(),
        m_noise: p.m_noise(),
        reference_channel: p.reference_physical(),
    });
    report.spp_mode = result.mask.source.map(|s| {
        match s {
            SppSource::Internal(_) => SppMode::Internal,
            SppSource::External(_) => SppMode::External,
            SppSource::Oracle => SppMode::Oracle,
        }
        .to_string()
    });
    Ok(report)
}
