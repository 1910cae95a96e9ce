//! Synthetic UAV scenes: a speech source in free field, four rotors producing
//! harmonic-plus-broadband ego-noise, a 12-element embedded array, one
//! microphone below each rotor and an optional external microphone near the
//! source.
//!
//! Channel layout of every rendered clip: `0..12` array, `12..16` propeller
//! microphones (one per rotor, same order), `16` external microphone if any.

use std::f64::consts::{PI, TAU};
use std::path::PathBuf;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio_io::{bessel_i0, read_wav, resample, sinc, AudioClip};
use crate::error::{Error, Result};
use crate::filters::{ChannelPartition, Method};
use crate::spp::{SppMask, SppMode, SppSource};
use crate::stft::{analyze, StftParams};

pub const SPEED_OF_SOUND: f64 = 343.0;
pub const ARRAY_MICS: usize = 12;
pub const ROTORS: usize = 4;
/// First propeller-microphone channel.
pub const PROPELLER_CHANNEL0: usize = ARRAY_MICS;
/// Channel of the external microphone when the geometry has one.
pub const EXTERNAL_CHANNEL: usize = ARRAY_MICS + ROTORS;

const FRACTIONAL_DELAY_TAPS: usize = 32;
const FRACTIONAL_DELAY_BETA: f64 = 6.0;

pub type Position = [f64; 3];

fn distance(a: &Position, b: &Position) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub source: Position,
    pub array_mics: Vec<Position>,
    pub propeller_mics: Vec<Position>,
    pub rotors: Vec<Position>,
    pub external_mic: Option<Position>,
}

impl Default for Geometry {
    /// Quadrotor hovering with its frame bottom 1.15 m above the floor, a
    /// loudspeaker 2 m away near the ground and an external mic 0.2 m above it.
    fn default() -> Self {
        let centre = [0.0, 0.0, 1.15];
        let at = |radius: f64, deg: f64, dz: f64| -> Position {
            let a = deg.to_radians();
            [centre[0] + radius * a.cos(), centre[1] + radius * a.sin(), centre[2] + dz]
        };
        let arm_angles = [45.0, 135.0, 225.0, 315.0];
        let mut array_mics: Vec<Position> = (0..4).map(|i| at(0.06, 90.0 * i as f64, 0.0)).collect();
        array_mics.extend((0..4).map(|i| at(0.12, 22.5 + 90.0 * i as f64, 0.0)));
        // last four sit under the arms, close to the rotor axes
        array_mics.extend(arm_angles.iter().map(|&a| at(0.20, a, 0.0)));
        let source = [2.0, 0.0, 0.3];
        Self {
            source,
            array_mics,
            propeller_mics: arm_angles.iter().map(|&a| at(0.25, a, 0.05)).collect(),
            rotors: arm_angles.iter().map(|&a| at(0.25, a, 0.10)).collect(),
            external_mic: Some([source[0], source[1], source[2] + 0.2]),
        }
    }
}

impl Geometry {
    /// All rendered microphone positions in channel order.
    pub fn mic_positions(&self) -> Vec<Position> {
        let mut all = self.array_mics.clone();
        all.extend(&self.propeller_mics);
        all.extend(self.external_mic);
        all
    }

    pub fn channel_count(&self) -> usize {
        self.array_mics.len() + self.propeller_mics.len() + usize::from(self.external_mic.is_some())
    }

    pub fn external_channel(&self) -> Option<usize> {
        self.external_mic.map(|_| self.array_mics.len() + self.propeller_mics.len())
    }

    fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.array_mics.len() != ARRAY_MICS {
            v.push(format!("geometry needs {ARRAY_MICS} array mics, got {}", self.array_mics.len()));
        }
        if self.rotors.len() != ROTORS || self.propeller_mics.len() != ROTORS {
            v.push(format!(
                "geometry needs {ROTORS} rotors and {ROTORS} propeller mics, got {} and {}",
                self.rotors.len(),
                self.propeller_mics.len()
            ));
        }
        let all = self.mic_positions();
        if all.iter().chain(&self.rotors).chain([&self.source]).flatten().any(|c| !c.is_finite()) {
            v.push("geometry has non-finite coordinates".into());
        }
        for (i, m) in all.iter().enumerate() {
            if distance(m, &self.source) <= 0.0 {
                v.push(format!("mic {i} coincides with the source"));
            }
        }
        v
    }
}

/// Noise coupling gains from a rotor to the microphones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CouplingDb {
    pub own_propeller: f64,
    pub other_propeller: f64,
    pub array: f64,
}

impl Default for CouplingDb {
    fn default() -> Self {
        Self {
            own_propeller: 0.0,
            other_propeller: -12.0,
            array: -6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub geometry: Geometry,
    pub rotor_speeds_rpm: Vec<f64>,
    /// Speech-to-noise ratio at the reference array mic.
    pub target_snr_db: f64,
    /// Mono speech recording; resampled to `sample_rate_hz` if needed.
    pub speech_path: Option<PathBuf>,
    pub seed: u64,
    pub coupling_db: CouplingDb,
    pub sample_rate_hz: u32,
    /// Array mic whose speech gain is 1 and where the SNR is calibrated.
    pub reference_mic: usize,
    /// Extra speech attenuation at the propeller mics (shielding below the blades).
    pub propeller_speech_gain_db: f64,
    /// Uncorrelated sensor noise relative to the ego-noise at the reference mic.
    pub sensor_noise_db: f64,
    /// External-mic SNR above the reference-channel SNR.
    pub external_snr_offset_db: f64,
    /// Incoherent noise points per rotor, spread on the blade-tip circle.
    pub rotor_subsources: usize,
    pub rotor_radius_m: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            geometry: Geometry::default(),
            rotor_speeds_rpm: vec![4000.0, 4080.0, 3920.0, 4040.0],
            target_snr_db: -10.0,
            speech_path: None,
            seed: 1,
            coupling_db: CouplingDb::default(),
            sample_rate_hz: 16_000,
            reference_mic: 0,
            propeller_speech_gain_db: -26.0,
            sensor_noise_db: -30.0,
            external_snr_offset_db: 15.0,
            rotor_subsources: 3,
            rotor_radius_m: 0.12,
        }
    }
}

impl SceneConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.geometry.violations();
        if self.rotor_speeds_rpm.len() != ROTORS {
            v.push(format!("rotor_speeds_rpm needs {ROTORS} values, got {}", self.rotor_speeds_rpm.len()));
        }
        if self.rotor_speeds_rpm.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            v.push("rotor speeds must be positive".into());
        }
        if !self.target_snr_db.is_finite() {
            v.push("target_snr_db must be finite".into());
        }
        if self.sample_rate_hz == 0 {
            v.push("sample_rate_hz must be positive".into());
        }
        if self.rotor_subsources == 0 {
            v.push("rotor_subsources must be at least 1".into());
        }
        if !(self.rotor_radius_m.is_finite() && self.rotor_radius_m >= 0.0) {
            v.push("rotor_radius_m must be a non-negative length".into());
        }
        if self.reference_mic >= self.geometry.array_mics.len() {
            v.push(format!("reference_mic {} is not an array mic", self.reference_mic));
        }
        for (name, x) in [
            ("propeller_speech_gain_db", self.propeller_speech_gain_db),
            ("sensor_noise_db", self.sensor_noise_db),
            ("external_snr_offset_db", self.external_snr_offset_db),
            ("coupling_db.own_propeller", self.coupling_db.own_propeller),
            ("coupling_db.other_propeller", self.coupling_db.other_propeller),
            ("coupling_db.array", self.coupling_db.array),
        ] {
            if !x.is_finite() {
                v.push(format!("{name} must be finite"));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    /// Noise coupling amplitudes, `mics × rotors`, for array and propeller mics.
    pub fn coupling_matrix(&self) -> Array2<f64> {
        let lin = |db: f64| 10f64.powf(db / 20.0);
        let n_arr = self.geometry.array_mics.len();
        let n = n_arr + self.geometry.propeller_mics.len();
        Array2::from_shape_fn((n, ROTORS), |(m, r)| {
            if m < n_arr {
                lin(self.coupling_db.array)
            } else if m - n_arr == r {
                lin(self.coupling_db.own_propeller)
            } else {
                lin(self.coupling_db.other_propeller)
            }
        })
    }
}

/// Free-field propagation from `src` to `mic`: delay in samples and `1/r` gain.
pub fn steering_delay_gain(src: &Position, mic: &Position, rate_hz: u32) -> Result<(f64, f64)> {
    let r = distance(src, mic);
    if !(r > 0.0) {
        return Err(Error::Scene("source and microphone coincide".into()));
    }
    Ok((r / SPEED_OF_SOUND * rate_hz as f64, 1.0 / r))
}

/// Delays `x` by `delay` samples (any sign) with a 32-tap Kaiser-windowed sinc.
pub fn fractional_delay(x: &[f64], delay: f64, gain: f64) -> Vec<f64> {
    let n0 = delay.floor();
    let frac = delay - n0;
    let n0 = n0 as i64;
    let half = (FRACTIONAL_DELAY_TAPS / 2) as i64;
    let norm = bessel_i0(FRACTIONAL_DELAY_BETA);
    // taps j in [-(half-1), half]
    let taps: Vec<(i64, f64)> = (1 - half..=half)
        .map(|j| {
            let u = (j as f64 - frac) / half as f64;
            let w = bessel_i0(FRACTIONAL_DELAY_BETA * (1.0 - u * u).max(0.0).sqrt()) / norm;
            (j, sinc(j as f64 - frac) * w)
        })
        .collect();
    let sum: f64 = taps.iter().map(|t| t.1).sum();
    let len = x.len() as i64;
    (0..len)
        .map(|t| {
            let mut acc = 0.0;
            for &(j, h) in &taps {
                let src = t - n0 - j;
                if (0..len).contains(&src) {
                    acc += h * x[src as usize];
                }
            }
            acc * gain / sum
        })
        .collect()
}

fn mean_power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

/// Slowly varying value in `[-1, 1]`: cosine interpolation between random
/// control points every `period` samples.
fn slow_wander(rng: &mut ChaCha8Rng, len: usize, period: usize) -> Vec<f64> {
    let points: Vec<f64> = (0..len / period + 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
    (0..len)
        .map(|t| {
            let i = t / period;
            let f = (t % period) as f64 / period as f64;
            let w = 0.5 - 0.5 * (PI * f).cos();
            points[i] * (1.0 - w) + points[i + 1] * w
        })
        .collect()
}

const EGO_PARTIALS: usize = 20;
const EGO_JITTER: f64 = 0.05;
const EGO_BROADBAND_DB: f64 = -10.0;
const EGO_BROADBAND_CORNER_HZ: f64 = 1000.0;

/// Rotor ego-noise: blade-pass harmonics with slow frequency jitter plus
/// low-passed broadband noise, normalized to unit power.
pub fn synth_ego_noise(rpm: f64, duration_s: f64, rate_hz: u32, seed: u64) -> Result<Vec<f64>> {
    if !(rpm.is_finite() && rpm > 0.0) {
        return Err(Error::InvalidParam(format!("rotor speed must be positive, got {rpm}")));
    }
    let fs = rate_hz as f64;
    let len = (duration_s * fs).round() as usize;
    if len == 0 {
        return Err(Error::InvalidParam("ego-noise duration must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f0 = 2.0 * rpm / 60.0;
    let period = (0.4 * fs) as usize;

    let mut harmonic = vec![0.0; len];
    for k in 1..=EGO_PARTIALS {
        let fk = f0 * k as f64;
        let wander = slow_wander(&mut rng, len, period.max(1));
        let mut phase = rng.gen_range(0.0..TAU);
        if fk * (1.0 + EGO_JITTER) >= fs / 2.0 {
            continue;
        }
        let amp = 1.0 / k as f64;
        for (h, u) in harmonic.iter_mut().zip(&wander) {
            *h += amp * phase.sin();
            phase = (phase + TAU * fk * (1.0 + EGO_JITTER * u) / fs) % TAU;
        }
    }

    let a = (-TAU * EGO_BROADBAND_CORNER_HZ / fs).exp();
    let mut state = 0.0;
    let mut broadband: Vec<f64> = (0..len)
        .map(|_| {
            let w: f64 = StandardNormal.sample(&mut rng);
            state = a * state + (1.0 - a) * w;
            state
        })
        .collect();
    let target = mean_power(&harmonic) * 10f64.powf(EGO_BROADBAND_DB / 10.0);
    let g = (target / mean_power(&broadband)).sqrt();
    broadband.iter_mut().for_each(|b| *b *= g);

    let mut out: Vec<f64> = harmonic.iter().zip(&broadband).map(|(h, b)| h + b).collect();
    let scale = mean_power(&out).sqrt();
    out.iter_mut().for_each(|v| *v /= scale);
    Ok(out)
}

/// Deterministic speech-like test signal: voiced syllables (glottal harmonics
/// through formant resonators), fricative bursts and pauses, starting with
/// half a second of silence.
pub fn synthetic_speech(duration_s: f64, rate_hz: u32, seed: u64) -> Vec<f64> {
    const VOWELS: [[f64; 3]; 5] = [
        [730.0, 1090.0, 2440.0],
        [270.0, 2290.0, 3010.0],
        [300.0, 870.0, 2240.0],
        [530.0, 1840.0, 2480.0],
        [570.0, 840.0, 2410.0],
    ];
    const BANDWIDTHS: [f64; 3] = [80.0, 100.0, 140.0];
    let fs = rate_hz as f64;
    let n = (duration_s * fs).round() as usize;
    let mut out = vec![0.0; n];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ms = |v: f64| (v * fs / 1000.0) as usize;
    let envelope = |i: usize, len: usize, attack: usize, release: usize| -> f64 {
        if i < attack {
            0.5 - 0.5 * (PI * i as f64 / attack as f64).cos()
        } else if i + release > len {
            0.5 - 0.5 * (PI * (len - i) as f64 / release as f64).cos()
        } else {
            1.0
        }
    };

    let mut t = ms(500.0);
    let mut prev = VOWELS[0];
    let mut phase = 0.0f64;
    let base_f0 = rng.gen_range(100.0..125.0);
    while t < n {
        for _ in 0..rng.gen_range(1..=3) {
            if rng.gen_bool(0.3) {
                // fricative: band-passed noise around 4.5 kHz
                let len = ms(rng.gen_range(60.0..120.0));
                let (r, th) = ((-PI * 2000.0 / fs).exp(), TAU * 4500.0_f64.min(0.4 * fs) / fs);
                let (mut y1, mut y2) = (0.0, 0.0);
                for i in 0..len {
                    let w: f64 = StandardNormal.sample(&mut rng);
                    let y = (1.0 - r) * w + 2.0 * r * th.cos() * y1 - r * r * y2;
                    y2 = y1;
                    y1 = y;
                    if t + i < n {
                        out[t + i] += 0.25 * y * envelope(i, len, ms(10.0), ms(20.0));
                    }
                }
                t += len;
            }
            let len = ms(rng.gen_range(120.0..300.0));
            let vowel = VOWELS[rng.gen_range(0..VOWELS.len())];
            let f_start = base_f0 * rng.gen_range(0.95..1.15);
            let f_end = f_start * rng.gen_range(0.8..1.0);
            let mut state = [[0.0f64; 2]; 3];
            for i in 0..len {
                let p = i as f64 / len as f64;
                let f0 = f_start + (f_end - f_start) * p;
                phase = (phase + TAU * f0 / fs) % TAU;
                let harmonics = ((0.45 * fs).min(3800.0) / f0) as usize;
                let mut x: f64 = (1..=harmonics).map(|k| (k as f64 * phase).sin() / k as f64).sum();
                // formant glide from the previous vowel over the first 30%
                let glide = (p / 0.3).min(1.0);
                for (j, st) in state.iter_mut().enumerate() {
                    let f = prev[j] + (vowel[j] - prev[j]) * glide;
                    let r = (-PI * BANDWIDTHS[j] / fs).exp();
                    let th = TAU * f.min(0.45 * fs) / fs;
                    let y = (1.0 - r) * x + 2.0 * r * th.cos() * st[0] - r * r * st[1];
                    st[1] = st[0];
                    st[0] = y;
                    x = y;
                }
                if t + i < n {
                    out[t + i] += x * envelope(i, len, ms(20.0), ms(30.0));
                }
            }
            prev = vowel;
            t += len + ms(rng.gen_range(20.0..60.0));
        }
        t += if rng.gen_bool(0.2) {
            ms(rng.gen_range(400.0..700.0))
        } else {
            ms(rng.gen_range(80.0..250.0))
        };
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelRole {
    Array,
    Propeller,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelInfo {
    pub index: usize,
    pub role: ChannelRole,
    pub position: Position,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub seed: u64,
    pub sample_rate_hz: u32,
    pub frames: usize,
    pub target_snr_db: f64,
    pub achieved_snr_db: f64,
    pub external_snr_db: Option<f64>,
    pub reference_channel: usize,
    pub external_channel: Option<usize>,
    pub rotor_speeds_rpm: Vec<f64>,
    pub speech_source: Option<String>,
    pub channels: Vec<ChannelInfo>,
}

#[derive(Debug, Clone)]
pub struct SceneOutput {
    pub mixture: AudioClip,
    pub speech_image: AudioClip,
    pub noise_image: AudioClip,
    pub oracle_mask: SppMask,
    pub manifest: SceneManifest,
}

/// Renders a scene from the speech file named in the config.
pub fn render_scene(cfg: &SceneConfig) -> Result<SceneOutput> {
    let path = cfg
        .speech_path
        .as_ref()
        .ok_or_else(|| Error::Config(vec!["scene needs a speech_path".into()]))?;
    let mut out = render_scene_with_speech(cfg, &read_wav(path)?)?;
    out.manifest.speech_source = Some(path.display().to_string());
    Ok(out)
}

fn ratio_db(s: &[f64], n: &[f64]) -> f64 {
    10.0 * (mean_power(s) / mean_power(n)).log10()
}

/// Renders a scene around an in-memory mono speech clip.
pub fn render_scene_with_speech(cfg: &SceneConfig, speech: &AudioClip) -> Result<SceneOutput> {
    cfg.validate()?;
    if speech.channels() != 1 {
        return Err(Error::Scene(format!("speech must be mono, got {} channels", speech.channels())));
    }
    let speech = resample(speech, cfg.sample_rate_hz)?;
    let s = speech.channel(0).to_vec();
    if mean_power(&s) == 0.0 {
        return Err(Error::Scene("speech has no energy, SNR target unreachable".into()));
    }
    let len = s.len();
    let fs = cfg.sample_rate_hz;
    let geo = &cfg.geometry;
    let mics = geo.mic_positions();
    let n_mics = mics.len();
    let n_embedded = geo.array_mics.len() + geo.propeller_mics.len();
    let ext = geo.external_channel();

    // speech images, delays relative to the reference mic
    let steer: Vec<(f64, f64)> = mics
        .iter()
        .map(|m| steering_delay_gain(&geo.source, m, fs))
        .collect::<Result<_>>()?;
    let (ref_delay, ref_gain) = steer[cfg.reference_mic];
    let prop_gain = 10f64.powf(cfg.propeller_speech_gain_db / 20.0);
    let speech_rows: Vec<Vec<f64>> = (0..n_mics)
        .into_par_iter()
        .map(|m| {
            let (d, g) = steer[m];
            let extra = if (geo.array_mics.len()..n_embedded).contains(&m) { prop_gain } else { 1.0 };
            fractional_delay(&s, d - ref_delay, g / ref_gain * extra)
        })
        .collect();

    // ego-noise: each rotor radiates from `rotor_subsources` incoherent points
    // spread on its blade-tip circle
    let duration = len as f64 / fs as f64;
    let k_sub = cfg.rotor_subsources;
    let sources: Vec<(usize, Position)> = (0..ROTORS)
        .flat_map(|r| (0..k_sub).map(move |j| (r, j)))
        .map(|(r, j)| {
            let c = geo.rotors[r];
            if k_sub == 1 {
                return (r, c);
            }
            let a = TAU * j as f64 / k_sub as f64 + PI / 4.0 * r as f64;
            (r, [c[0] + cfg.rotor_radius_m * a.cos(), c[1] + cfg.rotor_radius_m * a.sin(), c[2]])
        })
        .collect();
    let ego: Vec<Vec<f64>> = (0..sources.len())
        .into_par_iter()
        .map(|i| {
            let seed = cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64 + 1);
            synth_ego_noise(cfg.rotor_speeds_rpm[sources[i].0], duration, fs, seed).map(|mut v| {
                v.resize(len, 0.0);
                v
            })
        })
        .collect::<Result<_>>()?;
    let coupling = cfg.coupling_matrix();
    let sub_gain = 1.0 / (k_sub as f64).sqrt();
    let path_delay = |m: usize, i: usize| distance(&mics[m], &sources[i].1) / SPEED_OF_SOUND * fs as f64;
    let min_delay = (0..n_embedded)
        .flat_map(|m| (0..sources.len()).map(move |i| (m, i)))
        .map(|(m, i)| path_delay(m, i))
        .fold(f64::INFINITY, f64::min);
    let mut ego_rows: Vec<Vec<f64>> = (0..n_mics)
        .into_par_iter()
        .map(|m| {
            let mut acc = vec![0.0; len];
            for (i, e) in ego.iter().enumerate() {
                let r = sources[i].0;
                let gain = sub_gain * if m < n_embedded { coupling[[m, r]] } else { 1.0 };
                let img = fractional_delay(e, path_delay(m, i) - min_delay, gain);
                acc.iter_mut().zip(img).for_each(|(a, v)| *a += v);
            }
            acc
        })
        .collect();

    // sensor noise relative to the ego-noise at the reference mic
    let sensor_power = mean_power(&ego_rows[cfg.reference_mic]) * 10f64.powf(cfg.sensor_noise_db / 10.0);
    for (m, row) in ego_rows.iter_mut().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1000 + m as u64);
        let sd = sensor_power.sqrt();
        for v in row.iter_mut() {
            let w: f64 = StandardNormal.sample(&mut rng);
            *v += sd * w;
        }
    }

    // calibrate: one gain for all embedded mics, a separate one for the external mic
    let want = |snr_db: f64, sp: &[f64], nz: &[f64]| {
        (mean_power(sp) / mean_power(nz) / 10f64.powf(snr_db / 10.0)).sqrt()
    };
    let k_emb = want(cfg.target_snr_db, &speech_rows[cfg.reference_mic], &ego_rows[cfg.reference_mic]);
    let ext_target = cfg.target_snr_db + cfg.external_snr_offset_db;
    for (m, row) in ego_rows.iter_mut().enumerate() {
        let k = if Some(m) == ext { want(ext_target, &speech_rows[m], row) } else { k_emb };
        row.iter_mut().for_each(|v| *v *= k);
    }

    let to_clip = |rows: &[Vec<f64>]| AudioClip::from_channels(rows.to_vec(), fs);
    let speech_image = to_clip(&speech_rows)?;
    let noise_image = to_clip(&ego_rows)?;
    let mixture = AudioClip::new(speech_image.samples() + noise_image.samples(), fs)?;

    let achieved = ratio_db(&speech_rows[cfg.reference_mic], &ego_rows[cfg.reference_mic]);
    let oracle_mask = oracle_mask(&speech_image, &noise_image, cfg.reference_mic)?;

    let channels = mics
        .iter()
        .enumerate()
        .map(|(i, p)| ChannelInfo {
            index: i,
            role: if i < geo.array_mics.len() {
                ChannelRole::Array
            } else if i < n_embedded {
                ChannelRole::Propeller
            } else {
                ChannelRole::External
            },
            position: *p,
        })
        .collect();
    Ok(SceneOutput {
        mixture,
        speech_image,
        noise_image,
        oracle_mask,
        manifest: SceneManifest {
            seed: cfg.seed,
            sample_rate_hz: fs,
            frames: len,
            target_snr_db: cfg.target_snr_db,
            achieved_snr_db: achieved,
            external_snr_db: ext.map(|e| ratio_db(&speech_rows[e], &ego_rows[e])),
            reference_channel: cfg.reference_mic,
            external_channel: ext,
            rotor_speeds_rpm: cfg.rotor_speeds_rpm.clone(),
            speech_source: None,
            channels,
        },
    })
}

/// Ground-truth activity: speech power above noise power per bin at `channel`.
pub fn oracle_mask(speech_image: &AudioClip, noise_image: &AudioClip, channel: usize) -> Result<SppMask> {
    let params = StftParams {
        sample_rate_hz: speech_image.sample_rate_hz(),
        ..StftParams::default()
    };
    let s = analyze(&speech_image.select_channels(&[channel])?, &params)?;
    let n = analyze(&noise_image.select_channels(&[channel])?, &params)?;
    let sd = s.data().index_axis(Axis(2), 0).to_owned();
    let nd = n.data().index_axis(Axis(2), 0);
    let mut beta = Array2::from_elem(sd.dim(), false);
    ndarray::Zip::from(&mut beta)
        .and(&sd)
        .and(&nd)
        .for_each(|b, sv, nv| *b = sv.norm_sqr() > nv.norm_sqr());
    Ok(SppMask::from_beta(beta, Some(SppSource::Oracle)))
}

/// Array partition for the configuration grid: the first `m_speech_noise`
/// array mics, the four propeller mics as noise references, reference mic 0.
pub fn grid_partition(m_speech_noise: usize) -> Result<ChannelPartition> {
    if m_speech_noise == 0 || m_speech_noise > ARRAY_MICS {
        return Err(Error::InvalidParam(format!(
            "M_S+N must be in 1..={ARRAY_MICS}, got {m_speech_noise}"
        )));
    }
    ChannelPartition::new(
        (0..m_speech_noise).collect(),
        (PROPELLER_CHANNEL0..PROPELLER_CHANNEL0 + ROTORS).collect(),
        0,
    )
}

pub const SUITE_SNRS_DB: [f64; 3] = [-20.0, -10.0, 0.0];
pub const SUITE_ARRAY_SIZES: [usize; 3] = [4, 8, 12];
pub const SUITE_SPP_MODES: [SppMode; 3] = [SppMode::Internal, SppMode::External, SppMode::Oracle];

/// One cell of the configuration sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteCell {
    pub scene: SceneConfig,
    pub partition: ChannelPartition,
    pub spp_mode: SppMode,
    pub method: Method,
}

impl SuiteCell {
    /// Stable identifier such as `snr-10_msn8_internal_pk-mwf`.
    pub fn key(&self) -> String {
        format!(
            "snr{}_msn{}_{}_{}",
            self.scene.target_snr_db,
            self.partition.m_speech_noise(),
            self.spp_mode,
            self.method
        )
    }
}

/// SNR × array size × SPP mode × method, 81 cells.
pub fn default_suite() -> Vec<SuiteCell> {
    let mut cells = Vec::with_capacity(81);
    for snr in SUITE_SNRS_DB {
        for m in SUITE_ARRAY_SIZES {
            for spp_mode in SUITE_SPP_MODES {
                for method in Method::ALL {
                    cells.push(SuiteCell {
                        scene: SceneConfig {
                            target_snr_db: snr,
                            ..SceneConfig::default()
                        },
                        partition: grid_partition(m).expect("grid sizes are valid"),
                        spp_mode,
                        method,
                    });
                }
            }
        }
    }
    cells
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex64, FftPlanner};

    fn short_speech(seconds: f64) -> AudioClip {
        AudioClip::mono(synthetic_speech(seconds, 16_000, 7), 16_000).unwrap()
    }

    fn power_spectrum(x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        let mut buf: Vec<Complex64> = x
            .iter()
            .enumerate()
            .map(|(i, v)| Complex64::new(v * (0.5 - 0.5 * (TAU * i as f64 / n).cos()), 0.0))
            .collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        buf[..x.len() / 2].iter().map(|c| c.norm_sqr()).collect()
    }

    #[test]
    fn steering_examples() {
        let src = [0.0, 0.0, 0.0];
        let (d, g) = steering_delay_gain(&src, &[2.0, 0.0, 0.0], 16_000).unwrap();
        let (d2, g2) = steering_delay_gain(&src, &[0.0, 2.0, 0.0], 16_000).unwrap();
        assert_eq!(d - d2, 0.0);
        assert_eq!(g / g2, 1.0);
        let (far, _) = steering_delay_gain(&src, &[345.0, 0.0, 0.0], 16_000).unwrap();
        assert!((far - d - 16_000.0).abs() < 1e-9);
        assert!(steering_delay_gain(&src, &src, 16_000).is_err());
    }

    #[test]
    fn fractional_delay_integer_and_fraction() {
        let x: Vec<f64> = (0..200).map(|i| (i as f64 * 0.05).sin()).collect();
        let y = fractional_delay(&x, 5.0, 1.0);
        for t in 5..200 {
            assert!((y[t] - x[t - 5]).abs() < 1e-12);
        }
        let y = fractional_delay(&x, -3.0, 2.0);
        for t in 0..197 {
            assert!((y[t] - 2.0 * x[t + 3]).abs() < 1e-12);
        }
        // a slow sine delayed by 2.5 samples matches the analytic shift
        let y = fractional_delay(&x, 2.5, 1.0);
        for t in 40..160 {
            assert!((y[t] - ((t as f64 - 2.5) * 0.05).sin()).abs() < 1e-4);
        }
    }

    #[test]
    fn rendered_lag_matches_geometry() {
        let cfg = SceneConfig::default();
        let scene = render_scene_with_speech(&cfg, &short_speech(2.0)).unwrap();
        let s = scene.speech_image.samples();
        let fs = cfg.sample_rate_hz;
        for (a, b) in [(0usize, 2usize), (1, 9), (4, 11)] {
            let mics = &cfg.geometry.array_mics;
            let (da, _) = steering_delay_gain(&cfg.geometry.source, &mics[a], fs).unwrap();
            let (db, _) = steering_delay_gain(&cfg.geometry.source, &mics[b], fs).unwrap();
            let xa = s.row(a);
            let xb = s.row(b);
            let xc = |lag: i64| -> f64 {
                (40..xa.len() as i64 - 40)
                    .map(|t| xa[t as usize] * xb[(t + lag) as usize])
                    .sum()
            };
            let (best, _) = (-30..=30)
                .map(|l| (l, xc(l)))
                .max_by(|p, q| p.1.total_cmp(&q.1))
                .unwrap();
            // parabolic refinement around the integer peak
            let (ym, y0, yp) = (xc(best - 1), xc(best), xc(best + 1));
            let lag = best as f64 + 0.5 * (ym - yp) / (ym - 2.0 * y0 + yp);
            assert!((lag - (db - da)).abs() <= 0.5, "mics {a},{b}: {lag} vs {}", db - da);
        }
    }

    #[test]
    fn ego_noise_unit_power_and_deterministic() {
        let a = synth_ego_noise(4000.0, 1.0, 16_000, 3).unwrap();
        assert!((mean_power(&a) - 1.0).abs() <= 1e-6);
        assert_eq!(a, synth_ego_noise(4000.0, 1.0, 16_000, 3).unwrap());
        assert_ne!(a, synth_ego_noise(4000.0, 1.0, 16_000, 4).unwrap());
        assert!(synth_ego_noise(0.0, 1.0, 16_000, 3).is_err());
    }

    #[test]
    fn ego_noise_peaks_on_harmonics() {
        let x = synth_ego_noise(3000.0, 2.0, 16_000, 5).unwrap();
        let spec = power_spectrum(&x);
        let hz_per_bin = 16_000.0 / x.len() as f64;
        let in_band = |f: f64, k: f64| (f - 100.0 * k).abs() <= 100.0 * k * EGO_JITTER + hz_per_bin;
        // strongest local maxima, at least 40 Hz apart
        let mut idx: Vec<usize> =
            (1..spec.len() - 1).filter(|&k| spec[k] >= spec[k - 1] && spec[k] >= spec[k + 1]).collect();
        idx.sort_by(|a, b| spec[*b].total_cmp(&spec[*a]));
        let mut peaks: Vec<usize> = Vec::new();
        for k in idx {
            if peaks.iter().all(|p| (*p as f64 - k as f64).abs() * hz_per_bin > 40.0) {
                peaks.push(k);
            }
            if peaks.len() == 10 {
                break;
            }
        }
        for p in peaks {
            let f = p as f64 * hz_per_bin;
            let k = (f / 100.0).round().max(1.0);
            assert!(k <= 20.0 && in_band(f, k), "peak at {f} Hz");
        }
        // every low partial stands well clear of the spectral median
        let mut sorted = spec.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        for k in 1..=10 {
            let band_max = (0..spec.len())
                .filter(|&b| in_band(b as f64 * hz_per_bin, k as f64))
                .map(|b| spec[b])
                .fold(0.0, f64::max);
            assert!(band_max > 10.0 * median, "partial {k}");
        }
    }

    #[test]
    fn speech_signal_shape() {
        let s = synthetic_speech(3.0, 16_000, 1);
        assert_eq!(s.len(), 48_000);
        assert!(s[..8000].iter().all(|v| *v == 0.0));
        assert!((s.iter().fold(0.0f64, |m, v| m.max(v.abs())) - 0.5).abs() < 1e-12);
        assert_eq!(s, synthetic_speech(3.0, 16_000, 1));
        // pauses exist: some 50 ms windows after the lead-in are silent
        let quiet = s[8000..]
            .chunks(800)
            .filter(|c| c.iter().map(|v| v * v).sum::<f64>() < 1e-8)
            .count();
        assert!(quiet >= 1);
    }

    #[test]
    fn calibration_and_structure() {
        let speech = short_speech(3.0);
        for target in [-20.0, -10.0, 0.0] {
            let cfg = SceneConfig {
                target_snr_db: target,
                ..SceneConfig::default()
            };
            let sc = render_scene_with_speech(&cfg, &speech).unwrap();
            assert!((sc.manifest.achieved_snr_db - target).abs() <= 0.1);
            let ext = sc.manifest.external_snr_db.unwrap();
            assert!((ext - target - 15.0).abs() <= 0.1);
            assert_eq!(sc.mixture.channels(), 17);
            assert_eq!(sc.mixture.frames(), speech.frames());
            let sum = sc.speech_image.samples() + sc.noise_image.samples();
            assert_eq!(&sum, sc.mixture.samples());
        }
    }

    #[test]
    fn propeller_speech_is_negligible() {
        let sc = render_scene_with_speech(&SceneConfig::default(), &short_speech(2.0)).unwrap();
        let p = |c: usize| mean_power(&sc.speech_image.channel(c).to_vec());
        for c in PROPELLER_CHANNEL0..PROPELLER_CHANNEL0 + ROTORS {
            assert!(10.0 * (p(c) / p(0)).log10() <= -20.0);
        }
    }

    #[test]
    fn own_rotor_dominates_propeller_mic() {
        let cfg = SceneConfig::default();
        let c = cfg.coupling_matrix();
        let ego = synth_ego_noise(4000.0, 1.0, 16_000, 9).unwrap();
        for k in 0..ROTORS {
            let m = PROPELLER_CHANNEL0 + k;
            let own = mean_power(&fractional_delay(&ego, 0.7, c[[m, k]]));
            for r in (0..ROTORS).filter(|r| *r != k) {
                let other = mean_power(&fractional_delay(&ego, 3.3, c[[m, r]]));
                assert!(10.0 * (own / other).log10() >= 12.0 - 0.05);
            }
        }
    }

    #[test]
    fn snr_target_scales_only_noise() {
        let speech = short_speech(2.0);
        let a = render_scene_with_speech(&SceneConfig::default(), &speech).unwrap();
        let b = render_scene_with_speech(
            &SceneConfig {
                target_snr_db: -10.0 + 20.0 * 2f64.log10(),
                ..SceneConfig::default()
            },
            &speech,
        )
        .unwrap();
        assert_eq!(a.speech_image, b.speech_image);
        // embedded channels: noise amplitude halves
        for m in 0..EXTERNAL_CHANNEL {
            for (x, y) in a.noise_image.channel(m).iter().zip(b.noise_image.channel(m).iter()) {
                assert!((0.5 * x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }

    #[test]
    fn oracle_mask_off_in_silence() {
        let sc = render_scene_with_speech(&SceneConfig::default(), &short_speech(2.0)).unwrap();
        // the first 0.5 s is silent speech; frames fully inside it are inactive
        for l in 0..((8000 - 512) / 256) {
            assert!(sc.oracle_mask.beta.column(l).iter().all(|b| !b));
        }
        assert!(sc.oracle_mask.active_fraction() > 0.0);
    }

    #[test]
    fn deterministic_render() {
        let speech = short_speech(1.5);
        let a = render_scene_with_speech(&SceneConfig::default(), &speech).unwrap();
        let b = render_scene_with_speech(&SceneConfig::default(), &speech).unwrap();
        assert_eq!(a.mixture, b.mixture);
        assert_eq!(a.manifest, b.manifest);
    }

    #[test]
    fn config_validation() {
        assert!(SceneConfig::default().validate().is_ok());
        let bad = SceneConfig {
            rotor_speeds_rpm: vec![4000.0, -1.0],
            target_snr_db: f64::NAN,
            reference_mic: 40,
            ..SceneConfig::default()
        };
        match bad.validate() {
            Err(Error::Config(v)) => assert_eq!(v.len(), 4, "{v:?}"),
            other => panic!("{other:?}"),
        }
        assert!(render_scene(&SceneConfig::default()).is_err());
        let silent = AudioClip::mono(vec![0.0; 16_000], 16_000).unwrap();
        assert!(render_scene_with_speech(&SceneConfig::default(), &silent).is_err());
    }

    #[test]
    fn suite_shape() {
        let suite = default_suite();
        assert_eq!(suite.len(), 81);
        let mut keys: Vec<String> = suite.iter().map(SuiteCell::key).collect();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), 81);
        for cell in &suite {
            assert!(cell.scene.validate().is_ok());
            let p = &cell.partition;
            p.validate(Some(17)).unwrap();
            assert!(p.m() <= 16);
            assert!(p.speech_noise_channels.iter().all(|c| *c < ARRAY_MICS));
            assert!(p.noise_only_channels.iter().all(|c| (ARRAY_MICS..EXTERNAL_CHANNEL).contains(c)));
        }
    }
}
