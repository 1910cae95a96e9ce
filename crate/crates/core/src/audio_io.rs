//! Multichannel audio clips, RIFF/WAVE reading and writing, and rational
//! polyphase resampling.
//!
//! Samples are kept de-interleaved in memory as a `channels × frames` matrix
//! of `f64`, normalized so that integer full scale maps to `[-1, 1)`.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Multichannel time-domain signal.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Array2<f64>,
    sample_rate_hz: u32,
}

impl AudioClip {
    /// Builds a clip from a `channels × frames` matrix.
    pub fn new(samples: Array2<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::InvalidClip("sample rate must be positive".into()));
        }
        if samples.nrows() == 0 {
            return Err(Error::InvalidClip("clip has no channels".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidClip("non-finite sample".into()));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn from_channels(channels: Vec<Vec<f64>>, sample_rate_hz: u32) -> Result<Self> {
        let n_ch = channels.len();
        let n = channels.first().map_or(0, Vec::len);
        if channels.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidClip("channels differ in length".into()));
        }
        let flat: Vec<f64> = channels.into_iter().flatten().collect();
        let samples = Array2::from_shape_vec((n_ch, n), flat)
            .map_err(|e| Error::InvalidClip(e.to_string()))?;
        Self::new(samples, sample_rate_hz)
    }

    pub fn mono(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        Self::from_channels(vec![samples], sample_rate_hz)
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn into_samples(self) -> Array2<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn frames(&self) -> usize {
        self.samples.ncols()
    }

    pub fn channel(&self, index: usize) -> ArrayView1<'_, f64> {
        self.samples.row(index)
    }

    /// Returns a clip holding the listed channels in the given order.
    pub fn select_channels(&self, indices: &[usize]) -> Result<Self> {
        for &i in indices {
            if i >= self.channels() {
                return Err(Error::ChannelOutOfRange {
                    index: i,
                    count: self.channels(),
                });
            }
        }
        Self::new(self.samples.select(Axis(0), indices), self.sample_rate_hz)
    }

    pub fn duration_s(&self) -> f64 {
        self.frames() as f64 / self.sample_rate_hz as f64
    }
}

/// Sample encoding used by [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BitDepth {
    #[serde(rename = "16")]
    Int16,
    #[serde(rename = "32f")]
    Float32,
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Reads a PCM (16/24/32-bit integer) or IEEE float (32/64-bit) WAV file.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Wav("missing RIFF/WAVE signature".into()));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start.saturating_add(size).min(bytes.len());
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::Wav("fmt chunk too short".into()));
                }
                let mut tag = u16_at(body, 0);
                let channels = u16_at(body, 2);
                let rate = u32_at(body, 4);
                let bits = u16_at(body, 14);
                if tag == FORMAT_EXTENSIBLE {
                    if body.len() < 26 {
                        return Err(Error::Wav("extensible fmt chunk too short".into()));
                    }
                    // first two bytes of the subformat GUID carry the format tag
                    tag = u16_at(body, 24);
                }
                fmt = Some((tag, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word aligned
        pos = body_start + size + (size & 1);
    }

    let (tag, channels, rate, bits) = fmt.ok_or_else(|| Error::Wav("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::Wav("no data chunk".into()))?;
    if channels == 0 {
        return Err(Error::Wav("zero channels".into()));
    }
    if rate == 0 {
        return Err(Error::Wav("zero sample rate".into()));
    }

    let n_ch = channels as usize;
    let width = match (tag, bits) {
        (FORMAT_PCM, 16) => 2,
        (FORMAT_PCM, 24) => 3,
        (FORMAT_PCM, 32) | (FORMAT_IEEE_FLOAT, 32) => 4,
        (FORMAT_IEEE_FLOAT, 64) => 8,
        _ => {
            return Err(Error::UnsupportedCodec {
                format_tag: tag,
                bits,
            })
        }
    };
    let frames = data.len() / (width * n_ch);
    if frames == 0 {
        return Err(Error::EmptyAudio);
    }

    let mut samples = Array2::<f64>::zeros((n_ch, frames));
    for f in 0..frames {
        for c in 0..n_ch {
            let at = (f * n_ch + c) * width;
            let s = &data[at..at + width];
            let v = match (tag, bits) {
                (FORMAT_PCM, 16) => i16::from_le_bytes([s[0], s[1]]) as f64 / 32_768.0,
                (FORMAT_PCM, 24) => {
                    let raw = i32::from_le_bytes([0, s[0], s[1], s[2]]) >> 8;
                    raw as f64 / 8_388_608.0
                }
                (FORMAT_PCM, 32) => {
                    i32::from_le_bytes([s[0], s[1], s[2], s[3]]) as f64 / 2_147_483_648.0
                }
                (FORMAT_IEEE_FLOAT, 32) => f32::from_le_bytes([s[0], s[1], s[2], s[3]]) as f64,
                _ => f64::from_le_bytes(s.try_into().expect("8-byte sample")),
            };
            samples[[c, f]] = v;
        }
    }
    AudioClip::new(samples, rate)
}

/// Writes `clip` as a canonical 44-byte-header WAV file.
///
/// Samples are clamped to `[-1, 1]` before 16-bit quantization; float output
/// is written unclamped.
pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>, bit_depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_wav(clip, bit_depth)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_wav(clip: &AudioClip, bit_depth: BitDepth) -> Result<Vec<u8>> {
    if clip.frames() == 0 {
        return Err(Error::EmptyAudio);
    }
    let n_ch = clip.channels();
    let (tag, width) = match bit_depth {
        BitDepth::Int16 => (FORMAT_PCM, 2usize),
        BitDepth::Float32 => (FORMAT_IEEE_FLOAT, 4usize),
    };
    let data_len = clip.frames() * n_ch * width;
    let block_align = (n_ch * width) as u16;
    let rate = clip.sample_rate_hz();

    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&(n_ch as u16).to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&(rate * block_align as u32).to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&((width * 8) as u16).to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());

    let s = clip.samples();
    for f in 0..clip.frames() {
        for c in 0..n_ch {
            let v = s[[c, f]];
            match bit_depth {
                BitDepth::Int16 => {
                    let q = (v.clamp(-1.0, 1.0) * 32_768.0)
                        .round()
                        .clamp(-32_768.0, 32_767.0) as i16;
                    out.extend_from_slice(&q.to_le_bytes());
                }
                BitDepth::Float32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            }
        }
    }
    Ok(out)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
pub(crate) fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

pub(crate) fn kaiser(n: usize, beta: f64) -> Vec<f64> {
    let denom = bessel_i0(beta);
    let m = (n - 1) as f64;
    (0..n)
        .map(|i| {
            let r = 2.0 * i as f64 / m - 1.0;
            bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / denom
        })
        .collect()
}

pub(crate) fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

const TAPS_PER_PHASE: usize = 64;
const CUTOFF_FACTOR: f64 = 0.9;
const KAISER_BETA: f64 = 8.0;
const MAX_RATIO_TERM: u64 = 1024;

/// Rational polyphase resampler: upsample by `up`, low-pass, decimate by `down`.
#[derive(Debug, Clone)]
pub struct Resampler {
    up: usize,
    down: usize,
    taps: Vec<f64>,
}

impl Resampler {
    pub fn new(from_hz: u32, to_hz: u32) -> Result<Self> {
        if from_hz == 0 || to_hz == 0 {
            return Err(Error::Resample {
                from: from_hz,
                to: to_hz,
                reason: "rates must be positive".into(),
            });
        }
        let g = gcd(from_hz as u64, to_hz as u64);
        let up = to_hz as u64 / g;
        let down = from_hz as u64 / g;
        if up > MAX_RATIO_TERM || down > MAX_RATIO_TERM {
            return Err(Error::Resample {
                from: from_hz,
                to: to_hz,
                reason: format!("ratio {up}/{down} exceeds the {MAX_RATIO_TERM} term bound"),
            });
        }
        let (up, down) = (up as usize, down as usize);

        // Cutoff as a fraction of the upsampled rate's Nyquist.
        let cutoff = CUTOFF_FACTOR / up.max(down) as f64;
        // One phase per step of the faster of the two grids.
        let len = TAPS_PER_PHASE * up.max(down) + 1;
        let center = (len - 1) as f64 / 2.0;
        let window = kaiser(len, KAISER_BETA);
        let taps = (0..len)
            .map(|i| cutoff * sinc(cutoff * (i as f64 - center)) * window[i] * up as f64)
            .collect();
        Ok(Self { up, down, taps })
    }

    pub fn ratio(&self) -> (usize, usize) {
        (self.up, self.down)
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        (input_len * self.up).div_ceil(self.down)
    }

    pub fn process(&self, input: &[f64]) -> Vec<f64> {
        let (up, down) = (self.up as i64, self.down as i64);
        let n_taps = self.taps.len() as i64;
        let center = (n_taps - 1) / 2;
        let n_in = input.len() as i64;
        (0..self.output_len(input.len()) as i64)
            .map(|n| {
                // upsampled-domain index aligned with the filter center
                let j0 = n * down + center;
                let mut k = j0.rem_euclid(up);
                let mut acc = 0.0;
                while k < n_taps {
                    let src = (j0 - k) / up;
                    if src >= 0 && src < n_in {
                        acc += self.taps[k as usize] * input[src as usize];
                    }
                    k += up;
                }
                acc
            })
            .collect()
    }
}

/// Resamples every channel of `clip` to `target_rate_hz`.
pub fn resample(clip: &AudioClip, target_rate_hz: u32) -> Result<AudioClip> {
    if target_rate_hz == 0 {
        return Err(Error::Resample {
            from: clip.sample_rate_hz(),
            to: 0,
            reason: "target rate must be positive".into(),
        });
    }
    if target_rate_hz == clip.sample_rate_hz() {
        return Ok(clip.clone());
    }
    let rs = Resampler::new(clip.sample_rate_hz(), target_rate_hz)?;
    let channels = clip
        .samples()
        .rows()
        .into_iter()
        .map(|row| rs.process(&row.to_vec()))
        .collect();
    AudioClip::from_channels(channels, target_rate_hz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_clip(ch: usize, n: usize, seed: u64) -> AudioClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = Array2::from_shape_fn((ch, n), |_| rng.gen_range(-1.0..1.0));
        AudioClip::new(s, 16_000).unwrap()
    }

    #[test]
    fn clip_rejects_bad_input() {
        assert!(AudioClip::new(Array2::zeros((1, 4)), 0).is_err());
        let mut s = Array2::zeros((1, 4));
        s[[0, 2]] = f64::NAN;
        assert!(AudioClip::new(s, 16_000).is_err());
        assert!(AudioClip::from_channels(vec![vec![0.0; 3], vec![0.0; 4]], 8000).is_err());
    }

    #[test]
    fn two_channel_int16_shape() {
        let clip = random_clip(2, 160, 1);
        let bytes = encode_wav(&clip, BitDepth::Int16).unwrap();
        let back = decode_wav(&bytes).unwrap();
        assert_eq!(back.channels(), 2);
        assert_eq!(back.frames(), 160);
        assert_eq!(back.sample_rate_hz(), 16_000);
    }

    #[test]
    fn int16_full_scale_normalization() {
        let mut bytes = encode_wav(&AudioClip::mono(vec![0.0], 16_000).unwrap(), BitDepth::Int16)
            .unwrap();
        bytes[44..46].copy_from_slice(&32_767i16.to_le_bytes());
        let clip = decode_wav(&bytes).unwrap();
        assert_eq!(clip.samples()[[0, 0]], 32_767.0 / 32_768.0);
    }

    #[test]
    fn int16_round_trip_error_bound() {
        for seed in 0..5 {
            let clip = random_clip(3, 1000, seed);
            let back = decode_wav(&encode_wav(&clip, BitDepth::Int16).unwrap()).unwrap();
            let err = (&back.samples().view() - &clip.samples().view())
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(err <= 2f64.powi(-15), "err {err}");
        }
    }

    #[test]
    fn float32_round_trip_bit_exact() {
        let clip = random_clip(2, 500, 9);
        let quantized = clip.samples().mapv(|v| v as f32 as f64);
        let clip = AudioClip::new(quantized, 16_000).unwrap();
        let back = decode_wav(&encode_wav(&clip, BitDepth::Float32).unwrap()).unwrap();
        assert_eq!(back, clip);
    }

    #[test]
    fn silence_file_length() {
        let clip = AudioClip::new(Array2::zeros((2, 100)), 16_000).unwrap();
        assert_eq!(encode_wav(&clip, BitDepth::Int16).unwrap().len(), 44 + 400);
        assert_eq!(encode_wav(&clip, BitDepth::Float32).unwrap().len(), 44 + 800);
    }

    #[test]
    fn clamps_before_quantization() {
        let clip = AudioClip::mono(vec![1.5, -2.0], 16_000).unwrap();
        let back = decode_wav(&encode_wav(&clip, BitDepth::Int16).unwrap()).unwrap();
        assert_eq!(back.samples()[[0, 0]], 32_767.0 / 32_768.0);
        assert_eq!(back.samples()[[0, 1]], -1.0);
    }

    #[test]
    fn decodes_24_bit_and_extensible() {
        // hand-built WAVE_FORMAT_EXTENSIBLE, 24-bit mono, two samples
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(4u32 + 8 + 40 + 8 + 6).to_le_bytes());
        b.extend_from_slice(b"WAVEfmt ");
        b.extend_from_slice(&40u32.to_le_bytes());
        b.extend_from_slice(&FORMAT_EXTENSIBLE.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&48_000u32.to_le_bytes());
        b.extend_from_slice(&(48_000u32 * 3).to_le_bytes());
        b.extend_from_slice(&3u16.to_le_bytes());
        b.extend_from_slice(&24u16.to_le_bytes());
        b.extend_from_slice(&22u16.to_le_bytes());
        b.extend_from_slice(&24u16.to_le_bytes());
        b.extend_from_slice(&4u32.to_le_bytes());
        b.extend_from_slice(&FORMAT_PCM.to_le_bytes());
        b.extend_from_slice(&[0u8; 14]);
        b.extend_from_slice(b"data");
        b.extend_from_slice(&6u32.to_le_bytes());
        b.extend_from_slice(&[0x00, 0x00, 0x40, 0x00, 0x00, 0xC0]);
        let clip = decode_wav(&b).unwrap();
        assert_eq!(clip.sample_rate_hz(), 48_000);
        assert_eq!(clip.samples()[[0, 0]], 0.5);
        assert_eq!(clip.samples()[[0, 1]], -0.5);
    }

    #[test]
    fn rejects_unsupported_and_empty() {
        let mut bytes = encode_wav(&AudioClip::mono(vec![0.0], 8000).unwrap(), BitDepth::Int16)
            .unwrap();
        bytes[20..22].copy_from_slice(&2u16.to_le_bytes());
        assert!(matches!(
            decode_wav(&bytes),
            Err(Error::UnsupportedCodec { format_tag: 2, .. })
        ));

        let mut bytes = encode_wav(&AudioClip::mono(vec![0.0], 8000).unwrap(), BitDepth::Int16)
            .unwrap();
        bytes.truncate(44);
        bytes[40..44].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_wav(&bytes), Err(Error::EmptyAudio)));
        assert!(decode_wav(b"not a wav").is_err());
        assert!(read_wav("/nonexistent/file.wav").is_err());
    }

    #[test]
    fn resample_identity_and_errors() {
        let clip = random_clip(2, 100, 3);
        assert_eq!(resample(&clip, 16_000).unwrap(), clip);
        assert!(resample(&clip, 0).is_err());
        // 16000/16001 reduces to a ratio with terms far above the bound
        assert!(resample(&clip, 16_001).is_err());
    }

    #[test]
    fn resample_44k1_to_16k_ratio_and_length() {
        let rs = Resampler::new(44_100, 16_000).unwrap();
        assert_eq!(rs.ratio(), (160, 441));
        assert_eq!(rs.output_len(44_100), 16_000);
        assert_eq!(rs.output_len(1000), 363);
    }

    fn fit_amplitude(x: &[f64], f: f64, rate: f64) -> f64 {
        // least-squares projection onto sin/cos at a known frequency
        let (mut sc, mut ss, mut cc, mut xs, mut xc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (i, &v) in x.iter().enumerate() {
            let ph = 2.0 * std::f64::consts::PI * f * i as f64 / rate;
            let (s, c) = ph.sin_cos();
            ss += s * s;
            cc += c * c;
            sc += s * c;
            xs += v * s;
            xc += v * c;
        }
        let det = ss * cc - sc * sc;
        let a = (xs * cc - xc * sc) / det;
        let b = (xc * ss - xs * sc) / det;
        (a * a + b * b).sqrt()
    }

    #[test]
    fn resample_passband_sine_amplitude() {
        let n = 44_100;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / 44_100.0).sin())
            .collect();
        let clip = AudioClip::mono(x, 44_100).unwrap();
        let out = resample(&clip, 16_000).unwrap();
        assert_eq!(out.frames(), 16_000);
        let y = out.channel(0).to_vec();
        let interior = &y[500..15_500];
        let amp = fit_amplitude(interior, 1000.0, 16_000.0);
        assert!((amp - 1.0).abs() <= 0.01, "amplitude {amp}");
    }

    #[test]
    fn resample_stopband_sine_attenuated() {
        let n = 44_100;
        let x: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 10_000.0 * i as f64 / 44_100.0).sin())
            .collect();
        let out = resample(&AudioClip::mono(x, 44_100).unwrap(), 16_000).unwrap();
        let y = out.channel(0).to_vec();
        let interior = &y[500..15_500];
        let rms = (interior.iter().map(|v| v * v).sum::<f64>() / interior.len() as f64).sqrt();
        let atten_db = 20.0 * (rms / std::f64::consts::FRAC_1_SQRT_2).log10();
        assert!(atten_db <= -40.0, "attenuation {atten_db} dB");
    }

    #[test]
    fn resample_is_linear() {
        let a = random_clip(1, 2000, 4);
        let b = random_clip(1, 2000, 5);
        let rs = Resampler::new(16_000, 10_000).unwrap();
        let xa = a.channel(0).to_vec();
        let xb = b.channel(0).to_vec();
        let mix: Vec<f64> = xa.iter().zip(&xb).map(|(p, q)| 0.3 * p - 1.7 * q).collect();
        let ya = rs.process(&xa);
        let yb = rs.process(&xb);
        let ym = rs.process(&mix);
        for i in 0..ym.len() {
            let expect = 0.3 * ya[i] - 1.7 * yb[i];
            assert!((ym[i] - expect).abs() <= 1e-9 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn resample_preserves_channel_order() {
        let ch0 = vec![0.0; 800];
        let ch1: Vec<f64> = (0..800).map(|i| (i as f64 * 0.05).sin()).collect();
        let clip = AudioClip::from_channels(vec![ch0, ch1], 16_000).unwrap();
        let out = resample(&clip, 8_000).unwrap();
        assert_eq!(out.channels(), 2);
        assert!(out.channel(0).iter().all(|v| *v == 0.0));
        assert!(out.channel(1).iter().any(|v| v.abs() > 0.1));
    }
}
