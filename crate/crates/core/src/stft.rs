//! Short-time Fourier analysis and overlap-add synthesis.
//!
//! The default configuration is a 512-point square-root periodic Hann window
//! at 50% overlap, used for both analysis and synthesis, so the squared window
//! satisfies constant overlap-add and the pair reconstructs perfectly.

use std::sync::Arc;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio_io::AudioClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    #[default]
    SqrtHannPeriodic,
    /// Test-only: rectangular window.
    Rectangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftParams {
    pub fft_size: usize,
    pub hop: usize,
    pub window: WindowKind,
    pub sample_rate_hz: u32,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            fft_size: 512,
            hop: 256,
            window: WindowKind::SqrtHannPeriodic,
            sample_rate_hz: 16_000,
        }
    }
}

impl StftParams {
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 8 || self.fft_size % 2 != 0 {
            return Err(Error::InvalidParam(format!(
                "fft_size must be even and >= 8, got {}",
                self.fft_size
            )));
        }
        if self.hop == 0 || self.hop > self.fft_size || self.fft_size % self.hop != 0 {
            return Err(Error::InvalidParam(format!(
                "hop {} must divide fft_size {}",
                self.hop, self.fft_size
            )));
        }
        if self.sample_rate_hz == 0 {
            return Err(Error::InvalidParam("sample rate must be positive".into()));
        }
        Ok(())
    }

    pub fn window(&self) -> Vec<f64> {
        let n = self.fft_size;
        match self.window {
            WindowKind::SqrtHannPeriodic => (0..n)
                .map(|t| {
                    let hann =
                        0.5 - 0.5 * (2.0 * std::f64::consts::PI * t as f64 / n as f64).cos();
                    hann.sqrt()
                })
                .collect(),
            WindowKind::Rectangular => vec![1.0; n],
        }
    }

    /// Number of frames covering `len` samples, last frame zero-padded.
    pub fn frame_count(&self, len: usize) -> usize {
        if len <= self.fft_size {
            1
        } else {
            1 + (len - self.fft_size).div_ceil(self.hop)
        }
    }
}

/// One-sided STFT of a multichannel signal, shaped `bins × frames × channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct StftGrid {
    data: Array3<Complex64>,
    params: StftParams,
    signal_len: Option<usize>,
}

impl StftGrid {
    pub fn new(data: Array3<Complex64>, params: StftParams) -> Result<Self> {
        params.validate()?;
        if data.shape()[0] != params.bins() {
            return Err(Error::Shape(format!(
                "grid has {} bins, params imply {}",
                data.shape()[0],
                params.bins()
            )));
        }
        Ok(Self {
            data,
            params,
            signal_len: None,
        })
    }

    pub fn with_signal_len(mut self, len: usize) -> Self {
        self.signal_len = Some(len);
        self
    }

    pub fn data(&self) -> &Array3<Complex64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<Complex64> {
        &mut self.data
    }

    pub fn params(&self) -> &StftParams {
        &self.params
    }

    pub fn signal_len(&self) -> Option<usize> {
        self.signal_len
    }

    pub fn bins(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[2]
    }

    /// Spectrogram of one channel, `bins × frames`.
    pub fn channel(&self, index: usize) -> Result<ArrayView2<'_, Complex64>> {
        if index >= self.channels() {
            return Err(Error::ChannelOutOfRange {
                index,
                count: self.channels(),
            });
        }
        Ok(self.data.index_axis(Axis(2), index))
    }

    pub fn select_channels(&self, indices: &[usize]) -> Result<Self> {
        for &i in indices {
            if i >= self.channels() {
                return Err(Error::ChannelOutOfRange {
                    index: i,
                    count: self.channels(),
                });
            }
        }
        Ok(Self {
            data: self.data.select(Axis(2), indices),
            params: self.params,
            signal_len: self.signal_len,
        })
    }

    pub fn from_single(spec: Array2<Complex64>, params: StftParams) -> Result<Self> {
        let (bins, frames) = spec.dim();
        let data = spec
            .into_shape_with_order((bins, frames, 1))
            .map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(data, params)
    }
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans(n: usize) -> Plans {
    let mut planner = FftPlanner::new();
    Plans {
        forward: planner.plan_fft_forward(n),
        inverse: planner.plan_fft_inverse(n),
    }
}

/// Forward transform of every channel of `clip`.
pub fn analyze(clip: &AudioClip, params: &StftParams) -> Result<StftGrid> {
    params.validate()?;
    if clip.sample_rate_hz() != params.sample_rate_hz {
        return Err(Error::RateMismatch {
            clip: clip.sample_rate_hz(),
            expected: params.sample_rate_hz,
        });
    }
    let len = clip.frames();
    if len < params.fft_size {
        return Err(Error::TooShort {
            got: len,
            need: params.fft_size,
        });
    }

    let n = params.fft_size;
    let bins = params.bins();
    let frames = params.frame_count(len);
    let window = params.window();
    let fft = plans(n).forward;

    let mut data = Array3::<Complex64>::zeros((bins, frames, clip.channels()));
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for (c, x) in clip.samples().rows().into_iter().enumerate() {
        for f in 0..frames {
            let start = f * params.hop;
            for (t, slot) in buf.iter_mut().enumerate() {
                let v = x.get(start + t).copied().unwrap_or(0.0);
                *slot = Complex64::new(v * window[t], 0.0);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for k in 0..bins {
                data[[k, f, c]] = buf[k];
            }
            // real input: DC and Nyquist are real up to rounding
            data[[0, f, c]].im = 0.0;
            data[[bins - 1, f, c]].im = 0.0;
        }
    }
    Ok(StftGrid::new(data, *params)?.with_signal_len(len))
}

/// Weighted overlap-add inverse of [`analyze`].
///
/// The output is trimmed to the analyzed length when the grid carries it,
/// otherwise it spans every frame.
pub fn synthesize(grid: &StftGrid) -> Result<AudioClip> {
    let params = grid.params();
    params.validate()?;
    let n = params.fft_size;
    if grid.bins() != params.bins() {
        return Err(Error::Shape(format!(
            "grid has {} bins, params imply {}",
            grid.bins(),
            params.bins()
        )));
    }
    let window = params.window();
    let cola: f64 = (0..n / params.hop)
        .map(|j| window[j * params.hop].powi(2))
        .sum();

    let frames = grid.frames();
    let full_len = (frames - 1) * params.hop + n;
    let out_len = grid.signal_len().unwrap_or(full_len);
    if out_len > full_len {
        return Err(Error::Shape(format!(
            "signal length {out_len} exceeds the {full_len} samples spanned by {frames} frames"
        )));
    }

    let ifft = plans(n).inverse;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); ifft.get_inplace_scratch_len()];
    let mut out = Array2::<f64>::zeros((grid.channels(), full_len));
    let bins = params.bins();
    for c in 0..grid.channels() {
        let spec = grid.data().slice(s![.., .., c]);
        for f in 0..frames {
            for k in 0..bins {
                buf[k] = spec[[k, f]];
            }
            buf[0].im = 0.0;
            buf[bins - 1].im = 0.0;
            for k in 1..bins - 1 {
                buf[n - k] = spec[[k, f]].conj();
            }
            ifft.process_with_scratch(&mut buf, &mut scratch);
            let start = f * params.hop;
            for t in 0..n {
                out[[c, start + t]] += buf[t].re * window[t] / (n as f64 * cola);
            }
        }
    }
    let trimmed = out.slice(s![.., ..out_len]).to_owned();
    AudioClip::new(trimmed, params.sample_rate_hz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_clip(ch: usize, n: usize, seed: u64) -> AudioClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioClip::new(
            Array2::from_shape_fn((ch, n), |_| rng.gen_range(-1.0..1.0)),
            16_000,
        )
        .unwrap()
    }

    #[test]
    fn window_is_cola() {
        let p = StftParams::default();
        let w = p.window();
        for t in 0..p.hop {
            let sum = w[t].powi(2) + w[t + p.hop].powi(2);
            assert!((sum - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn dc_input_bin_zero_is_window_sum() {
        let p = StftParams::default();
        let clip = AudioClip::new(Array2::from_elem((2, 4096), 1.0), 16_000).unwrap();
        let grid = analyze(&clip, &p).unwrap();
        let w = p.window();
        let wsum: f64 = w.iter().sum();
        // the sqrt-Hann spectrum is |sin|, so the remaining bins carry the
        // window's own transform rather than zeros
        let k = 3.0;
        let expect_k3: Complex64 = w
            .iter()
            .enumerate()
            .map(|(t, v)| {
                Complex64::from_polar(*v, -2.0 * std::f64::consts::PI * k * t as f64 / 512.0)
            })
            .sum();
        for f in 0..grid.frames() - 1 {
            for c in 0..2 {
                assert!((grid.data()[[0, f, c]].re - wsum).abs() < 1e-10 * wsum);
                assert!((grid.data()[[3, f, c]] - expect_k3).norm() < 1e-10 * wsum);
            }
        }
    }

    #[test]
    fn dc_input_rectangular_is_single_bin() {
        let p = StftParams {
            window: WindowKind::Rectangular,
            ..StftParams::default()
        };
        let clip = AudioClip::new(Array2::from_elem((1, 4096), 1.0), 16_000).unwrap();
        let grid = analyze(&clip, &p).unwrap();
        for f in 0..grid.frames() - 1 {
            assert!((grid.data()[[0, f, 0]].re - 512.0).abs() < 1e-10 * 512.0);
            for k in 1..p.bins() {
                assert!(grid.data()[[k, f, 0]].norm() <= 1e-10 * 512.0);
            }
        }
    }

    #[test]
    fn bin_centred_sine_energy_concentrated() {
        let p = StftParams::default();
        let k0 = 40;
        let x: Vec<f64> = (0..8192)
            .map(|t| (2.0 * std::f64::consts::PI * k0 as f64 * t as f64 / 512.0).sin())
            .collect();
        let grid = analyze(&AudioClip::mono(x, 16_000).unwrap(), &p).unwrap();
        for f in 1..grid.frames() - 2 {
            let total: f64 = (0..p.bins()).map(|k| grid.data()[[k, f, 0]].norm_sqr()).sum();
            // sqrt-Hann leaks about 19% into the two neighbouring bins
            let core: f64 = (k0 - 1..=k0 + 1)
                .map(|k| grid.data()[[k, f, 0]].norm_sqr())
                .sum();
            assert!(grid.data()[[k0, f, 0]].norm_sqr() >= 0.8 * total);
            assert!(core >= 0.99 * total);
        }
    }

    #[test]
    fn zero_clip_gives_zero_grid_and_back() {
        let p = StftParams::default();
        let clip = AudioClip::new(Array2::zeros((3, 2000)), 16_000).unwrap();
        let grid = analyze(&clip, &p).unwrap();
        assert!(grid.data().iter().all(|v| v.norm() == 0.0));
        let y = synthesize(&grid).unwrap();
        assert_eq!(y.frames(), 2000);
        assert!(y.samples().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn perfect_reconstruction_interior() {
        let p = StftParams::default();
        let clip = random_clip(2, 10_000, 11);
        let y = synthesize(&analyze(&clip, &p).unwrap()).unwrap();
        assert_eq!(y.frames(), clip.frames());
        let n = p.fft_size;
        for c in 0..2 {
            for t in n..clip.frames() - n {
                assert!((y.samples()[[c, t]] - clip.samples()[[c, t]]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn rectangular_mode_reconstructs() {
        let p = StftParams {
            window: WindowKind::Rectangular,
            ..StftParams::default()
        };
        let clip = random_clip(1, 3000, 2);
        let y = synthesize(&analyze(&clip, &p).unwrap()).unwrap();
        for t in 512..2400 {
            assert!((y.samples()[[0, t]] - clip.samples()[[0, t]]).abs() <= 1e-9);
        }
    }

    #[test]
    fn scaled_grid_gives_scaled_signal() {
        let p = StftParams::default();
        let clip = random_clip(1, 4000, 5);
        let mut grid = analyze(&clip, &p).unwrap();
        grid.data_mut().mapv_inplace(|v| v * 2.0);
        let y = synthesize(&grid).unwrap();
        for t in 512..3400 {
            assert!((y.samples()[[0, t]] - 2.0 * clip.samples()[[0, t]]).abs() <= 1e-9);
        }
    }

    #[test]
    fn parseval_per_frame() {
        let p = StftParams::default();
        let clip = random_clip(1, 3000, 8);
        let grid = analyze(&clip, &p).unwrap();
        let w = p.window();
        let x = clip.channel(0);
        for f in 0..grid.frames() {
            let time: f64 = (0..p.fft_size)
                .map(|t| (x.get(f * p.hop + t).copied().unwrap_or(0.0) * w[t]).powi(2))
                .sum();
            let n = p.fft_size;
            let freq: f64 = (0..p.bins())
                .map(|k| {
                    let m = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
                    m * grid.data()[[k, f, 0]].norm_sqr()
                })
                .sum::<f64>()
                / n as f64;
            assert!((time - freq).abs() <= 1e-9 * time);
        }
    }

    #[test]
    fn errors() {
        let p = StftParams::default();
        assert!(matches!(
            analyze(&random_clip(1, 100, 0), &p),
            Err(Error::TooShort { .. })
        ));
        let clip = AudioClip::new(Array2::zeros((1, 1000)), 8000).unwrap();
        assert!(matches!(analyze(&clip, &p), Err(Error::RateMismatch { .. })));
        let bad = StftParams {
            fft_size: 6,
            hop: 3,
            ..p
        };
        assert!(bad.validate().is_err());
        assert!(StftGrid::new(Array3::zeros((10, 3, 1)), p).is_err());
    }

    #[test]
    fn frame_count_pads_final_frame() {
        let p = StftParams::default();
        assert_eq!(p.frame_count(512), 1);
        assert_eq!(p.frame_count(513), 2);
        assert_eq!(p.frame_count(768), 2);
        assert_eq!(p.frame_count(769), 3);
    }
}
