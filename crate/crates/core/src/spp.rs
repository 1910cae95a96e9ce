//! Speech presence probability (SPP) and the binary activity indicator.
//!
//! Fixed-prior MMSE-style estimator: with a-posteriori SNR
//! `γ = |y|²/σ̂²_n` and a-priori SNR `ξ` under speech presence,
//!
//! ```text
//! SPP = 1 / (1 + (1 + ξ)·exp(−γ·ξ/(1 + ξ)))
//! ```
//!
//! The noise PSD is tracked per bin with an SPP-weighted recursive average,
//! using an SPP capped below one so the estimate cannot freeze during long
//! speech segments.

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stft::StftGrid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SppParams {
    /// A-priori SNR under the speech hypothesis, linear.
    pub xi_h1: f64,
    pub alpha_psd: f64,
    pub spp_cap: f64,
    /// Leading frames assumed noise-only for PSD initialization.
    pub init_frames: usize,
    pub threshold: f64,
}

impl Default for SppParams {
    fn default() -> Self {
        Self {
            xi_h1: 10f64.powf(1.5),
            alpha_psd: 0.8,
            spp_cap: 0.99,
            init_frames: 5,
            threshold: 0.5,
        }
    }
}

impl SppParams {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.xi_h1 > 0.0 && self.xi_h1.is_finite()) {
            v.push(format!("spp.xi_h1 must be positive, got {}", self.xi_h1));
        }
        if !(self.alpha_psd > 0.0 && self.alpha_psd < 1.0) {
            v.push(format!("spp.alpha_psd must be in (0, 1), got {}", self.alpha_psd));
        }
        if !(self.spp_cap > 0.0 && self.spp_cap < 1.0) {
            v.push(format!("spp.spp_cap must be in (0, 1), got {}", self.spp_cap));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            v.push(format!("spp.threshold must be in (0, 1), got {}", self.threshold));
        }
        if self.init_frames == 0 {
            v.push("spp.init_frames must be at least 1".into());
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

    /// Closed-form SPP for a given a-posteriori SNR.
    pub fn spp_from_gamma(&self, gamma: f64) -> f64 {
        let xi = self.xi_h1;
        1.0 / (1.0 + (1.0 + xi) * (-gamma * xi / (1.0 + xi)).exp())
    }
}

/// Which signal the activity decision was derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "channel", rename_all = "kebab-case")]
pub enum SppSource {
    /// An embedded array channel (iSPP).
    Internal(usize),
    /// An external reference microphone recorded as an extra channel (xSPP).
    External(usize),
    /// Ground-truth mask from the scene generator.
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SppMode {
    Internal,
    External,
    Oracle,
}

impl std::fmt::Display for SppMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SppMode::Internal => "internal",
            SppMode::External => "external",
            SppMode::Oracle => "oracle",
        })
    }
}

/// Per time-frequency speech presence probability and its binarization.
#[derive(Debug, Clone, PartialEq)]
pub struct SppMask {
    pub spp: Array2<f64>,
    pub beta: Array2<bool>,
    pub source: Option<SppSource>,
}

impl SppMask {
    /// A hard mask, e.g. from ground truth; SPP is set to the indicator itself.
    pub fn from_beta(beta: Array2<bool>, source: Option<SppSource>) -> Self {
        Self {
            spp: beta.mapv(|b| if b { 1.0 } else { 0.0 }),
            beta,
            source,
        }
    }

    pub fn with_source(mut self, source: SppSource) -> Self {
        self.source = Some(source);
        self
    }

    pub fn bins(&self) -> usize {
        self.beta.nrows()
    }

    pub fn frames(&self) -> usize {
        self.beta.ncols()
    }

    pub fn active_fraction(&self) -> f64 {
        let n = self.beta.len().max(1);
        self.beta.iter().filter(|b| **b).count() as f64 / n as f64
    }
}

/// Estimates SPP for a single-channel spectrogram (`bins × frames`).
pub fn estimate_spp(spectrogram: ArrayView2<'_, Complex64>, params: &SppParams) -> Result<SppMask> {
    params.validate()?;
    let (bins, frames) = spectrogram.dim();
    if frames < params.init_frames {
        return Err(Error::TooShort {
            got: frames,
            need: params.init_frames,
        });
    }

    let mut spp = Array2::<f64>::zeros((bins, frames));
    let alpha = params.alpha_psd;
    for k in 0..bins {
        let row = spectrogram.row(k);
        let mut psd = row
            .iter()
            .take(params.init_frames)
            .map(|v| v.norm_sqr())
            .sum::<f64>()
            / params.init_frames as f64;
        if psd <= 0.0 {
            psd = f64::EPSILON;
        }
        for l in 0..frames {
            let power = row[l].norm_sqr();
            let p = params.spp_from_gamma(power / psd);
            spp[[k, l]] = p;
            let capped = p.min(params.spp_cap);
            psd = alpha * psd + (1.0 - alpha) * (capped * psd + (1.0 - capped) * power);
            psd = psd.max(f64::MIN_POSITIVE);
        }
    }
    let beta = spp.mapv(|p| p >= params.threshold);
    Ok(SppMask {
        spp,
        beta,
        source: None,
    })
}

/// Picks the spectrogram the SPP is estimated from.
pub fn select_spp_channel(
    grid: &StftGrid,
    mode: SppMode,
    index: usize,
) -> Result<(Array2<Complex64>, SppSource)> {
    let source = match mode {
        SppMode::Internal => SppSource::Internal(index),
        SppMode::External => SppSource::External(index),
        SppMode::Oracle => {
            return Err(Error::InvalidParam(
                "oracle SPP comes from ground truth, not from a recorded channel".into(),
            ))
        }
    };
    Ok((grid.channel(index)?.to_owned(), source))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::StftParams;
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn complex_noise(rng: &mut ChaCha8Rng, bins: usize, frames: usize, var: f64) -> Array2<Complex64> {
        let s = (var / 2.0).sqrt();
        Array2::from_shape_fn((bins, frames), |_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re * s, im * s)
        })
    }

    #[test]
    fn zero_input_closed_form() {
        let p = SppParams::default();
        let xi = 10f64.powf(1.5);
        assert!((p.spp_from_gamma(0.0) - 1.0 / (2.0 + xi)).abs() <= 1e-12);

        // a silent frame after noise-only initialization
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut spec = complex_noise(&mut rng, 4, 12, 1.0);
        for k in 0..4 {
            spec[[k, 8]] = Complex64::new(0.0, 0.0);
        }
        let m = estimate_spp(spec.view(), &p).unwrap();
        for k in 0..4 {
            assert!((m.spp[[k, 8]] - 1.0 / (2.0 + xi)).abs() <= 1e-12);
            assert!(!m.beta[[k, 8]]);
        }
    }

    #[test]
    fn huge_gamma_saturates() {
        let p = SppParams::default();
        assert!((p.spp_from_gamma(1e6) - 1.0).abs() < 1e-15);
        let mut spec = Array2::from_elem((2, 10), Complex64::new(1.0, 0.0));
        spec[[0, 7]] = Complex64::new(1e4, 0.0);
        let m = estimate_spp(spec.view(), &p).unwrap();
        assert!(m.beta[[0, 7]]);
        assert!(m.spp[[0, 7]] > 1.0 - 1e-12);
    }

    #[test]
    fn spp_monotone_in_gamma() {
        for xi_db in [0.0, 5.0, 15.0, 25.0] {
            let p = SppParams {
                xi_h1: 10f64.powf(xi_db / 10.0),
                ..SppParams::default()
            };
            let mut prev = 0.0;
            for i in 0..2000 {
                let v = p.spp_from_gamma(i as f64 * 0.01);
                assert!(v >= prev && (0.0..=1.0).contains(&v));
                prev = v;
            }
        }
    }

    #[test]
    fn stationary_noise_rarely_active() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let spec = complex_noise(&mut rng, 257, 400, 0.3);
        let m = estimate_spp(spec.view(), &SppParams::default()).unwrap();
        let after = m.beta.slice(ndarray::s![.., 5..]);
        let frac = after.iter().filter(|b| **b).count() as f64 / after.len() as f64;
        assert!(frac <= 0.2, "active fraction {frac}");
    }

    #[test]
    fn strong_speech_detected() {
        // syllable-length bursts (12 frames on, 12 off) at 10 dB segment SNR,
        // the speech energy sitting in half of the bins
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut spec = complex_noise(&mut rng, 64, 300, 1.0);
        let speech = complex_noise(&mut rng, 64, 300, 20.0);
        let speech_bins: Vec<usize> = (0..64).step_by(2).collect();
        let speech_frames: Vec<usize> = (20..300).filter(|l| (l / 12) % 2 == 1).collect();
        for &l in &speech_frames {
            for &k in &speech_bins {
                spec[[k, l]] += speech[[k, l]];
            }
        }
        let m = estimate_spp(spec.view(), &SppParams::default()).unwrap();
        let mut hits = 0;
        for &l in &speech_frames {
            for &k in &speech_bins {
                hits += m.beta[[k, l]] as usize;
            }
        }
        let frac = hits as f64 / (speech_frames.len() * speech_bins.len()) as f64;
        assert!(frac >= 0.6, "speech active fraction {frac}");
    }

    #[test]
    fn scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = complex_noise(&mut rng, 16, 50, 1.0);
        let a = estimate_spp(spec.view(), &SppParams::default()).unwrap();
        let scaled = spec.mapv(|v| v * 37.0);
        let b = estimate_spp(scaled.view(), &SppParams::default()).unwrap();
        assert_eq!(a.beta, b.beta);
        for (x, y) in a.spp.iter().zip(b.spp.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn all_zero_bin_uses_floor() {
        let spec = Array2::<Complex64>::zeros((3, 10));
        let m = estimate_spp(spec.view(), &SppParams::default()).unwrap();
        assert!(m.spp.iter().all(|v| v.is_finite()));
        assert!(m.beta.iter().all(|b| !*b));
    }

    #[test]
    fn errors_and_threshold_rule() {
        let spec = Array2::<Complex64>::zeros((3, 4));
        assert!(matches!(
            estimate_spp(spec.view(), &SppParams::default()),
            Err(Error::TooShort { .. })
        ));
        let bad = SppParams {
            alpha_psd: 1.0,
            threshold: 0.0,
            ..SppParams::default()
        };
        assert_eq!(bad.violations().len(), 2);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = complex_noise(&mut rng, 8, 60, 1.0);
        let p = SppParams::default();
        let m = estimate_spp(spec.view(), &p).unwrap();
        for (s, b) in m.spp.iter().zip(m.beta.iter()) {
            assert_eq!(*b, *s >= p.threshold);
        }
    }

    #[test]
    fn channel_selection() {
        let params = StftParams::default();
        let data = Array3::from_shape_fn((params.bins(), 6, 3), |(k, l, c)| {
            Complex64::new((k + 10 * l) as f64, c as f64)
        });
        let grid = StftGrid::new(data, params).unwrap();
        let (spec, src) = select_spp_channel(&grid, SppMode::Internal, 0).unwrap();
        assert_eq!(spec, grid.channel(0).unwrap());
        assert_eq!(src, SppSource::Internal(0));
        let (spec, src) = select_spp_channel(&grid, SppMode::External, 2).unwrap();
        assert_eq!(spec, grid.channel(2).unwrap());
        assert_eq!(src, SppSource::External(2));
        assert!(matches!(
            select_spp_channel(&grid, SppMode::Internal, 3),
            Err(Error::ChannelOutOfRange { index: 3, count: 3 })
        ));
    }
}
