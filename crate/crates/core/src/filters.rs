//! Per-bin rank-1 multichannel Wiener filters.
//!
//! * Standard MWF: GEVD of `{R_yy, R_nn}`, keep the eigenpair with the largest
//!   ratio `σ_y/σ_n`, giving
//!   `w = Q^{-H}·diag(1 − σ_n1/σ_y1, 0, …, 0)·Q^H·e_d`.
//! * PK-MWF: the speech correlation is constrained to the column space of the
//!   selection matrix `H`, i.e. noise-reference channels carry no speech.
//!   An LCMV/GSC stage `C = H − B·F` reduces the pencil to `M_S+N` channels,
//!   the reduced pencil is decomposed, and
//!   `w = C·Q_red^{-H}·diag(g, 0, …, 0)·Q_red^H·H^H·e_d`.
//!
//! All channel indexing follows the canonical order: speech-plus-noise
//! channels first, noise-only references last.

use std::time::{Duration, Instant};

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{regularize, BinStatistics};
use crate::error::{Error, Result};
use crate::gevd::{cholesky, cholesky_solve, gevd, hermitian_part, CMatrix, CVector, PencilDecomposition};

/// Physical channel roles for the filter input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelPartition {
    /// Array channels assumed to contain speech and noise.
    pub speech_noise_channels: Vec<usize>,
    /// Channels next to the noise sources, assumed speech-free.
    #[serde(default)]
    pub noise_only_channels: Vec<usize>,
    /// Position of the reference channel within `speech_noise_channels`.
    #[serde(default)]
    pub ref_channel: usize,
}

impl ChannelPartition {
    pub fn new(speech_noise: Vec<usize>, noise_only: Vec<usize>, ref_channel: usize) -> Result<Self> {
        let p = Self {
            speech_noise_channels: speech_noise,
            noise_only_channels: noise_only,
            ref_channel,
        };
        p.validate(None)?;
        Ok(p)
    }

    pub fn m_speech_noise(&self) -> usize {
        self.speech_noise_channels.len()
    }

    pub fn m_noise(&self) -> usize {
        self.noise_only_channels.len()
    }

    pub fn m(&self) -> usize {
        self.m_speech_noise() + self.m_noise()
    }

    /// Physical channel indices in canonical filter order.
    pub fn ordered_channels(&self) -> Vec<usize> {
        self.speech_noise_channels
            .iter()
            .chain(&self.noise_only_channels)
            .copied()
            .collect()
    }

    /// Physical index of the reference channel.
    pub fn reference_physical(&self) -> usize {
        self.speech_noise_channels[self.ref_channel]
    }

    /// The same partition without noise references.
    pub fn without_noise(&self) -> Self {
        Self {
            speech_noise_channels: self.speech_noise_channels.clone(),
            noise_only_channels: Vec::new(),
            ref_channel: self.ref_channel,
        }
    }

    /// Every rule this partition breaks, for a clip with `channel_count` channels
    /// when known.
    pub fn violations(&self, channel_count: Option<usize>) -> Vec<String> {
        let mut v = Vec::new();
        if self.speech_noise_channels.is_empty() {
            v.push("partition.speech_noise_channels must not be empty".into());
        } else if self.ref_channel >= self.m_speech_noise() {
            v.push(format!(
                "partition.ref_channel {} out of range for {} speech+noise channels",
                self.ref_channel,
                self.m_speech_noise()
            ));
        }
        let all = self.ordered_channels();
        for (i, c) in all.iter().enumerate() {
            if all[..i].contains(c) {
                let in_both = self.speech_noise_channels.contains(c)
                    && self.noise_only_channels.contains(c);
                v.push(if in_both {
                    format!("channel {c} is listed as both speech+noise and noise-only")
                } else {
                    format!("channel {c} is listed twice")
                });
            }
            if let Some(n) = channel_count {
                if *c >= n {
                    v.push(format!("channel {c} out of range for a {n}-channel input"));
                }
            }
        }
        v
    }

    pub fn validate(&self, channel_count: Option<usize>) -> Result<()> {
        let v = self.violations(channel_count);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Partition(v.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Standard MWF on the speech+noise array channels only.
    Mwf,
    /// Standard MWF on array channels plus the noise references.
    MwfWithNoiseMics,
    /// Prior-knowledge MWF.
    PkMwf,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Mwf, Method::MwfWithNoiseMics, Method::PkMwf];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Mwf => "mwf",
            Method::MwfWithNoiseMics => "mwf-with-noise-mics",
            Method::PkMwf => "pk-mwf",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidParam(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinStatus {
    Ok,
    /// No speech-active frames; bin suppressed.
    NoSpeechFrames,
    /// No speech-inactive frames; reference passed through.
    NoNoiseFrames,
    /// Estimated speech power was negative; gain clamped to zero.
    ClampedGain,
}

/// Selection matrix `H = [I; 0]` and blocking matrix `B = [0; I]` in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionBlocking {
    pub h: CMatrix,
    pub b: CMatrix,
}

pub fn build_selection_blocking(partition: &ChannelPartition) -> Result<SelectionBlocking> {
    partition.validate(None)?;
    let (msn, mn) = (partition.m_speech_noise(), partition.m_noise());
    let m = msn + mn;
    let one = Complex64::new(1.0, 0.0);
    let mut h = CMatrix::zeros(m, msn);
    let mut b = CMatrix::zeros(m, mn);
    for i in 0..msn {
        h[(i, i)] = one;
    }
    for i in 0..mn {
        b[(msn + i, i)] = one;
    }
    Ok(SelectionBlocking { h, b })
}

/// Rank-1 filter together with the speech correlation estimate it implies.
#[derive(Debug, Clone, PartialEq)]
pub struct Rank1Fit {
    pub weights: CVector,
    /// Implied rank-1 speech correlation `R_ss` in the full M-channel space.
    pub r_ss: CMatrix,
    pub gain: f64,
    pub clamped: bool,
}

/// Rank-1 Wiener weights from a pencil decomposition, for a reference selector
/// `e` expressed in the decomposition's own space.
///
/// Returns `(Q^{-H}·diag(g, 0, …)·Q^H·e, g, clamped)` and the dominant term
/// `Q[:, 0]·(σ_y1 − σ_n1)₊·Q[:, 0]^H`.
pub fn rank1_from_decomposition(
    decomp: &PencilDecomposition,
    e: &CVector,
) -> (CVector, CMatrix, f64, bool) {
    let (sy, sn) = (decomp.sigma_y[0], decomp.sigma_n[0]);
    let clamped = sy < sn;
    let gain = if clamped || sy <= 0.0 { 0.0 } else { 1.0 - sn / sy };
    let q0 = decomp.q.column(0).into_owned();
    let proj = (q0.adjoint() * e)[(0, 0)];
    let qih0 = decomp.q_inv_h().column(0).into_owned();
    let weights = qih0 * (proj * gain);
    let power = if clamped { 0.0 } else { sy - sn };
    let r_ss = &q0 * q0.adjoint() * Complex64::new(power, 0.0);
    (weights, r_ss, gain, clamped)
}

fn unit(m: usize, i: usize) -> CVector {
    let mut e = CVector::zeros(m);
    e[i] = Complex64::new(1.0, 0.0);
    e
}

/// Standard GEVD-based MWF on an already conditioned pencil.
pub fn fit_mwf(r_yy: &CMatrix, r_nn: &CMatrix, reference: usize) -> Result<Rank1Fit> {
    let m = r_yy.nrows();
    if reference >= m {
        return Err(Error::ChannelOutOfRange {
            index: reference,
            count: m,
        });
    }
    let decomp = gevd(r_yy, r_nn)?;
    let (weights, r_ss, gain, clamped) = rank1_from_decomposition(&decomp, &unit(m, reference));
    Ok(Rank1Fit {
        weights,
        r_ss,
        gain,
        clamped,
    })
}

/// LCMV solution `C = H − B·F`, `F = (B^H R_nn B)^{-1}·B^H R_nn H`.
pub fn compute_gsc(r_nn: &CMatrix, h: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    if h.nrows() != r_nn.nrows() || b.nrows() != r_nn.nrows() {
        return Err(Error::Shape("selection/blocking rows must match R_nn".into()));
    }
    if b.ncols() == 0 {
        return Ok(h.clone());
    }
    let bh_r = b.adjoint() * r_nn;
    let brb = hermitian_part(&(&bh_r * b));
    let l = cholesky(&brb)?;
    let f = cholesky_solve(&l, &(&bh_r * h));
    Ok(h - b * f)
}

/// PK-MWF on an already conditioned pencil in canonical channel order.
pub fn fit_pkmwf(r_yy: &CMatrix, r_nn: &CMatrix, partition: &ChannelPartition) -> Result<Rank1Fit> {
    if r_yy.nrows() != partition.m() {
        return Err(Error::Shape(format!(
            "statistics have {} channels, partition has {}",
            r_yy.nrows(),
            partition.m()
        )));
    }
    let SelectionBlocking { h, b } = build_selection_blocking(partition)?;
    let c = compute_gsc(r_nn, &h, &b)?;
    let ch = c.adjoint();
    let ryy_red = hermitian_part(&(&ch * r_yy * &c));
    let rnn_red = hermitian_part(&(&ch * r_nn * &c));
    let decomp = gevd(&ryy_red, &rnn_red)?;
    let e_red = unit(partition.m_speech_noise(), partition.ref_channel);
    let (w_red, rss_red, gain, clamped) = rank1_from_decomposition(&decomp, &e_red);
    Ok(Rank1Fit {
        weights: &c * w_red,
        r_ss: &h * rss_red * h.adjoint(),
        gain,
        clamped,
    })
}

/// Weights for one bin plus how they were obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct BinFilter {
    pub weights: CVector,
    pub status: BinStatus,
}

fn fallback(stats: &BinStatistics, reference: usize) -> Option<BinFilter> {
    let m = stats.dim();
    if stats.l_on == 0 {
        Some(BinFilter {
            weights: CVector::zeros(m),
            status: BinStatus::NoSpeechFrames,
        })
    } else if stats.l_off == 0 {
        Some(BinFilter {
            weights: unit(m, reference),
            status: BinStatus::NoNoiseFrames,
        })
    } else {
        None
    }
}

fn status_of(fit: &Rank1Fit) -> BinStatus {
    if fit.clamped {
        BinStatus::ClampedGain
    } else {
        BinStatus::Ok
    }
}

/// Standard MWF for one bin; `stats` must already be regularized.
pub fn compute_mwf(stats: &BinStatistics, reference: usize) -> Result<BinFilter> {
    if let Some(f) = fallback(stats, reference) {
        return Ok(f);
    }
    let fit = fit_mwf(&stats.r_yy, &stats.r_nn, reference)?;
    Ok(BinFilter {
        status: status_of(&fit),
        weights: fit.weights,
    })
}

/// PK-MWF for one bin; `stats` must be regularized and in canonical order.
pub fn compute_pkmwf(stats: &BinStatistics, partition: &ChannelPartition) -> Result<BinFilter> {
    if let Some(f) = fallback(stats, partition.ref_channel) {
        return Ok(f);
    }
    let fit = fit_pkmwf(&stats.r_yy, &stats.r_nn, partition)?;
    Ok(BinFilter {
        status: status_of(&fit),
        weights: fit.weights,
    })
}

/// Filter weights for every bin.
#[derive(Debug, Clone)]
pub struct FilterBank {
    /// `bins × M`, columns in the order of [`FilterBank::input_channels`].
    pub weights: Array2<Complex64>,
    pub method: Method,
    pub partition: ChannelPartition,
    pub status: Vec<BinStatus>,
    /// Wall-clock time spent in the per-bin filter design.
    pub elapsed: Duration,
}

impl FilterBank {
    /// Physical channels the weights apply to, in weight order.
    pub fn input_channels(&self) -> Vec<usize> {
        match self.method {
            Method::Mwf => self.partition.speech_noise_channels.clone(),
            Method::MwfWithNoiseMics | Method::PkMwf => self.partition.ordered_channels(),
        }
    }

    pub fn bins(&self) -> usize {
        self.weights.nrows()
    }

    pub fn count(&self, status: BinStatus) -> usize {
        self.status.iter().filter(|s| **s == status).count()
    }

    /// A bank applying the same weight vector in every bin.
    pub fn uniform(
        bins: usize,
        weights: &CVector,
        method: Method,
        partition: ChannelPartition,
    ) -> Self {
        Self {
            weights: Array2::from_shape_fn((bins, weights.len()), |(_, c)| weights[c]),
            method,
            partition,
            status: vec![BinStatus::Ok; bins],
            elapsed: Duration::ZERO,
        }
    }
}

/// Designs the filter bank from statistics estimated on
/// `partition.ordered_channels()`.
pub fn design_filterbank(
    stats: &[BinStatistics],
    method: Method,
    partition: &ChannelPartition,
    delta: f64,
) -> Result<FilterBank> {
    partition.validate(None)?;
    let start = Instant::now();
    let msn = partition.m_speech_noise();
    let sn_only: Vec<usize> = (0..msn).collect();
    let per_bin: Vec<BinFilter> = stats
        .par_iter()
        .map(|s| {
            if s.dim() != partition.m() {
                return Err(Error::Shape(format!(
                    "bin {} has {} channels, partition has {}",
                    s.bin_index,
                    s.dim(),
                    partition.m()
                )));
            }
            match method {
                Method::Mwf => compute_mwf(&regularize(&s.select(&sn_only), delta), partition.ref_channel),
                Method::MwfWithNoiseMics => compute_mwf(&regularize(s, delta), partition.ref_channel),
                Method::PkMwf => compute_pkmwf(&regularize(s, delta), partition),
            }
        })
        .collect::<Result<_>>()?;
    let width = match method {
        Method::Mwf => msn,
        _ => partition.m(),
    };
    let mut weights = Array2::zeros((stats.len(), width));
    for (k, f) in per_bin.iter().enumerate() {
        for c in 0..width {
            weights[[k, c]] = f.weights[c];
        }
    }
    Ok(FilterBank {
        weights,
        method,
        partition: partition.clone(),
        status: per_bin.into_iter().map(|f| f.status).collect(),
        elapsed: start.elapsed(),
    })
}
