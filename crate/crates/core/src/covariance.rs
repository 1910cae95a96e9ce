//! Batch estimation of per-bin speech-plus-noise and noise-only correlation
//! matrices, split by the speech activity indicator.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gevd::{hermitian_part, CMatrix};
use crate::spp::SppMask;
use crate::stft::StftGrid;
use num_complex::Complex64;

#[derive(Debug, Clone, PartialEq)]
pub struct BinStatistics {
    pub r_yy: CMatrix,
    pub r_nn: CMatrix,
    /// Frames with speech active.
    pub l_on: usize,
    /// Frames with speech inactive.
    pub l_off: usize,
    pub bin_index: usize,
}

impl BinStatistics {
    pub fn dim(&self) -> usize {
        self.r_yy.nrows()
    }

    /// Restricts both matrices to `channels` (positions within this statistic).
    pub fn select(&self, channels: &[usize]) -> Self {
        let pick = |m: &CMatrix| {
            CMatrix::from_fn(channels.len(), channels.len(), |r, c| {
                m[(channels[r], channels[c])]
            })
        };
        Self {
            r_yy: pick(&self.r_yy),
            r_nn: pick(&self.r_nn),
            l_on: self.l_on,
            l_off: self.l_off,
            bin_index: self.bin_index,
        }
    }
}

fn validate_channels(channels: &[usize], count: usize) -> Result<()> {
    if channels.is_empty() {
        return Err(Error::InvalidParam("channel list is empty".into()));
    }
    for (i, &c) in channels.iter().enumerate() {
        if c >= count {
            return Err(Error::ChannelOutOfRange { index: c, count });
        }
        if channels[..i].contains(&c) {
            return Err(Error::InvalidParam(format!("channel {c} listed twice")));
        }
    }
    Ok(())
}

fn mean_outer(snapshots: &CMatrix) -> CMatrix {
    let n = snapshots.ncols();
    if n == 0 {
        return CMatrix::zeros(snapshots.nrows(), snapshots.nrows());
    }
    let r = snapshots * snapshots.adjoint() * Complex64::new(1.0 / n as f64, 0.0);
    hermitian_part(&r)
}

/// Accumulates `R_yy(κ)` over active and `R_nn(κ)` over inactive frames,
/// with `y` restricted to `channels` in the given order.
pub fn estimate_correlations(
    grid: &StftGrid,
    mask: &SppMask,
    channels: &[usize],
) -> Result<Vec<BinStatistics>> {
    if mask.bins() != grid.bins() || mask.frames() != grid.frames() {
        return Err(Error::Shape(format!(
            "mask is {}x{}, grid is {}x{}",
            mask.bins(),
            mask.frames(),
            grid.bins(),
            grid.frames()
        )));
    }
    validate_channels(channels, grid.channels())?;

    let data = grid.data();
    let m = channels.len();
    let stats = (0..grid.bins())
        .into_par_iter()
        .map(|k| {
            let active: Vec<usize> = (0..grid.frames()).filter(|&l| mask.beta[[k, l]]).collect();
            let inactive: Vec<usize> =
                (0..grid.frames()).filter(|&l| !mask.beta[[k, l]]).collect();
            let gather = |frames: &[usize]| {
                CMatrix::from_fn(m, frames.len(), |r, c| data[[k, frames[c], channels[r]]])
            };
            BinStatistics {
                r_yy: mean_outer(&gather(&active)),
                r_nn: mean_outer(&gather(&inactive)),
                l_on: active.len(),
                l_off: inactive.len(),
                bin_index: k,
            }
        })
        .collect();
    Ok(stats)
}

/// Diagonal loading relative to the mean eigenvalue of `r_nn`
/// (or of `r_yy` when `r_nn` is identically zero).
pub fn regularize(stats: &BinStatistics, delta: f64) -> BinStatistics {
    let mut out = stats.clone();
    if delta <= 0.0 {
        return out;
    }
    let m = stats.dim() as f64;
    let trace = |a: &CMatrix| a.diagonal().iter().map(|v| v.re).sum::<f64>();
    let tr_nn = trace(&stats.r_nn);
    let load = if tr_nn > 0.0 {
        delta * tr_nn / m
    } else {
        delta * trace(&stats.r_yy) / m
    };
    for i in 0..stats.dim() {
        out.r_nn[(i, i)] += Complex64::new(load, 0.0);
    }
    out
}
