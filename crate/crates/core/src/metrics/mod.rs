//! Objective distortion measures between parameter sequences, STOI and FLOPs accounting.

mod flops;
mod stoi;

pub use flops::{count_flops, FlopsBreakdown, PipelineKind, FFT_256_FLOPS};
pub use stoi::{resample_8k_to_10k, stoi};

use crate::error::{Error, Result};
use crate::frame::MelpFrame;
use crate::lpc;

/// Grid size (bins over [0, π)) used for log-spectral distance.
pub const LSD_GRID: usize = 512;

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Length(a, b));
    }
    if a == 0 {
        return Err(Error::Empty("no frames to compare".into()));
    }
    Ok(())
}

/// Percentage of frames whose lowest-band voicing differs.
pub fn vuv_error(reference: &[MelpFrame], test: &[MelpFrame]) -> Result<f64> {
    check_len(reference.len(), test.len())?;
    let diff = reference.iter().zip(test).filter(|(a, b)| a.voiced() != b.voiced()).count();
    Ok(100.0 * diff as f64 / reference.len() as f64)
}

/// RMS difference of both subframe gains, in dB.
pub fn gain_rmse(reference: &[MelpFrame], test: &[MelpFrame]) -> Result<f64> {
    check_len(reference.len(), test.len())?;
    let sse: f64 = reference
        .iter()
        .zip(test)
        .flat_map(|(a, b)| a.gain_db.iter().zip(b.gain_db))
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok((sse / (2 * reference.len()) as f64).sqrt())
}

/// RMS difference of F0 = 8000 / pitch over frames voiced in both sequences.
/// `None` when no frame is voiced in both.
pub fn f0_rmse(reference: &[MelpFrame], test: &[MelpFrame]) -> Result<Option<f64>> {
    check_len(reference.len(), test.len())?;
    let errs: Vec<f64> = reference
        .iter()
        .zip(test)
        .filter(|(a, b)| a.voiced() && b.voiced())
        .map(|(a, b)| 8000.0 / a.pitch - 8000.0 / b.pitch)
        .collect();
    if errs.is_empty() {
        return Ok(None);
    }
    Ok(Some((errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt()))
}

/// Log-spectral distance in dB between two all-pole models `g / A(z)`.
pub fn lpc_lsd(a_ref: &[f64], gain_ref: f64, a_test: &[f64], gain_test: f64, grid: usize) -> f64 {
    let p = lpc::lpc_power_spectrum(a_ref, gain_ref, grid);
    let q = lpc::lpc_power_spectrum(a_test, gain_test, grid);
    let s: f64 = p.iter().zip(&q).map(|(x, y)| (10.0 * (x / y).log10()).powi(2)).sum();
    (s / p.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsdResult {
    /// Mean over scored frames, dB.
    pub mean_db: f64,
    pub frames: usize,
    /// Frames whose LSFs did not give a stable filter.
    pub skipped: usize,
}

/// Mean log-spectral distance of the LSF envelopes, frame by frame.
pub fn lsd(reference: &[[f64; 10]], test: &[[f64; 10]]) -> Result<LsdResult> {
    lsd_with_grid(reference, test, LSD_GRID)
}

pub fn lsd_with_grid(reference: &[[f64; 10]], test: &[[f64; 10]], grid: usize) -> Result<LsdResult> {
    check_len(reference.len(), test.len())?;
    let mut total = 0.0;
    let mut frames = 0;
    for (r, t) in reference.iter().zip(test) {
        let (a, b) = (lpc::lsf_to_lpc(r), lpc::lsf_to_lpc(t));
        if !lpc::is_stable(&a) || !lpc::is_stable(&b) {
            continue;
        }
        total += lpc_lsd(&a, 1.0, &b, 1.0, grid);
        frames += 1;
    }
    if frames == 0 {
        return Err(Error::Undefined("no frame gave a stable filter"));
    }
    Ok(LsdResult { mean_db: total / frames as f64, frames, skipped: reference.len() - frames })
}

pub fn frame_lsfs(frames: &[MelpFrame]) -> Vec<[f64; 10]> {
    frames.iter().map(|f| f.lsf).collect()
}

/// Parameter distortion of one utterance against its reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamDistortion {
    pub vuv_error_pct: f64,
    pub gain_rmse_db: f64,
    pub f0_rmse_hz: Option<f64>,
    pub lsd_db: f64,
    pub frames: usize,
    /// Frames voiced in both sequences.
    pub voiced_frames: usize,
}

pub fn param_distortion(reference: &[MelpFrame], test: &[MelpFrame]) -> Result<ParamDistortion> {
    Ok(ParamDistortion {
        vuv_error_pct: vuv_error(reference, test)?,
        gain_rmse_db: gain_rmse(reference, test)?,
        f0_rmse_hz: f0_rmse(reference, test)?,
        lsd_db: lsd(&frame_lsfs(reference), &frame_lsfs(test))?.mean_db,
        frames: reference.len(),
        voiced_frames: reference.iter().zip(test).filter(|(a, b)| a.voiced() && b.voiced()).count(),
    })
}
