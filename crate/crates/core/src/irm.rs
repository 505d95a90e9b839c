//! Ideal-ratio-mask enhancement used as codec pre-processing.
//!
//! Frames are 256 samples at a 180-sample hop with a rectangular analysis window.
//! Resynthesis cross-fades linearly over the 76-sample overlap, so an unmodified
//! spectrum reconstructs the signal exactly.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::AudioSignal;
use crate::error::{Error, Result};
use crate::nn::{Activation, NetworkWeights};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub frame: usize,
    pub hop: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self { frame: 256, hop: 180 }
    }
}

impl StftConfig {
    pub fn overlap(&self) -> usize {
        self.frame - self.hop
    }

    pub fn bins(&self) -> usize {
        self.frame / 2 + 1
    }

    /// Frames needed to cover `len` samples.
    pub fn frame_count(&self, len: usize) -> usize {
        if len <= self.frame {
            1
        } else {
            (len - self.frame).div_ceil(self.hop) + 1
        }
    }
}

pub const BINS: usize = 129;
/// Floor added to the power before the log.
pub const LOG_POWER_FLOOR: f64 = 1e-8;

/// Half spectra (`bins` values per frame).
pub type Spectra = Vec<Vec<Complex<f64>>>;

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans(n: usize) -> Plans {
    let mut planner = FftPlanner::new();
    Plans { forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) }
}

pub fn stft(x: &[f64], cfg: &StftConfig) -> Spectra {
    let p = plans(cfg.frame);
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.frame];
    (0..cfg.frame_count(x.len()))
        .map(|k| {
            let start = k * cfg.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(x.get(start + i).copied().unwrap_or(0.0), 0.0);
            }
            p.forward.process(&mut buf);
            buf[..cfg.bins()].to_vec()
        })
        .collect()
}

/// Inverse of [`stft`] for a signal of `len` samples.
pub fn istft(spectra: &Spectra, cfg: &StftConfig, len: usize) -> Vec<f64> {
    let p = plans(cfg.frame);
    let n = cfg.frame;
    let ov = cfg.overlap();
    let mut out = vec![0.0; (spectra.len().saturating_sub(1)) * cfg.hop + n];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    for (k, half) in spectra.iter().enumerate() {
        buf[..half.len()].copy_from_slice(half);
        for i in half.len()..n {
            buf[i] = buf[n - i].conj();
        }
        buf[0].im = 0.0;
        buf[n / 2].im = 0.0;
        p.inverse.process(&mut buf);
        let start = k * cfg.hop;
        for (i, v) in buf.iter().enumerate() {
            let y = v.re / n as f64;
            // fade in over the overlap with the previous frame, fade out over the next one
            let mut w = 1.0;
            if k > 0 && i < ov {
                w *= (i as f64 + 0.5) / ov as f64;
            }
            if k + 1 < spectra.len() && i >= cfg.hop {
                w *= 1.0 - (i - cfg.hop) as f64 / ov as f64 - 0.5 / ov as f64;
            }
            out[start + i] += w * y;
        }
    }
    out.resize(len, 0.0);
    out
}

/// `ln(|X|² + ε)` per bin.
pub fn log_power_features(spectra: &Spectra) -> Vec<Vec<f64>> {
    spectra.iter().map(|f| f.iter().map(|c| (c.norm_sqr() + LOG_POWER_FLOOR).ln()).collect()).collect()
}

/// `sqrt(S / (S + N))` per bin, 0 where both powers vanish.
pub fn ideal_ratio_mask(clean: &Spectra, noise: &Spectra) -> Result<Vec<Vec<f64>>> {
    if clean.len() != noise.len() {
        return Err(Error::Length(clean.len(), noise.len()));
    }
    clean
        .iter()
        .zip(noise)
        .map(|(c, n)| {
            if c.len() != n.len() {
                return Err(Error::Dimension { expected: c.len(), actual: n.len() });
            }
            Ok(c.iter()
                .zip(n)
                .map(|(c, n)| {
                    let (s, q) = (c.norm_sqr(), n.norm_sqr());
                    if s + q > 0.0 {
                        (s / (s + q)).sqrt().clamp(0.0, 1.0)
                    } else {
                        0.0
                    }
                })
                .collect())
        })
        .collect()
}

/// Scales each bin's magnitude by its mask value, keeping the phase.
pub fn apply_mask(spectra: &Spectra, mask: &[Vec<f64>]) -> Result<Spectra> {
    if spectra.len() != mask.len() {
        return Err(Error::Length(spectra.len(), mask.len()));
    }
    Ok(spectra.iter().zip(mask).map(|(f, m)| f.iter().zip(m).map(|(c, g)| c * g.clamp(0.0, 1.0)).collect()).collect())
}

/// Masks the noisy signal and resynthesizes it.
pub fn enhance_with_mask(noisy: &AudioSignal, mask: &[Vec<f64>]) -> Result<AudioSignal> {
    let cfg = StftConfig::default();
    let spec = stft(&noisy.samples, &cfg);
    let masked = apply_mask(&spec, mask)?;
    Ok(AudioSignal::new(istft(&masked, &cfg, noisy.len()), noisy.sample_rate))
}

pub fn check_irm_model(weights: &NetworkWeights) -> Result<()> {
    let spec = &weights.spec;
    let last = spec.layers.last().map(|l| l.activation);
    if spec.input_dim() != BINS || spec.output_dim() != BINS || last != Some(Activation::Sigmoid) {
        return Err(Error::Model(format!(
            "{} is not a mask estimator ({} → {}, needs {BINS} → {BINS} with sigmoid output)",
            spec.name,
            spec.input_dim(),
            spec.output_dim()
        )));
    }
    Ok(())
}

/// Predicts a mask from the noisy log-power spectrum and applies it.
pub fn enhance_irm(weights: &NetworkWeights, noisy: &AudioSignal) -> Result<AudioSignal> {
    check_irm_model(weights)?;
    let spec = stft(&noisy.samples, &StftConfig::default());
    let mask = weights.enhance(&log_power_features(&spec))?;
    enhance_with_mask(noisy, &mask)
}
