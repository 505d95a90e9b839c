//! Mapping between MELP frames and the 29-dimensional network feature space, and
//! per-dimension normalization.
//!
//! Layout: `lsf[10], gain_mean, gain_diff, bpvc[5], pitch, aperiodic, log_fourier_mag[10]`.

use crate::error::{Error, Result};
use crate::frame::{MelpFrame, LPC_ORDER, NUM_BANDS, NUM_HARMONICS};
use crate::lpc::{enforce_min_gap, LSF_MIN_GAP};

pub const FEATURE_DIM: usize = 29;
pub type FeatureVector = [f64; FEATURE_DIM];

pub const IDX_GAIN_MEAN: usize = LPC_ORDER;
pub const IDX_GAIN_DIFF: usize = LPC_ORDER + 1;
pub const IDX_BPVC: usize = LPC_ORDER + 2;
pub const IDX_PITCH: usize = IDX_BPVC + NUM_BANDS;
pub const IDX_APERIODIC: usize = IDX_PITCH + 1;
pub const IDX_FOURIER: usize = IDX_APERIODIC + 1;

/// Pitch track value used when an utterance has no voiced frame.
pub const DEFAULT_TRACK_PITCH: f64 = 80.0;
const FLAG_THRESHOLD: f64 = 0.5;
/// Bound on log magnitudes accepted from a network, keeps `exp` finite.
const LOG_MAG_LIMIT: f64 = 10.0;

/// Pitch contour with unvoiced runs filled by linear interpolation between the
/// neighbouring voiced frames. Runs at the edges take the nearest voiced value.
pub fn interpolate_pitch(frames: &[MelpFrame]) -> Vec<f64> {
    let anchors: Vec<usize> = (0..frames.len()).filter(|&i| frames[i].voiced()).collect();
    let (Some(&first), Some(&last)) = (anchors.first(), anchors.last()) else {
        return vec![DEFAULT_TRACK_PITCH; frames.len()];
    };
    let mut out: Vec<f64> = frames.iter().map(|f| f.pitch).collect();
    out[..first].fill(frames[first].pitch);
    out[last + 1..].fill(frames[last].pitch);
    for w in anchors.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (pa, pb) = (frames[a].pitch, frames[b].pitch);
        for i in a + 1..b {
            let t = (i - a) as f64 / (b - a) as f64;
            out[i] = pa + t * (pb - pa);
        }
    }
    out
}

pub fn refine(frames: &[MelpFrame]) -> Vec<FeatureVector> {
    let pitch = interpolate_pitch(frames);
    frames
        .iter()
        .zip(pitch)
        .map(|(f, p)| {
            let mut v = [0.0; FEATURE_DIM];
            v[..LPC_ORDER].copy_from_slice(&f.lsf);
            v[IDX_GAIN_MEAN] = 0.5 * (f.gain_db[0] + f.gain_db[1]);
            v[IDX_GAIN_DIFF] = 0.5 * (f.gain_db[1] - f.gain_db[0]);
            for (i, b) in f.bpvc.iter().enumerate() {
                v[IDX_BPVC + i] = f64::from(u8::from(*b));
            }
            v[IDX_PITCH] = p;
            v[IDX_APERIODIC] = f64::from(u8::from(f.aperiodic));
            for (i, m) in f.fourier_mag.iter().enumerate() {
                v[IDX_FOURIER + i] = m.ln();
            }
            v
        })
        .collect()
}

/// Inverse of [`refine`]. Flags are thresholded at 0.5. When `band1` is given it
/// overrides the frame voicing decisions taken from the features.
pub fn unrefine(features: &[FeatureVector], band1: Option<&[bool]>) -> Result<Vec<MelpFrame>> {
    if let Some(flags) = band1 {
        if flags.len() != features.len() {
            return Err(Error::Length(flags.len(), features.len()));
        }
    }
    Ok(features
        .iter()
        .enumerate()
        .map(|(t, v)| {
            let mut f = MelpFrame::silent();
            f.lsf.copy_from_slice(&v[..LPC_ORDER]);
            enforce_min_gap(&mut f.lsf, LSF_MIN_GAP);
            let (mean, diff) = (v[IDX_GAIN_MEAN], v[IDX_GAIN_DIFF]);
            f.gain_db = [mean - diff, mean + diff];
            for i in 0..NUM_BANDS {
                f.bpvc[i] = v[IDX_BPVC + i] > FLAG_THRESHOLD;
            }
            if let Some(flags) = band1 {
                f.bpvc[0] = flags[t];
            }
            f.pitch = v[IDX_PITCH];
            f.aperiodic = v[IDX_APERIODIC] > FLAG_THRESHOLD;
            for i in 0..NUM_HARMONICS {
                f.fourier_mag[i] = v[IDX_FOURIER + i].clamp(-LOG_MAG_LIMIT, LOG_MAG_LIMIT).exp();
            }
            f.normalize_voicing();
            f
        })
        .collect())
}

/// Per-dimension mean and standard deviation (population form, floored).
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub const STD_FLOOR: f64 = 1e-6;

    /// Leaves vectors unchanged.
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn fit<V: AsRef<[f64]>>(data: &[V]) -> Result<Self> {
        if data.len() < 2 {
            return Err(Error::Empty(format!("normalization needs at least 2 vectors, got {}", data.len())));
        }
        let dim = data[0].as_ref().len();
        let mut mean = vec![0.0; dim];
        for v in data {
            let v = v.as_ref();
            if v.len() != dim {
                return Err(Error::Dimension { expected: dim, actual: v.len() });
            }
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        let n = data.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for v in data {
            for ((s, x), m) in var.iter_mut().zip(v.as_ref()).zip(&mean) {
                *s += (x - m) * (x - m);
            }
        }
        let std = var.iter().map(|s| (s / n).sqrt().max(Self::STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s).collect()
    }

    pub fn invert(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| x * s + m).collect()
    }
}
