//! MELP encoder-side analysis: one [`MelpFrame`] per 180-sample frame.
//!
//! Every frame is analysed around its centre sample. LPC uses a 200-sample Hamming window;
//! pitch and voicing use a 320-sample context so that lags up to 160 fit twice.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::{mean_square, AudioSignal};
use crate::dsp::{self, hamming};
use crate::error::{Error, Result};
use crate::frame::*;
use crate::lpc;

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub frame_len: usize,
    pub lpc_order: usize,
    pub pitch_min: f64,
    pub pitch_max: f64,
    pub band_edges_hz: [f64; NUM_BANDS + 1],
    pub voicing_threshold: f64,
    /// Band-1 correlation range that marks a frame aperiodic.
    pub aperiodic_range: (f64, f64),
    pub gain_floor_db: f64,
    pub lpc_window: usize,
    pub bw_expansion: f64,
    pub pitch_lowpass_hz: f64,
    /// Bands whose energy is this far (dB) below the full-band energy are unvoiced.
    pub band_energy_gate_db: f64,
    /// A shorter lag is preferred if its correlation reaches this fraction of the best.
    pub submultiple_ratio: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            frame_len: FRAME_LEN,
            lpc_order: LPC_ORDER,
            pitch_min: PITCH_MIN,
            pitch_max: PITCH_MAX,
            band_edges_hz: [0.0, 500.0, 1000.0, 2000.0, 3000.0, 4000.0],
            voicing_threshold: 0.6,
            aperiodic_range: (0.5, 0.7),
            gain_floor_db: GAIN_FLOOR_DB,
            lpc_window: 200,
            bw_expansion: 0.994,
            pitch_lowpass_hz: 1000.0,
            band_energy_gate_db: -40.0,
            submultiple_ratio: 0.8,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frame_len != FRAME_LEN || self.lpc_order != LPC_ORDER {
            return Err(Error::Config("frame length and LPC order are fixed at 180 / 10".into()));
        }
        if !self.band_edges_hz.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config("band edges must be ascending".into()));
        }
        if !(self.pitch_min >= 2.0 && self.pitch_min < self.pitch_max) {
            return Err(Error::Config("invalid pitch range".into()));
        }
        Ok(())
    }

    fn context_len(&self) -> usize {
        2 * self.pitch_max.ceil() as usize
    }
}

const BAND_FIR_TAPS: usize = 65;
const FOURIER_FFT: usize = 512;
const GAIN_WINDOW_MIN: usize = 120;

/// Normalised autocorrelation at `lag`, with both windows of length `len` centred in `x`.
fn centered_correlation(x: &[f64], lag: usize, len: usize) -> f64 {
    let mid = x.len() / 2;
    let start = mid.saturating_sub((len + lag) / 2);
    if start + lag + len > x.len() {
        return 0.0;
    }
    dsp::normalized_correlation(x, start, lag, len)
}

fn parabolic(r_m: f64, r_0: f64, r_p: f64) -> (f64, f64) {
    let den = r_m - 2.0 * r_0 + r_p;
    if den >= 0.0 {
        return (0.0, r_0);
    }
    let delta = (0.5 * (r_m - r_p) / den).clamp(-0.5, 0.5);
    (delta, r_0 - 0.25 * (r_m - r_p) * delta)
}

/// Pitch period (samples) and correlation strength in [0, 1] from a context window of at
/// least `2 * pitch_max` samples.
///
/// The integer lag maximising the normalised autocorrelation is refined parabolically; if a
/// sub-multiple of it correlates almost as well, the shorter period wins.
pub fn estimate_pitch(context: &[f64], cfg: &AnalysisConfig) -> (f64, f64) {
    let lo = cfg.pitch_min.floor() as usize;
    let hi = cfg.pitch_max.ceil() as usize;
    let len = hi;
    let r: Vec<f64> = (0..=hi + 1).map(|lag| if lag < lo.saturating_sub(1) { 0.0 } else { centered_correlation(context, lag, len) }).collect();
    let best = (lo..=hi).max_by(|&a, &b| r[a].partial_cmp(&r[b]).unwrap().then(b.cmp(&a))).unwrap();
    let refine = |lag: usize| -> (f64, f64) {
        if lag > lo && lag < hi {
            let (d, v) = parabolic(r[lag - 1], r[lag], r[lag + 1]);
            (lag as f64 + d, v)
        } else {
            (lag as f64, r[lag])
        }
    };
    let (mut pitch, mut strength) = refine(best);
    let max_k = (best as f64 / cfg.pitch_min).floor() as usize;
    for k in (2..=max_k).rev() {
        let centre = best as f64 / k as f64;
        let radius = (0.5 + centre * 0.03).ceil() as usize;
        let from = ((centre.round() as usize).saturating_sub(radius)).max(lo);
        let to = ((centre.round() as usize) + radius).min(hi);
        if from > to {
            continue;
        }
        let cand = (from..=to).max_by(|&a, &b| r[a].partial_cmp(&r[b]).unwrap()).unwrap();
        if r[cand] >= cfg.submultiple_ratio * r[best] && r[cand] > 0.0 {
            (pitch, strength) = refine(cand);
            break;
        }
    }
    (pitch.clamp(cfg.pitch_min, cfg.pitch_max), strength.clamp(0.0, 1.0))
}

/// Best normalised correlation within ±1 sample of the pitch lag.
fn correlation_near(x: &[f64], pitch: f64, len: usize) -> f64 {
    let p = pitch.round() as usize;
    (p.saturating_sub(1).max(1)..=p + 1).map(|lag| centered_correlation(x, lag, len)).fold(f64::MIN, f64::max)
}

fn envelope(x: &[f64]) -> Vec<f64> {
    let mut y = Vec::with_capacity(x.len());
    let mut s = 0.0;
    for v in x {
        s = 0.7 * s + 0.3 * v.abs();
        y.push(s);
    }
    let mean = y.iter().sum::<f64>() / y.len().max(1) as f64;
    y.iter_mut().for_each(|v| *v -= mean);
    y
}

/// Per-band voicing strengths for band-filtered contexts.
fn band_strengths(bands: &[Vec<f64>], full_energy: f64, pitch: f64, cfg: &AnalysisConfig) -> [f64; NUM_BANDS] {
    let len = cfg.pitch_max.ceil() as usize;
    let gate = full_energy * 10f64.powf(cfg.band_energy_gate_db / 10.0);
    let mut out = [0.0; NUM_BANDS];
    for (b, x) in bands.iter().enumerate() {
        if x.iter().map(|v| v * v).sum::<f64>() <= gate.max(1e-20) {
            continue;
        }
        let mut r = correlation_near(x, pitch, len);
        if b > 0 {
            r = r.max(correlation_near(&envelope(x), pitch, len) - 0.1);
        }
        out[b] = r;
    }
    out
}

/// Thresholded bandpass voicing for a raw context window.
pub fn bandpass_voicing(context: &[f64], pitch: f64, cfg: &AnalysisConfig) -> [bool; NUM_BANDS] {
    let bank = dsp::bandpass_bank(&cfg.band_edges_hz, BAND_FIR_TAPS, 8000.0);
    let bands: Vec<Vec<f64>> = bank.iter().map(|h| dsp::filter_centered(context, h)).collect();
    let energy: f64 = context.iter().map(|v| v * v).sum();
    let s = band_strengths(&bands, energy, pitch, cfg);
    voicing_from_strengths(&s, cfg)
}

fn voicing_from_strengths(s: &[f64; NUM_BANDS], cfg: &AnalysisConfig) -> [bool; NUM_BANDS] {
    let mut v = [false; NUM_BANDS];
    for b in 0..NUM_BANDS {
        v[b] = s[b] >= cfg.voicing_threshold;
    }
    if !v[0] {
        v = [false; NUM_BANDS];
    }
    v
}

/// Subframe gains in dB: `10 log10(mean square + 1e-10)`, floored.
pub fn gain_pair(frame: &[f64], floor_db: f64) -> [f64; 2] {
    let half = frame.len() / 2;
    let g = |x: &[f64]| (10.0 * (mean_square(x) + 1e-10).log10()).max(floor_db);
    [g(&frame[..half]), g(&frame[half..])]
}

/// Gain of the subframe centred at `centre`: measured over a whole number of pitch periods
/// spanning at least 120 samples when `pitch` is given, over 120 samples otherwise. The window
/// is shifted inside the signal near its edges.
pub fn subframe_gain(x: &[f64], centre: usize, pitch: Option<f64>, floor_db: f64) -> f64 {
    let len = match pitch {
        Some(p) => {
            let p = p.round().max(1.0) as usize;
            (GAIN_WINDOW_MIN.div_ceil(p) * p).min(2 * PITCH_MAX as usize)
        }
        None => GAIN_WINDOW_MIN,
    }
    .min(x.len());
    let start = centre.saturating_sub(len / 2).min(x.len() - len);
    (10.0 * (mean_square(&x[start..start + len]) + 1e-10).log10()).max(floor_db)
}

/// Harmonic magnitudes of an LPC residual window, sampled at the first ten pitch harmonics
/// (peak-picked within half a harmonic spacing) and normalised to unit RMS. Harmonics at or
/// beyond Nyquist are set to one.
pub fn fourier_magnitudes(residual: &[f64], pitch: f64) -> [f64; NUM_HARMONICS] {
    let fft = FftPlanner::<f64>::new().plan_fft_forward(FOURIER_FFT);
    fourier_magnitudes_with(&fft, residual, pitch)
}

fn fourier_magnitudes_with(fft: &Arc<dyn Fft<f64>>, residual: &[f64], pitch: f64) -> [f64; NUM_HARMONICS] {
    let n = residual.len().min(FOURIER_FFT);
    let start = (residual.len() - n) / 2;
    let w = hamming(n);
    let mut buf = vec![Complex::new(0.0, 0.0); FOURIER_FFT];
    for i in 0..n {
        buf[i].re = residual[start + i] * w[i];
    }
    fft.process(&mut buf);
    let mag: Vec<f64> = buf[..=FOURIER_FFT / 2].iter().map(|c| c.norm()).collect();
    let spacing = FOURIER_FFT as f64 / pitch;
    let half = (spacing / 2.0).floor().max(1.0) as isize;
    let mut out = [1.0; NUM_HARMONICS];
    let mut valid = 0;
    for k in 0..NUM_HARMONICS {
        let centre = (k + 1) as f64 * spacing;
        if centre >= (FOURIER_FFT / 2) as f64 {
            break;
        }
        let c = centre.round() as isize;
        out[k] = (c - half..=c + half)
            .filter(|&i| i >= 0 && i <= (FOURIER_FFT / 2) as isize)
            .map(|i| mag[i as usize])
            .fold(0.0, f64::max);
        valid = k + 1;
    }
    let ms = out[..valid].iter().map(|v| v * v).sum::<f64>() / valid.max(1) as f64;
    if valid == 0 || ms <= 1e-30 {
        return [1.0; NUM_HARMONICS];
    }
    let scale = ms.sqrt();
    for v in &mut out[..valid] {
        *v = (*v / scale).max(1e-6);
    }
    out
}

/// Centred, zero-padded slice of `x` of length `len` around `centre`.
fn window_at(x: &[f64], centre: usize, len: usize) -> Vec<f64> {
    let start = centre as isize - (len / 2) as isize;
    (0..len as isize)
        .map(|i| {
            let k = start + i;
            if k >= 0 && (k as usize) < x.len() {
                x[k as usize]
            } else {
                0.0
            }
        })
        .collect()
}

fn dc_block(x: &[f64]) -> Vec<f64> {
    let (mut x1, mut y1) = (0.0, 0.0);
    x.iter()
        .map(|&v| {
            let y = v - x1 + 0.995 * y1;
            x1 = v;
            y1 = y;
            y
        })
        .collect()
}

/// Analyses an 8 kHz utterance into `floor(len / 180)` frames; a trailing partial frame is
/// dropped.
pub fn analyze_utterance(signal: &AudioSignal, cfg: &AnalysisConfig) -> Result<Vec<MelpFrame>> {
    signal.validate_for_codec()?;
    cfg.validate()?;
    let n_frames = signal.len() / FRAME_LEN;
    if n_frames == 0 {
        return Err(Error::TooShort { needed: FRAME_LEN, actual: signal.len() });
    }
    let x = dc_block(&signal.samples);
    let lowpassed = dsp::filter_centered(&x, &dsp::lowpass_fir(cfg.pitch_lowpass_hz, BAND_FIR_TAPS, 8000.0));
    let bank = dsp::bandpass_bank(&cfg.band_edges_hz, BAND_FIR_TAPS, 8000.0);
    let bands: Vec<Vec<f64>> = bank.iter().map(|h| dsp::filter_centered(&x, h)).collect();
    let lpc_win = hamming(cfg.lpc_window);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(FOURIER_FFT);
    let ctx_len = cfg.context_len();

    let mut frames = Vec::with_capacity(n_frames);
    let mut prev_lsf = lpc::flat_lsf(LPC_ORDER);
    for k in 0..n_frames {
        let centre = k * FRAME_LEN + FRAME_LEN / 2;
        let seg = window_at(&x, centre, cfg.lpc_window);
        let windowed: Vec<f64> = seg.iter().zip(&lpc_win).map(|(a, b)| a * b).collect();
        let a = lpc::lpc_from_windowed(&windowed, cfg.lpc_order, cfg.bw_expansion);
        let lsf = lpc::lpc_to_lsf(&a).unwrap_or_else(|_| prev_lsf.clone());
        prev_lsf = lsf.clone();

        // Pitch lags come from the whitened low band, so a strong second harmonic near F1
        // cannot pass for the fundamental; strength is still measured on the speech itself.
        let lp_ctx = window_at(&lowpassed, centre, ctx_len + LPC_ORDER);
        let whitened = lpc::inverse_filter(&a, &lp_ctx);
        let (pitch, _) = estimate_pitch(&whitened[LPC_ORDER..], cfg);
        let pitch_strength = correlation_near(&lp_ctx[LPC_ORDER..], pitch, cfg.pitch_max.ceil() as usize).clamp(0.0, 1.0);
        let ctx_bands: Vec<Vec<f64>> = bands.iter().map(|b| window_at(b, centre, ctx_len)).collect();
        let full_energy: f64 = window_at(&x, centre, ctx_len).iter().map(|v| v * v).sum();
        let mut strengths = band_strengths(&ctx_bands, full_energy, pitch, cfg);
        // Narrow-band noise can correlate well in the lowest band alone; the low-passed
        // pitch correlation has to agree.
        strengths[0] = strengths[0].min(pitch_strength);
        let bpvc = voicing_from_strengths(&strengths, cfg);
        let (ap_lo, ap_hi) = cfg.aperiodic_range;

        let mut frame = MelpFrame {
            lsf: lsf.try_into().expect("LPC order 10"),
            gain_db: [0.0; 2],
            bpvc,
            pitch,
            aperiodic: (ap_lo..=ap_hi).contains(&strengths[0]),
            fourier_mag: [1.0; NUM_HARMONICS],
        };
        if frame.voiced() {
            let ext = window_at(&x, centre, cfg.lpc_window + LPC_ORDER);
            let res = lpc::inverse_filter(&a, &ext);
            frame.fourier_mag = fourier_magnitudes_with(&fft, &res[LPC_ORDER..], pitch);
        }
        frame.normalize_voicing();
        let gain_pitch = frame.voiced().then_some(frame.pitch);
        for (i, g) in frame.gain_db.iter_mut().enumerate() {
            let sub_centre = k * FRAME_LEN + i * SUBFRAME_LEN + SUBFRAME_LEN / 2;
            *g = subframe_gain(&x, sub_centre, gain_pitch, cfg.gain_floor_db);
        }
        frames.push(frame);
    }
    Ok(frames)
}
