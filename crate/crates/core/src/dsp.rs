//! Small DSP building blocks shared by analysis, synthesis and metrics.

use std::f64::consts::PI;

pub fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n).map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()).collect()
}

/// Windowed-sinc low-pass FIR (Hamming), odd length, unit DC gain.
/// `cutoff_hz >= fs/2` yields a unit impulse and `cutoff_hz <= 0` all zeros.
pub fn lowpass_fir(cutoff_hz: f64, taps: usize, fs: f64) -> Vec<f64> {
    assert!(taps % 2 == 1, "FIR length must be odd");
    let mid = (taps / 2) as isize;
    if cutoff_hz <= 0.0 {
        return vec![0.0; taps];
    }
    if cutoff_hz >= fs / 2.0 {
        let mut h = vec![0.0; taps];
        h[mid as usize] = 1.0;
        return h;
    }
    let fc = cutoff_hz / fs;
    let w = hamming(taps);
    let mut h: Vec<f64> = (0..taps as isize)
        .map(|i| {
            let n = (i - mid) as f64;
            let s = if n == 0.0 { 2.0 * fc } else { (2.0 * PI * fc * n).sin() / (PI * n) };
            s * w[i as usize]
        })
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= dc);
    h
}

/// Band-pass filters whose sum is exactly a unit impulse: band `b` is
/// `lowpass(edges[b+1]) - lowpass(edges[b])`.
pub fn bandpass_bank(edges_hz: &[f64], taps: usize, fs: f64) -> Vec<Vec<f64>> {
    let lps: Vec<Vec<f64>> = edges_hz.iter().map(|&f| lowpass_fir(f, taps, fs)).collect();
    lps.windows(2).map(|w| w[1].iter().zip(&w[0]).map(|(hi, lo)| hi - lo).collect()).collect()
}

/// Non-causal filtering with an odd-length FIR centred on each output sample; the output is
/// aligned with the input and has the same length.
pub fn filter_centered(x: &[f64], h: &[f64]) -> Vec<f64> {
    let c = (h.len() / 2) as isize;
    let n = x.len() as isize;
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (j, hj) in h.iter().enumerate() {
                let k = i + c - j as isize;
                if k >= 0 && k < n {
                    acc += hj * x[k as usize];
                }
            }
            acc
        })
        .collect()
}

/// Causal FIR with persistent delay line; coefficients may change between calls.
#[derive(Debug, Clone)]
pub struct FirState {
    hist: Vec<f64>,
    pos: usize,
}

impl FirState {
    pub fn new(len: usize) -> Self {
        Self { hist: vec![0.0; len], pos: 0 }
    }

    #[inline]
    pub fn step(&mut self, h: &[f64], x: f64) -> f64 {
        let len = self.hist.len();
        self.pos = (self.pos + len - 1) % len;
        self.hist[self.pos] = x;
        let mut acc = 0.0;
        for (j, hj) in h.iter().enumerate() {
            acc += hj * self.hist[(self.pos + j) % len];
        }
        acc
    }
}

/// Normalised cross-correlation `Σ x[s+n] x[s+lag+n] / sqrt(Σ x[s+n]² Σ x[s+lag+n]²)`, n < len.
pub fn normalized_correlation(x: &[f64], start: usize, lag: usize, len: usize) -> f64 {
    let a = &x[start..start + len];
    let b = &x[start + lag..start + lag + len];
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (u, v) in a.iter().zip(b) {
        ab += u * v;
        aa += u * u;
        bb += v * v;
    }
    let den = (aa * bb).sqrt();
    if den <= 1e-20 {
        0.0
    } else {
        ab / den
    }
}

pub fn rms(x: &[f64]) -> f64 {
    crate::audio::mean_square(x).sqrt()
}
