//! Short-time objective intelligibility at its native 10 kHz rate.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

const FS: usize = 10_000;
const FRAME: usize = 256;
const NFFT: usize = 512;
const BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
/// Frames per analysis segment (384 ms).
const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;
const EPS: f64 = f64::EPSILON;

/// Half-width of the resampling kernel in input samples.
const RESAMPLE_HALF: isize = 24;

/// Polyphase windowed-sinc kernels, one per output phase (outputs repeat their input
/// offset every 5 samples since 10 / 8 = 5 / 4).
fn resample_kernels() -> &'static [Vec<f64>; 5] {
    static K: OnceLock<[Vec<f64>; 5]> = OnceLock::new();
    K.get_or_init(|| {
        std::array::from_fn(|phase| {
            let frac = (phase * 4 % 5) as f64 / 5.0;
            (-RESAMPLE_HALF + 1..=RESAMPLE_HALF)
                .map(|j| {
                    // distance between output instant and input sample j
                    let t = frac - j as f64;
                    let sinc = if t == 0.0 { 1.0 } else { (PI * t).sin() / (PI * t) };
                    let u = t / RESAMPLE_HALF as f64;
                    let blackman = if u.abs() >= 1.0 { 0.0 } else { 0.42 + 0.5 * (PI * u).cos() + 0.08 * (2.0 * PI * u).cos() };
                    sinc * blackman
                })
                .collect()
        })
    })
}

/// Windowed-sinc resampling from 8 kHz to 10 kHz.
pub fn resample_8k_to_10k(x: &[f64]) -> Vec<f64> {
    let kernels = resample_kernels();
    let out_len = (x.len() * 5).div_ceil(4);
    (0..out_len)
        .map(|m| {
            let base = (m * 4 / 5) as isize;
            let k = &kernels[m % 5];
            let mut acc = 0.0;
            for (i, h) in k.iter().enumerate() {
                let n = base + i as isize - RESAMPLE_HALF + 1;
                if n >= 0 && (n as usize) < x.len() {
                    acc += h * x[n as usize];
                }
            }
            acc
        })
        .collect()
}

fn hann() -> Vec<f64> {
    // periodic-free Hann with the zero end points dropped
    (1..=FRAME).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (FRAME + 1) as f64).cos()).collect()
}

fn frame_starts(len: usize, hop: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(FRAME)).step_by(hop)
}

/// Drops frames more than 40 dB below the loudest clean frame, in both signals, and
/// overlap-adds what remains.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = hann();
    let hop = FRAME / 2;
    let windowed = |s: &[f64], start: usize| -> Vec<f64> { (0..FRAME).map(|i| w[i] * s[start + i]).collect() };
    let starts: Vec<usize> = frame_starts(x.len(), hop).collect();
    let energy: Vec<f64> = starts
        .iter()
        .map(|&s| 20.0 * (windowed(x, s).iter().map(|v| v * v).sum::<f64>().sqrt() + EPS).log10())
        .collect();
    let max = energy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts.iter().zip(&energy).filter(|(_, e)| max - DYN_RANGE_DB - **e < 0.0).map(|(s, _)| *s).collect();
    let ola = |s: &[f64]| -> Vec<f64> {
        if kept.is_empty() {
            return Vec::new();
        }
        let mut out = vec![0.0; (kept.len() - 1) * hop + FRAME];
        for (k, &start) in kept.iter().enumerate() {
            for (i, v) in windowed(s, start).iter().enumerate() {
                out[k * hop + i] += v;
            }
        }
        out
    };
    (ola(x), ola(y))
}

/// One-third octave band envelopes: `bands[j][m]`.
fn band_envelopes(x: &[f64]) -> Vec<Vec<f64>> {
    let w = hann();
    let fft = FftPlanner::new().plan_fft_forward(NFFT);
    let bins = band_bins();
    let mut out = vec![Vec::new(); BANDS];
    let mut buf = vec![Complex::new(0.0, 0.0); NFFT];
    for start in frame_starts(x.len(), FRAME / 2) {
        buf.fill(Complex::new(0.0, 0.0));
        for i in 0..FRAME {
            buf[i].re = w[i] * x[start + i];
        }
        fft.process(&mut buf);
        for (j, &(lo, hi)) in bins.iter().enumerate() {
            out[j].push(buf[lo..hi].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt());
        }
    }
    out
}

/// Bin range of each band: edges at the bins nearest to the band's lower and upper
/// third-octave limits.
fn band_bins() -> [(usize, usize); BANDS] {
    let nearest = |f: f64| -> usize { (f * NFFT as f64 / FS as f64).round().clamp(0.0, (NFFT / 2) as f64) as usize };
    std::array::from_fn(|k| {
        let k = k as f64;
        let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
        let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
        (nearest(lo), nearest(hi))
    })
}

fn centred_unit(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let c: Vec<f64> = v.iter().map(|x| x - mean).collect();
    let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt() + EPS;
    c.iter().map(|x| x / norm).collect()
}

/// STOI of a degraded signal against its clean reference, both 8 kHz and aligned.
pub fn stoi(clean: &[f64], degraded: &[f64]) -> Result<f64> {
    if clean.len() != degraded.len() {
        return Err(Error::Length(clean.len(), degraded.len()));
    }
    let x = resample_8k_to_10k(clean);
    let y = resample_8k_to_10k(degraded);
    let (x, y) = remove_silent_frames(&x, &y);
    let xb = band_envelopes(&x);
    let yb = band_envelopes(&y);
    let frames = xb[0].len();
    if frames < SEGMENT {
        return Err(Error::TooShort { needed: SEGMENT, actual: frames });
    }
    let clip = 1.0 + 10f64.powf(-BETA_DB / 20.0);
    let mut total = 0.0;
    let mut count = 0usize;
    for m in SEGMENT..=frames {
        for j in 0..BANDS {
            let xs = &xb[j][m - SEGMENT..m];
            let ys = &yb[j][m - SEGMENT..m];
            let nx = xs.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ny = ys.iter().map(|v| v * v).sum::<f64>().sqrt();
            let alpha = nx / (ny + EPS);
            let yp: Vec<f64> = ys.iter().zip(xs).map(|(yv, xv)| (alpha * yv).min(clip * xv)).collect();
            let (a, b) = (centred_unit(xs), centred_unit(&yp));
            total += a.iter().zip(&b).map(|(p, q)| p * q).sum::<f64>();
            count += 1;
        }
    }
    Ok((total / count as f64).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Amplitude-modulated harmonic complex, speech-like envelope fluctuations.
    fn speechlike(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f0 = rng.random_range(90.0..180.0);
        let rate = rng.random_range(3.0..6.0);
        (0..n)
            .map(|i| {
                let t = i as f64 / 8000.0;
                let env = (0.5 + 0.5 * (2.0 * PI * rate * t).sin()).powi(2);
                let tone: f64 = (1..20).map(|h| (2.0 * PI * f0 * h as f64 * t).sin() / h as f64).sum();
                0.2 * env * tone
            })
            .collect()
    }

    fn white(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-0.3..0.3)).collect()
    }

    #[test]
    fn resampler_preserves_tones() {
        let x: Vec<f64> = (0..8000).map(|i| (2.0 * PI * 1000.0 * i as f64 / 8000.0).sin()).collect();
        let y = resample_8k_to_10k(&x);
        assert_eq!(y.len(), 10_000);
        let mut worst: f64 = 0.0;
        for (m, v) in y.iter().enumerate().skip(100).take(9800) {
            let expected = (2.0 * PI * 1000.0 * m as f64 / 10_000.0).sin();
            worst = worst.max((v - expected).abs());
        }
        assert!(worst < 2e-3, "{worst}");
    }

    #[test]
    fn band_layout() {
        let b = band_bins();
        assert_eq!(b[0], (7, 9));
        assert!(b.windows(2).all(|w| w[0].1 == w[1].0));
        assert!(b[BANDS - 1].1 <= NFFT / 2);
    }

    #[test]
    fn self_comparison_is_one() {
        let x = speechlike(16000, 1);
        assert!(stoi(&x, &x).unwrap() >= 0.999);
    }

    fn lcg_noise(n: usize) -> Vec<f64> {
        let mut s: u64 = 12345;
        (0..n)
            .map(|_| {
                s = (1_664_525 * s + 1_013_904_223) % (1 << 32);
                (s as f64 / 4_294_967_296.0 - 0.5) * 0.6
            })
            .collect()
    }

    /// Scores of the published reference implementation (pystoi 0.4) on the same signals.
    #[test]
    fn matches_reference_implementation() {
        let n = 16000;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / 8000.0;
                let env = (0.5 + 0.5 * (2.0 * PI * 4.0 * t).sin()).powi(2);
                0.2 * env * (1..20).map(|h| (2.0 * PI * 120.0 * h as f64 * t).sin() / h as f64).sum::<f64>()
            })
            .collect();
        let nz = lcg_noise(n);
        let ratio = x.iter().map(|v| v * v).sum::<f64>() / nz.iter().map(|v| v * v).sum::<f64>();
        let cases = [(None, 0.37113), (Some(20.0), 0.91871), (Some(10.0), 0.87296), (Some(5.0), 0.81139), (Some(0.0), 0.71312)];
        for (snr, expected) in cases {
            let y: Vec<f64> = match snr {
                None => nz.clone(),
                Some(snr) => {
                    let g = (ratio / 10f64.powf(snr / 10.0)).sqrt();
                    x.iter().zip(&nz).map(|(a, b)| a + g * b).collect()
                }
            };
            let s = stoi(&x, &y).unwrap();
            assert!((s - expected).abs() < 0.015, "{snr:?}: {s} vs {expected}");
        }
    }

    #[test]
    fn more_noise_lowers_score() {
        let x = speechlike(24000, 3);
        let n = white(24000, 4);
        let p: f64 = x.iter().map(|v| v * v).sum::<f64>() / n.iter().map(|v| v * v).sum::<f64>();
        let mut prev = 1.0;
        for snr in [20.0, 10.0, 5.0, 0.0, -5.0] {
            let g = (p / 10f64.powf(snr / 10.0)).sqrt();
            let y: Vec<f64> = x.iter().zip(&n).map(|(a, b)| a + g * b).collect();
            let s = stoi(&x, &y).unwrap();
            assert!(s <= prev, "{snr} dB: {s} > {prev}");
            prev = s;
        }
    }

    #[test]
    fn short_input_is_rejected() {
        let x = speechlike(2000, 5);
        assert!(matches!(stoi(&x, &x), Err(Error::TooShort { .. })));
        assert!(stoi(&x, &x[..100]).is_err());
    }
}
