//! Seeded synthetic speech and noise for desk-scale experiments.
//!
//! Utterances alternate vowel segments (glottal pulse trains through time-varying formant
//! filters with drifting pitch), fricative segments (shaped noise) and pauses. Babble is a
//! sum of independent synthetic talkers.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::audio::{write_wav, AudioSignal, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::frame::FRAME_LEN;
use crate::lpc::resonator_lpc;

const FS: f64 = SAMPLE_RATE as f64;
/// Broad low resonance present in every vowel; gives the spectrum its tilt.
const TILT: (f64, f64) = (250.0, 300.0);
const FORMANT_BW: [f64; 4] = [80.0, 90.0, 150.0, 300.0];
const VOWELS: [[f64; 4]; 7] = [
    [730.0, 1090.0, 2440.0, 3400.0],
    [530.0, 1840.0, 2480.0, 3500.0],
    [300.0, 2250.0, 3000.0, 3600.0],
    [570.0, 840.0, 2410.0, 3300.0],
    [320.0, 870.0, 2240.0, 3300.0],
    [660.0, 1720.0, 2410.0, 3400.0],
    [490.0, 1350.0, 1690.0, 3300.0],
];
const FRICATIVES: [[(f64, f64); 5]; 3] = [
    [(300.0, 600.0), (1200.0, 700.0), (2600.0, 300.0), (3300.0, 250.0), (3800.0, 400.0)],
    [(400.0, 700.0), (1800.0, 500.0), (2500.0, 250.0), (3200.0, 400.0), (3700.0, 500.0)],
    [(600.0, 1500.0), (1500.0, 1200.0), (2500.0, 1000.0), (3400.0, 800.0), (3800.0, 900.0)],
];
/// Filter coefficients are refreshed every this many samples inside a vowel.
const FILTER_BLOCK: usize = 40;
const RAMP: usize = 200;
const ACTIVE_RMS: f64 = 0.08;
const FLOOR_RMS: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct SpeechConfig {
    pub duration_s: (f64, f64),
    /// Range of each talker's base F0.
    pub f0_hz: (f64, f64),
}

impl Default for SpeechConfig {
    fn default() -> Self {
        Self { duration_s: (1.6, 2.6), f0_hz: (90.0, 220.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Segment {
    Vowel,
    Fricative,
    Pause,
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// All-pole filter whose coefficients may change between calls without resetting state.
struct AllPole {
    hist: Vec<f64>,
}

impl AllPole {
    fn new(order: usize) -> Self {
        Self { hist: vec![0.0; order] }
    }

    fn run(&mut self, a: &[f64], x: &[f64], out: &mut Vec<f64>) {
        for &v in x {
            let y = v - a.iter().zip(&self.hist).map(|(c, h)| c * h).sum::<f64>();
            self.hist.rotate_right(1);
            self.hist[0] = y;
            out.push(y);
        }
    }
}

fn scale_to_rms(x: &mut [f64], rms: f64) {
    let cur = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if cur > 0.0 {
        x.iter_mut().for_each(|v| *v *= rms / cur);
    }
}

fn apply_ramps(x: &mut [f64]) {
    let n = RAMP.min(x.len() / 2);
    let len = x.len();
    for i in 0..n {
        let w = 0.5 - 0.5 * (std::f64::consts::PI * i as f64 / n as f64).cos();
        x[i] *= w;
        x[len - 1 - i] *= w;
    }
}

fn f0_at(i: usize, len: usize, f0_start: f64, f0_end: f64) -> f64 {
    f0_start + (f0_end - f0_start) * i as f64 / len as f64
}

fn vowel(rng: &mut impl Rng, len: usize, f0_start: f64, f0_end: f64) -> Vec<f64> {
    let v0 = VOWELS[rng.random_range(0..VOWELS.len())];
    let v1 = VOWELS[rng.random_range(0..VOWELS.len())];
    let aspiration = rng.random_range(0.0..0.05);
    let mut filter = AllPole::new(10);
    let mut out = Vec::with_capacity(len);
    let mut phase = 1.0;
    let mut start = 0;
    while start < len {
        let end = (start + FILTER_BLOCK).min(len);
        let t = start as f64 / len as f64;
        let mut res = vec![TILT];
        for k in 0..4 {
            res.push((v0[k] + t * (v1[k] - v0[k]), FORMANT_BW[k]));
        }
        let a = resonator_lpc(&res, FS);
        let excitation: Vec<f64> = (start..end)
            .map(|i| {
                let period = FS / f0_at(i, len, f0_start, f0_end);
                phase += 1.0 / period;
                // Zero-mean pulses: a DC offset would leave slow tails after the
                // segment ramps.
                let mut pulse = -1.0 / period.sqrt();
                if phase >= 1.0 {
                    phase -= 1.0;
                    pulse += period.sqrt();
                }
                pulse + aspiration * gaussian(rng)
            })
            .collect();
        filter.run(&a, &excitation, &mut out);
        start = end;
    }
    out
}

fn fricative(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    let a = resonator_lpc(&FRICATIVES[rng.random_range(0..FRICATIVES.len())], FS);
    let noise: Vec<f64> = (0..len).map(|_| gaussian(rng)).collect();
    let mut out = Vec::with_capacity(len);
    AllPole::new(a.len()).run(&a, &noise, &mut out);
    out
}

fn ms(rng: &mut impl Rng, lo: f64, hi: f64) -> usize {
    (rng.random_range(lo..hi) * FS / 1000.0) as usize
}

/// A synthetic utterance with the F0 (Hz) used at every sample, zero outside vowels.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticUtterance {
    pub signal: AudioSignal,
    pub f0: Vec<f64>,
}

impl SyntheticUtterance {
    /// Mean F0 over the voiced samples of each 180-sample frame that is voiced throughout
    /// its middle 120 samples, `None` otherwise.
    pub fn frame_f0(&self) -> Vec<Option<f64>> {
        self.f0
            .chunks_exact(FRAME_LEN)
            .map(|c| {
                let mid = &c[30..150];
                mid.iter().all(|v| *v > 0.0).then(|| mid.iter().sum::<f64>() / mid.len() as f64)
            })
            .collect()
    }
}

/// One synthetic utterance at 8 kHz, fully determined by `seed`.
pub fn speech_utterance(seed: u64, cfg: &SpeechConfig) -> AudioSignal {
    synthetic_utterance(seed, cfg).signal
}

pub fn synthetic_utterance(seed: u64, cfg: &SpeechConfig) -> SyntheticUtterance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = (rng.random_range(cfg.duration_s.0..cfg.duration_s.1) * FS) as usize;
    let base_f0 = rng.random_range(cfg.f0_hz.0..cfg.f0_hz.1);
    let mut x = vec![0.0; ms(&mut rng, 80.0, 200.0)];
    let mut f0_track = vec![0.0; x.len()];
    let mut prev = Segment::Pause;
    let mut f0 = base_f0;
    while x.len() + 800 < total {
        let seg = match rng.random_range(0.0..1.0) {
            p if p < 0.6 => Segment::Vowel,
            p if p < 0.85 => Segment::Fricative,
            _ if prev == Segment::Pause => Segment::Vowel,
            _ => Segment::Pause,
        };
        let mut part = match seg {
            Segment::Vowel => {
                let len = ms(&mut rng, 120.0, 350.0);
                let start = (f0 * rng.random_range(0.9..1.1)).clamp(0.7 * base_f0, 1.4 * base_f0);
                let end = start * rng.random_range(0.8..1.2);
                f0 = end.clamp(0.7 * base_f0, 1.4 * base_f0);
                let (start, end) = (start.clamp(55.0, 360.0), f0.clamp(55.0, 360.0));
                f0_track.extend((0..len).map(|i| f0_at(i, len, start, end)));
                let mut v = vowel(&mut rng, len, start, end);
                scale_to_rms(&mut v, ACTIVE_RMS * 10f64.powf(rng.random_range(-6.0..0.0) / 20.0));
                v
            }
            Segment::Fricative => {
                let len = ms(&mut rng, 60.0, 160.0);
                let mut v = fricative(&mut rng, len);
                scale_to_rms(&mut v, ACTIVE_RMS * 10f64.powf(rng.random_range(-16.0..-8.0) / 20.0));
                v
            }
            Segment::Pause => vec![0.0; ms(&mut rng, 60.0, 150.0)],
        };
        f0_track.resize(x.len() + part.len(), 0.0);
        apply_ramps(&mut part);
        x.extend(part);
        prev = seg;
    }
    x.resize(total, 0.0);
    f0_track.resize(total, 0.0);
    for v in &mut x {
        *v += FLOOR_RMS * gaussian(&mut rng);
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.9 {
        x.iter_mut().for_each(|v| *v *= 0.9 / peak);
    }
    SyntheticUtterance { signal: AudioSignal::new(x, SAMPLE_RATE), f0: f0_track }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    White,
    Babble,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 2] = [NoiseKind::White, NoiseKind::Babble];

    pub fn label(self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Babble => "babble",
        }
    }
}

const BABBLE_TALKERS: u64 = 6;

/// `len` samples of noise with RMS 0.1.
pub fn noise_signal(kind: NoiseKind, len: usize, seed: u64) -> AudioSignal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = match kind {
        NoiseKind::White => (0..len).map(|_| gaussian(&mut rng)).collect(),
        NoiseKind::Babble => {
            let cfg = SpeechConfig::default();
            let mut sum = vec![0.0; len];
            for talker in 0..BABBLE_TALKERS {
                let mut stream = Vec::with_capacity(len + 4000);
                stream.resize(rng.random_range(0..4000), 0.0);
                let mut k = 0;
                while stream.len() < len {
                    let utt_seed = seed.wrapping_mul(0x9E37_79B9).wrapping_add(talker << 32 | k);
                    stream.extend(speech_utterance(utt_seed, &cfg).samples);
                    k += 1;
                }
                sum.iter_mut().zip(&stream).for_each(|(s, v)| *s += v);
            }
            sum
        }
    };
    scale_to_rms(&mut x, 0.1);
    AudioSignal::new(x, SAMPLE_RATE)
}

/// Files of a generated corpus.
#[derive(Debug, Clone)]
pub struct CorpusFiles {
    pub speech: Vec<PathBuf>,
    pub noise: Vec<PathBuf>,
}

/// Writes `utterances` speech files to `dir/speech` and one file per noise kind of
/// `noise_s` seconds to `dir/noise`.
pub fn write_corpus(dir: &Path, utterances: usize, noise_s: f64, seed: u64) -> Result<CorpusFiles> {
    if utterances == 0 {
        return Err(Error::Config("corpus needs at least one utterance".into()));
    }
    if !(noise_s > 0.0) {
        return Err(Error::Config("noise duration must be positive".into()));
    }
    let speech_dir = dir.join("speech");
    let noise_dir = dir.join("noise");
    std::fs::create_dir_all(&speech_dir)?;
    std::fs::create_dir_all(&noise_dir)?;
    let cfg = SpeechConfig::default();
    let mut files = CorpusFiles { speech: Vec::new(), noise: Vec::new() };
    for i in 0..utterances {
        let path = speech_dir.join(format!("utt{i:04}.wav"));
        write_wav(&speech_utterance(utterance_seed(seed, i), &cfg), &path)?;
        files.speech.push(path);
    }
    for (k, kind) in NoiseKind::ALL.into_iter().enumerate() {
        let path = noise_dir.join(format!("{}.wav", kind.label()));
        let noise = noise_signal(kind, (noise_s * FS) as usize, seed.wrapping_add(1_000_003 * (k as u64 + 1)));
        write_wav(&noise, &path)?;
        files.noise.push(path);
    }
    Ok(files)
}

/// Seed of utterance `index` in a corpus generated from `seed`.
pub fn utterance_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(1_000_033).wrapping_add(index as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{analyze_utterance, AnalysisConfig};

    #[test]
    fn deterministic_per_seed() {
        let cfg = SpeechConfig::default();
        assert_eq!(speech_utterance(3, &cfg), speech_utterance(3, &cfg));
        assert_ne!(speech_utterance(3, &cfg).samples, speech_utterance(4, &cfg).samples);
        assert_eq!(noise_signal(NoiseKind::Babble, 4000, 1), noise_signal(NoiseKind::Babble, 4000, 1));
    }

    #[test]
    fn utterances_are_bounded_and_in_range() {
        let cfg = SpeechConfig::default();
        for seed in 0..10 {
            let s = speech_utterance(seed, &cfg);
            let dur = s.len() as f64 / FS;
            assert!((1.6..=2.6).contains(&dur), "{dur}");
            assert!(s.samples.iter().all(|v| v.is_finite() && v.abs() <= 0.9 + 1e-12));
            assert!(s.power() > 1e-4);
        }
    }

    #[test]
    fn utterances_mix_voiced_and_unvoiced_frames() {
        let cfg = SpeechConfig::default();
        let (mut voiced, mut total) = (0, 0);
        for seed in 0..8 {
            let frames = analyze_utterance(&speech_utterance(seed, &cfg), &AnalysisConfig::default()).unwrap();
            voiced += frames.iter().filter(|f| f.voiced()).count();
            total += frames.len();
        }
        let share = voiced as f64 / total as f64;
        assert!((0.3..0.85).contains(&share), "voiced share {share}");
    }

    #[test]
    fn noise_has_unit_level() {
        for kind in NoiseKind::ALL {
            let n = noise_signal(kind, 16000, 9);
            assert_eq!(n.len(), 16000);
            assert!((n.power().sqrt() - 0.1).abs() < 1e-9);
        }
    }

    #[test]
    fn babble_is_nonstationary_white_is_not() {
        let spread = |x: &[f64]| {
            let e: Vec<f64> = x.chunks(800).map(|c| c.iter().map(|v| v * v).sum::<f64>()).collect();
            let (lo, hi) = e.iter().fold((f64::MAX, 0.0f64), |(l, h), v| (l.min(*v), h.max(*v)));
            10.0 * (hi / lo).log10()
        };
        assert!(spread(&noise_signal(NoiseKind::White, 32000, 2).samples) < 2.0);
        assert!(spread(&noise_signal(NoiseKind::Babble, 32000, 2).samples) > 2.0);
    }

    #[test]
    fn writes_corpus_files() {
        let dir = tempfile::tempdir().unwrap();
        let files = write_corpus(dir.path(), 3, 2.0, 5).unwrap();
        assert_eq!(files.speech.len(), 3);
        assert_eq!(files.noise.len(), 2);
        let noise = crate::audio::read_wav_8k(&files.noise[0]).unwrap();
        assert_eq!(noise.len(), 16000);
        assert!(write_corpus(dir.path(), 0, 2.0, 5).is_err());
    }
}
