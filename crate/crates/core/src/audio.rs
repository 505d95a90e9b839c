//! Audio I/O: 16-bit PCM WAV, SNR-controlled noise mixing and mixture manifests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Sample rate of every codec path.
pub const SAMPLE_RATE: u32 = 8000;

/// Mono signal with samples nominally in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self { samples, sample_rate }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean-square power over the whole signal.
    pub fn power(&self) -> f64 {
        mean_square(&self.samples)
    }

    /// Checks the invariants required by the codec: expected rate, non-empty, finite.
    pub fn validate_for_codec(&self) -> Result<()> {
        if self.sample_rate != SAMPLE_RATE {
            return Err(Error::SampleRate { expected: SAMPLE_RATE, actual: self.sample_rate });
        }
        if self.samples.is_empty() {
            return Err(Error::Empty("audio signal".into()));
        }
        if self.samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::Format("non-finite audio sample".into()));
        }
        Ok(())
    }
}

pub(crate) fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Reads a 16-bit PCM mono WAV file; samples are divided by 32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioSignal> {
    let reader = hound::WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{:?} {}-bit (16-bit PCM required)",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.channels != 1 {
        return Err(Error::ChannelCount(spec.channels));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(AudioSignal::new(samples, spec.sample_rate))
}

/// Reads a WAV file and checks that it is usable by the codec (8 kHz, non-empty).
pub fn read_wav_8k(path: impl AsRef<Path>) -> Result<AudioSignal> {
    let signal = read_wav(path)?;
    signal.validate_for_codec()?;
    Ok(signal)
}

/// Converts one sample to 16-bit PCM, clipping out-of-range values.
pub fn to_pcm16(x: f64) -> i16 {
    (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Writes a 16-bit PCM mono WAV file. Out-of-range samples are clipped with a warning.
pub fn write_wav(signal: &AudioSignal, path: impl AsRef<Path>) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let clipped = signal.samples.iter().filter(|x| x.abs() > 1.0).count();
    if clipped > 0 {
        log::warn!("write_wav: clipping {clipped} samples outside [-1, 1]");
    }
    let mut writer = hound::WavWriter::create(path.as_ref(), spec)?;
    for &x in &signal.samples {
        writer.write_sample(to_pcm16(x))?;
    }
    writer.finalize()?;
    Ok(())
}

/// A speech + scaled-noise mixture with its two addends kept apart.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub mixed: AudioSignal,
    /// Noise segment after gain, aligned with the speech.
    pub noise: Vec<f64>,
    pub gain: f64,
}

/// Mixes `noise` into `speech` at `snr_db`, with powers measured as the mean square over the
/// full utterance. The noise segment starts at a seeded offset and wraps around if needed.
pub fn mix_at_snr(speech: &AudioSignal, noise: &AudioSignal, snr_db: f64, seed: u64) -> Result<AudioSignal> {
    Ok(mix_components(speech, noise, snr_db, seed)?.mixed)
}

pub fn mix_components(speech: &AudioSignal, noise: &AudioSignal, snr_db: f64, seed: u64) -> Result<Mixture> {
    if speech.sample_rate != noise.sample_rate {
        return Err(Error::SampleRate { expected: speech.sample_rate, actual: noise.sample_rate });
    }
    if !snr_db.is_finite() {
        return Err(Error::Config(format!("non-finite SNR {snr_db}")));
    }
    if speech.is_empty() {
        return Err(Error::Empty("speech signal".into()));
    }
    if noise.is_empty() {
        return Err(Error::Empty("noise signal".into()));
    }
    let p_speech = speech.power();
    if p_speech <= 0.0 {
        return Err(Error::ZeroPower("speech"));
    }
    let n = speech.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = if noise.len() > n { rng.random_range(0..noise.len()) } else { 0 };
    let segment: Vec<f64> = (0..n).map(|i| noise.samples[(offset + i) % noise.len()]).collect();
    let p_noise = mean_square(&segment);
    if p_noise <= 0.0 {
        return Err(Error::ZeroPower("noise"));
    }
    let gain = (p_speech / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let scaled: Vec<f64> = segment.iter().map(|v| gain * v).collect();
    let mixed = speech.samples.iter().zip(&scaled).map(|(s, v)| s + v).collect();
    Ok(Mixture { mixed: AudioSignal::new(mixed, speech.sample_rate), noise: scaled, gain })
}

/// One line of a mixture manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct MixEntry {
    pub speech: PathBuf,
    pub noise: PathBuf,
    pub snr_db: f64,
    pub seed: u64,
}

impl MixEntry {
    /// Noise condition label: the noise file stem.
    pub fn noise_label(&self) -> String {
        self.noise.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    }

    /// Loads both files and produces the mixture.
    pub fn load(&self) -> Result<(AudioSignal, Mixture)> {
        let speech = read_wav_8k(&self.speech)?;
        let noise = read_wav_8k(&self.noise)?;
        let mixture = mix_components(&speech, &noise, self.snr_db, self.seed)?;
        Ok((speech, mixture))
    }
}

fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e.eq_ignore_ascii_case("wav")).unwrap_or(false))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Empty(format!("no .wav files in {}", dir.display())));
    }
    Ok(files)
}

/// Cross product of every speech file, noise file and SNR, in sorted order. The seed of
/// an entry is its index, so identical inputs always give an identical manifest.
pub fn build_manifest(speech_dir: &Path, noise_dir: &Path, snrs_db: &[f64]) -> Result<Vec<MixEntry>> {
    if snrs_db.is_empty() {
        return Err(Error::Empty("SNR list".into()));
    }
    let speech = list_wavs(speech_dir)?;
    let noise = list_wavs(noise_dir)?;
    let mut entries = Vec::with_capacity(speech.len() * noise.len() * snrs_db.len());
    for s in &speech {
        for n in &noise {
            for &snr in snrs_db {
                let seed = entries.len() as u64;
                entries.push(MixEntry { speech: s.clone(), noise: n.clone(), snr_db: snr, seed });
            }
        }
    }
    Ok(entries)
}

/// Tab-separated manifest text: speech_path, noise_path, snr_db, seed.
pub fn format_manifest(entries: &[MixEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", e.speech.display(), e.noise.display(), e.snr_db, e.seed);
    }
    out
}

pub fn parse_manifest(text: &str) -> Result<Vec<MixEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::Format(format!("manifest line {}: expected 4 fields", i + 1)));
            }
            let bad = |what: &str| Error::Format(format!("manifest line {}: bad {what}", i + 1));
            Ok(MixEntry {
                speech: PathBuf::from(fields[0]),
                noise: PathBuf::from(fields[1]),
                snr_db: fields[2].trim().parse().map_err(|_| bad("snr"))?,
                seed: fields[3].trim().parse().map_err(|_| bad("seed"))?,
            })
        })
        .collect()
}

pub fn write_manifest(entries: &[MixEntry], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_manifest(entries))?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<MixEntry>> {
    let entries = parse_manifest(&fs::read_to_string(path)?)?;
    if entries.is_empty() {
        return Err(Error::Empty("manifest".into()));
    }
    Ok(entries)
}
