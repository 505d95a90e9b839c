//! `key = value` overrides for the analysis, synthesis and training defaults.
//!
//! Keys are qualified by section, e.g. `analysis.voicing_threshold = 0.55` or
//! `train.learning_rate = 5e-4`. Blank lines and `#` comments are ignored.

use std::path::Path;
use std::str::FromStr;

use crate::analysis::AnalysisConfig;
use crate::error::{Error, Result};
use crate::synthesis::SynthConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings {
    pub analysis: AnalysisConfig,
    pub synth: SynthConfig,
    pub train: TrainConfig,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_pair(key: &str, value: &str) -> Result<(f64, f64)> {
    let (a, b) = value
        .split_once(',')
        .ok_or_else(|| Error::Config(format!("{key}: expected two comma-separated numbers")))?;
    Ok((parse(key, a.trim())?, parse(key, b.trim())?))
}

impl Settings {
    /// Applies one override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let a = &mut self.analysis;
        let s = &mut self.synth;
        let t = &mut self.train;
        match key {
            "analysis.pitch_min" => a.pitch_min = parse(key, value)?,
            "analysis.pitch_max" => a.pitch_max = parse(key, value)?,
            "analysis.voicing_threshold" => a.voicing_threshold = parse(key, value)?,
            "analysis.aperiodic_range" => a.aperiodic_range = parse_pair(key, value)?,
            "analysis.gain_floor_db" => a.gain_floor_db = parse(key, value)?,
            "analysis.lpc_window" => a.lpc_window = parse(key, value)?,
            "analysis.bw_expansion" => a.bw_expansion = parse(key, value)?,
            "analysis.pitch_lowpass_hz" => a.pitch_lowpass_hz = parse(key, value)?,
            "analysis.band_energy_gate_db" => a.band_energy_gate_db = parse(key, value)?,
            "analysis.submultiple_ratio" => a.submultiple_ratio = parse(key, value)?,
            "synth.jitter" => s.jitter = parse(key, value)?,
            "synth.enhance_zero" => s.enhance_zero = parse(key, value)?,
            "synth.enhance_pole" => s.enhance_pole = parse(key, value)?,
            "synth.tilt_factor" => s.tilt_factor = parse(key, value)?,
            "synth.postfilter" => s.postfilter = parse(key, value)?,
            "synth.dispersion" => s.dispersion = parse(key, value)?,
            "train.learning_rate" => t.learning_rate = parse(key, value)?,
            "train.beta1" => t.beta1 = parse(key, value)?,
            "train.beta2" => t.beta2 = parse(key, value)?,
            "train.epsilon" => t.epsilon = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.max_epochs" => t.max_epochs = parse(key, value)?,
            "train.patience" => t.patience = parse(key, value)?,
            "train.bptt_truncation" => t.bptt_truncation = parse(key, value)?,
            "train.seed" => t.seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown setting '{key}'"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`, then validates the result.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        self.validate()
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        self.apply_text(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.analysis.validate()?;
        self.train.validate()
    }
}
