//! End-to-end codec paths with optional enhancement, training-pair extraction and
//! per-condition evaluation.

use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;

use crate::analysis::{analyze_utterance, AnalysisConfig};
use crate::audio::{AudioSignal, MixEntry, Mixture};
use crate::bitstream::{decode_frames, encode_frames, pack_stream, unpack_stream, BitFrame};
use crate::error::{Error, Result};
use crate::features::{refine, unrefine, FeatureVector, FEATURE_DIM};
use crate::frame::MelpFrame;
use crate::irm::{self, enhance_irm, ideal_ratio_mask, log_power_features, stft, StftConfig};
use crate::metrics::{param_distortion, stoi, ParamDistortion};
use crate::nn::NetworkWeights;
use crate::synthesis::{synthesize, SynthConfig};
use crate::train::{FeaturePair, SequencePair};

/// Where the parameter network sits relative to the channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Encoder,
    Decoder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Clean,
    Noisy,
    Irm,
    /// Mask computed from the true clean and noise components.
    IrmOracle,
    ParamEnc,
    ParamDec,
}

impl Variant {
    pub const ALL: [Variant; 6] =
        [Variant::Clean, Variant::Noisy, Variant::Irm, Variant::IrmOracle, Variant::ParamEnc, Variant::ParamDec];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Clean => "clean",
            Variant::Noisy => "noisy",
            Variant::Irm => "irm",
            Variant::IrmOracle => "irm-oracle",
            Variant::ParamEnc => "param-enc",
            Variant::ParamDec => "param-dec",
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

#[derive(Debug, Clone, Default)]
pub struct PipelineConfig {
    pub analysis: AnalysisConfig,
    pub synth: SynthConfig,
    /// Seed of the synthesis noise generator.
    pub synth_seed: u64,
}

pub fn check_param_model(net: &NetworkWeights) -> Result<()> {
    let spec = &net.spec;
    if spec.input_dim() != FEATURE_DIM || spec.output_dim() != FEATURE_DIM {
        return Err(Error::Model(format!(
            "{} maps {} → {}, parameter enhancement needs {FEATURE_DIM} → {FEATURE_DIM}",
            spec.name,
            spec.input_dim(),
            spec.output_dim()
        )));
    }
    Ok(())
}

/// refine → network → unrefine.
pub fn enhance_frames(net: &NetworkWeights, frames: &[MelpFrame]) -> Result<Vec<MelpFrame>> {
    check_param_model(net)?;
    let raw: Vec<Vec<f64>> = refine(frames).iter().map(|v| v.to_vec()).collect();
    let out: Vec<FeatureVector> = net
        .enhance(&raw)?
        .into_iter()
        .map(|v| v.try_into().expect("checked output dimension"))
        .collect();
    unrefine(&out, None)
}

/// Analysis with optional encoder-side enhancement, then quantization.
pub fn encode_signal(signal: &AudioSignal, cfg: &AnalysisConfig, enhancer: Option<&NetworkWeights>) -> Result<Vec<BitFrame>> {
    let mut frames = analyze_utterance(signal, cfg)?;
    if let Some(net) = enhancer {
        frames = enhance_frames(net, &frames)?;
    }
    Ok(encode_frames(&frames))
}

/// Dequantization with optional decoder-side enhancement.
pub fn decode_params(bits: &[BitFrame], enhancer: Option<&NetworkWeights>) -> Result<Vec<MelpFrame>> {
    let frames = decode_frames(bits);
    match enhancer {
        Some(net) => enhance_frames(net, &frames),
        None => Ok(frames),
    }
}

pub fn encode_to_bytes(signal: &AudioSignal, cfg: &AnalysisConfig, enhancer: Option<&NetworkWeights>) -> Result<Vec<u8>> {
    Ok(pack_stream(&encode_signal(signal, cfg, enhancer)?))
}

pub fn decode_bytes(bytes: &[u8], cfg: &SynthConfig, enhancer: Option<&NetworkWeights>, seed: u64) -> Result<AudioSignal> {
    let frames = decode_params(&unpack_stream(bytes)?, enhancer)?;
    if frames.is_empty() {
        return Err(Error::Empty("bitstream has no frames".into()));
    }
    synthesize(&frames, cfg, seed)
}

/// Analysis followed by a quantize/dequantize round trip.
fn coded_params(signal: &AudioSignal, cfg: &AnalysisConfig) -> Result<Vec<MelpFrame>> {
    Ok(decode_frames(&encode_frames(&analyze_utterance(signal, cfg)?)))
}

/// Trained networks available to the learned variants.
#[derive(Debug, Clone, Default)]
pub struct Models {
    pub param_enc: Option<NetworkWeights>,
    pub param_dec: Option<NetworkWeights>,
    pub irm: Option<NetworkWeights>,
}

impl Models {
    fn require(&self, variant: Variant) -> Result<Option<&NetworkWeights>> {
        let (slot, what) = match variant {
            Variant::ParamEnc => (&self.param_enc, "encoder-side parameter model"),
            Variant::ParamDec => (&self.param_dec, "decoder-side parameter model"),
            Variant::Irm => (&self.irm, "mask model"),
            _ => return Ok(None),
        };
        slot.as_ref().map(Some).ok_or_else(|| Error::Model(format!("variant {} needs a {what}", variant.label())))
    }

    pub fn check(&self, variant: Variant) -> Result<()> {
        match self.require(variant)? {
            Some(net) if variant == Variant::Irm => irm::check_irm_model(net),
            Some(net) => check_param_model(net),
            None => Ok(()),
        }
    }
}

/// One evaluation utterance: the clean speech and its noisy mixture.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub id: String,
    pub noise: String,
    pub snr_db: f64,
    pub clean: AudioSignal,
    pub mixture: Mixture,
}

impl EvalItem {
    pub fn load(entry: &MixEntry) -> Result<Self> {
        let (clean, mixture) = entry.load()?;
        let id = entry.speech.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(Self { id, noise: entry.noise_label(), snr_db: entry.snr_db, clean, mixture })
    }
}

pub fn load_items(entries: &[MixEntry]) -> Result<Vec<EvalItem>> {
    entries.par_iter().map(EvalItem::load).collect()
}

/// Decoder-output parameters of `variant` for one utterance.
pub fn variant_params(variant: Variant, item: &EvalItem, models: &Models, cfg: &AnalysisConfig) -> Result<Vec<MelpFrame>> {
    let net = models.require(variant)?;
    let noisy = &item.mixture.mixed;
    match variant {
        Variant::Clean => coded_params(&item.clean, cfg),
        Variant::Noisy => coded_params(noisy, cfg),
        Variant::Irm => coded_params(&enhance_irm(net.expect("required"), noisy)?, cfg),
        Variant::IrmOracle => {
            let stft_cfg = StftConfig::default();
            let mask = ideal_ratio_mask(&stft(&item.clean.samples, &stft_cfg), &stft(&item.mixture.noise, &stft_cfg))?;
            coded_params(&irm::enhance_with_mask(noisy, &mask)?, cfg)
        }
        Variant::ParamEnc => Ok(decode_frames(&encode_signal(noisy, cfg, net)?)),
        Variant::ParamDec => decode_params(&encode_signal(noisy, cfg, None)?, net),
    }
}

#[derive(Debug, Clone)]
pub struct UtteranceScore {
    pub id: String,
    pub noise: String,
    pub snr_db: f64,
    pub distortion: ParamDistortion,
    pub stoi: f64,
}

/// Parameter distortion against the coded clean parameters, and STOI between the
/// synthesized reference and the synthesized variant (same synthesis seed).
pub fn score_item(variant: Variant, item: &EvalItem, models: &Models, cfg: &PipelineConfig) -> Result<UtteranceScore> {
    let reference = coded_params(&item.clean, &cfg.analysis)?;
    let test = variant_params(variant, item, models, &cfg.analysis)?;
    let distortion = param_distortion(&reference, &test)?;
    let ref_audio = synthesize(&reference, &cfg.synth, cfg.synth_seed)?;
    let test_audio = synthesize(&test, &cfg.synth, cfg.synth_seed)?;
    let stoi = stoi(&ref_audio.samples, &test_audio.samples)?;
    Ok(UtteranceScore { id: item.id.clone(), noise: item.noise.clone(), snr_db: item.snr_db, distortion, stoi })
}

/// Mean metrics over the utterances of one (noise, SNR) condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionRow {
    pub variant: Variant,
    pub noise: String,
    pub snr_db: f64,
    pub vuv_error_pct: f64,
    pub gain_rmse_db: f64,
    /// Absent when no utterance of the condition has a commonly voiced frame.
    pub f0_rmse_hz: Option<f64>,
    pub lsd_db: f64,
    pub stoi: f64,
    pub utterances: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<ConditionRow>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl MetricReport {
    pub fn from_scores(variant: Variant, scores: &[UtteranceScore]) -> Self {
        let mut conditions: Vec<(String, f64)> = Vec::new();
        for s in scores {
            if !conditions.iter().any(|(n, snr)| *n == s.noise && *snr == s.snr_db) {
                conditions.push((s.noise.clone(), s.snr_db));
            }
        }
        let rows = conditions
            .into_iter()
            .map(|(noise, snr_db)| {
                let group: Vec<&UtteranceScore> =
                    scores.iter().filter(|s| s.noise == noise && s.snr_db == snr_db).collect();
                let avg = |f: fn(&UtteranceScore) -> f64| mean(group.iter().map(|s| f(s))).unwrap_or(0.0);
                ConditionRow {
                    variant,
                    vuv_error_pct: avg(|s| s.distortion.vuv_error_pct),
                    gain_rmse_db: avg(|s| s.distortion.gain_rmse_db),
                    f0_rmse_hz: mean(group.iter().filter_map(|s| s.distortion.f0_rmse_hz)),
                    lsd_db: avg(|s| s.distortion.lsd_db),
                    stoi: avg(|s| s.stoi).clamp(0.0, 1.0),
                    utterances: group.len(),
                    noise,
                    snr_db,
                }
            })
            .collect();
        Self { rows }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,noise,snr_db,vuv_error_pct,gain_rmse_db,f0_rmse_hz,lsd_db,stoi,utterances\n");
        for r in &self.rows {
            let f0 = r.f0_rmse_hz.map(|v| format!("{v:.4}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{:.4},{:.4},{},{:.4},{:.4},{}",
                r.variant.label(),
                r.noise,
                r.snr_db,
                r.vuv_error_pct,
                r.gain_rmse_db,
                f0,
                r.lsd_db,
                r.stoi,
                r.utterances
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<11} {:<10} {:>7} {:>8} {:>10} {:>9} {:>8} {:>7} {:>5}\n",
            "variant", "noise", "SNR dB", "VUV %", "Gain dB", "F0 Hz", "LSD dB", "STOI", "n"
        );
        for r in &self.rows {
            let f0 = r.f0_rmse_hz.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<11} {:<10} {:>7} {:>8.2} {:>10.3} {:>9} {:>8.3} {:>7.3} {:>5}",
                r.variant.label(),
                r.noise,
                r.snr_db,
                r.vuv_error_pct,
                r.gain_rmse_db,
                f0,
                r.lsd_db,
                r.stoi,
                r.utterances
            );
        }
        out
    }
}

/// Scores every item in parallel and aggregates per condition, in order of first appearance.
pub fn evaluate(variant: Variant, items: &[EvalItem], models: &Models, cfg: &PipelineConfig) -> Result<MetricReport> {
    models.check(variant)?;
    let scores: Vec<UtteranceScore> =
        items.par_iter().map(|item| score_item(variant, item, models, cfg)).collect::<Result<_>>()?;
    Ok(MetricReport::from_scores(variant, &scores))
}

/// What a feature pair trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairKind {
    Param(Placement),
    Irm,
}

fn to_rows(v: &[FeatureVector]) -> Vec<Vec<f64>> {
    v.iter().map(|f| f.to_vec()).collect()
}

/// Encoder side maps noisy analysis to clean analysis. Decoder side maps dequantized noisy
/// parameters to dequantized clean parameters.
pub fn param_pair(clean: &AudioSignal, noisy: &AudioSignal, placement: Placement, cfg: &AnalysisConfig) -> Result<SequencePair> {
    let (input, target) = match placement {
        Placement::Encoder => (analyze_utterance(noisy, cfg)?, analyze_utterance(clean, cfg)?),
        Placement::Decoder => (coded_params(noisy, cfg)?, coded_params(clean, cfg)?),
    };
    if input.len() != target.len() {
        return Err(Error::Length(input.len(), target.len()));
    }
    Ok(SequencePair { input: to_rows(&refine(&input)), target: to_rows(&refine(&target)) })
}

/// Noisy log-power spectra paired with the oracle mask.
pub fn irm_pair(clean: &AudioSignal, mixture: &Mixture) -> Result<SequencePair> {
    let cfg = StftConfig::default();
    let noisy = stft(&mixture.mixed.samples, &cfg);
    let mask = ideal_ratio_mask(&stft(&clean.samples, &cfg), &stft(&mixture.noise, &cfg))?;
    Ok(SequencePair { input: log_power_features(&noisy), target: mask })
}

pub fn pair_id(item: &EvalItem) -> String {
    format!("{}_{}_{}", item.id, item.noise, item.snr_db)
}

pub fn extract_pair(kind: PairKind, item: &EvalItem, cfg: &AnalysisConfig) -> Result<FeaturePair> {
    let pair = match kind {
        PairKind::Param(p) => param_pair(&item.clean, &item.mixture.mixed, p, cfg)?,
        PairKind::Irm => irm_pair(&item.clean, &item.mixture)?,
    };
    Ok(FeaturePair { id: pair_id(item), pair })
}

pub fn extract_pairs(kind: PairKind, items: &[EvalItem], cfg: &AnalysisConfig) -> Result<Vec<FeaturePair>> {
    items.par_iter().map(|item| extract_pair(kind, item, cfg)).collect()
}
