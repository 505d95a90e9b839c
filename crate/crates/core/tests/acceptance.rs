//! Acceptance criteria. Each test writes one `PASS`/`FAIL` line to stderr (bypassing
//! libtest capture) and then asserts.

use std::io::Write;
use std::sync::OnceLock;

use melp_core::analysis::{analyze_utterance, AnalysisConfig};
use melp_core::audio::{mix_components, AudioSignal};
use melp_core::bitstream::{
    bitrate_bps, decode_frames, encode_frames, pack_stream, unpack_stream, BitFrame, FrameCodes, FRAME_BITS, TABLES,
};
use melp_core::corpus::{noise_signal, speech_utterance, synthetic_utterance, utterance_seed, NoiseKind, SpeechConfig};
use melp_core::features::{refine, unrefine, NormStats};
use melp_core::frame::{MelpFrame, FRAME_LEN, FRAME_RATE};
use melp_core::irm::{enhance_with_mask, StftConfig};
use melp_core::metrics::{count_flops, stoi, PipelineKind, FFT_256_FLOPS};
use melp_core::nn::{count_params, Activation, LayerSpec, ModelSpec, NetworkWeights};
use melp_core::pipeline::{extract_pairs, score_item, EvalItem, Models, PairKind, PipelineConfig, Placement, Variant};
use melp_core::synthesis::{synthesize, SynthConfig};
use melp_core::train::{backward_sequence, mse_loss, train, SequencePair, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

fn report(id: u8, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr().lock(), "criterion {id} {name}: {verdict} {detail}");
    assert!(pass, "criterion {id} {name} failed: {detail}");
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn c1_parameter_counts_and_footprints() {
    let kb = |p: usize| p as f64 * 4.0 / 1024.0;
    let mb = |p: usize| p as f64 * 4.0 / (1024.0 * 1024.0);
    let counts: Vec<usize> =
        ["param_small", "param_large", "irm_small"].iter().map(|n| count_params(&ModelSpec::preset(n).unwrap())).collect();
    let footprints = [
        format!("{:.2}", kb(counts[0])) == "182.11",
        format!("{:.2}", mb(counts[1])) == "15.30",
        format!("{:.2}", mb(counts[0])) == "0.18",
        format!("{:.2}", mb(counts[2])) == "0.21",
    ];
    let pass = counts == [46_621, 4_011_549, 53_953] && footprints.iter().all(|&b| b);
    let detail = format!(
        "params {counts:?}; {:.2} KB, {:.2} MB, {:.2} MB, {:.2} MB",
        kb(counts[0]),
        mb(counts[1]),
        mb(counts[0]),
        mb(counts[2])
    );
    report(1, "parameter counts", pass, &detail);
}

#[test]
fn c2_flops_within_five_percent() {
    // Independent count: GRU holds three (in + units) x units gate matrices.
    let weights = |spec: &ModelSpec| -> f64 {
        spec.layers
            .iter()
            .map(|l| {
                let m = l.input_dim * l.output_dim;
                if l.activation == Activation::Tanh { 3 * (m + l.output_dim * l.output_dim) } else { m }
            })
            .sum::<usize>() as f64
    };
    let small = ModelSpec::preset("param_small").unwrap();
    let irm = ModelSpec::preset("irm_small").unwrap();
    let p = count_flops(&small, PipelineKind::Parameter);
    let q = count_flops(&irm, PipelineKind::Irm);
    let oracle_p = 2.0 * weights(&small) * FRAME_RATE / 1e6;
    let oracle_q = (2.0 * weights(&irm) + 2.0 * 3078.0) * FRAME_RATE / 1e6;
    let pass = FFT_256_FLOPS == 3078.0
        && (p.total_mflops - oracle_p).abs() < 1e-9
        && (q.total_mflops - oracle_q).abs() < 1e-9
        && rel(p.total_mflops, 4.11) < 0.05
        && rel(q.total_mflops, 5.06) < 0.05;
    let detail = format!(
        "param_small {:.3} MFLOPs ({:+.1}%), irm_small {:.3} MFLOPs ({:+.1}%)",
        p.total_mflops,
        100.0 * (p.total_mflops / 4.11 - 1.0),
        q.total_mflops,
        100.0 * (q.total_mflops / 5.06 - 1.0)
    );
    report(2, "FLOPs", pass, &detail);
}

fn gradient_error(seed: u64) -> f64 {
    let spec = ModelSpec::new(
        "tiny",
        vec![
            LayerSpec::gru(3, 4),
            LayerSpec::gru(4, 3),
            LayerSpec::feed_forward(3, 5, Activation::Relu),
            LayerSpec::linear_out(5, 2, Activation::Sigmoid),
        ],
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = NetworkWeights::zeros(spec);
    for l in &mut net.layers {
        for v in l.w.iter_mut().chain(l.b.iter_mut()) {
            *v = rng.random_range(-0.8..0.8);
        }
    }
    let mut seq = |d: usize| -> Vec<Vec<f64>> { (0..6).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect() };
    let pair = SequencePair { input: seq(3), target: seq(2) };
    let (_, grads) = backward_sequence(&net, &pair).unwrap();
    let loss = |n: &NetworkWeights| mse_loss(&n.forward_sequence(&pair.input).unwrap(), &pair.target).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for l in 0..net.layers.len() {
        let sizes = [net.layers[l].w.len(), net.layers[l].b.len()];
        for (which, &len) in sizes.iter().enumerate() {
            for i in 0..len {
                let nudge = |d: f64| {
                    let mut n = net.clone();
                    let p = if which == 0 { &mut n.layers[l].w[i] } else { &mut n.layers[l].b[i] };
                    *p += d;
                    loss(&n)
                };
                let numeric = (nudge(h) - nudge(-h)) / (2.0 * h);
                let analytic = if which == 0 { grads.layers[l].w[i] } else { grads.layers[l].b[i] };
                let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-3);
                worst = worst.max(err);
            }
        }
    }
    worst
}

#[test]
fn c3_bptt_matches_finite_differences() {
    let worst = (0..10).map(gradient_error).fold(0.0, f64::max);
    report(3, "gradient check", worst < 1e-4, &format!("max relative error {worst:.2e} over 10 seeds"));
}

#[test]
fn c4_codec_round_trip() {
    let cfg = AnalysisConfig::default();
    let (mut voiced, mut agree, mut se, mut n) = (0usize, 0usize, 0.0, 0usize);
    for i in 0..20 {
        let utt = synthetic_utterance(utterance_seed(77, i), &SpeechConfig::default());
        let truth = utt.frame_f0();
        let coded = decode_frames(&encode_frames(&analyze_utterance(&utt.signal, &cfg).unwrap()));
        let audio = synthesize(&coded, &SynthConfig::default(), 0).unwrap();
        let again = analyze_utterance(&audio, &cfg).unwrap();
        for (t, (a, b)) in coded.iter().zip(&again).enumerate() {
            if truth[t].is_none() {
                continue;
            }
            voiced += 1;
            agree += usize::from(a.bpvc[0] == b.bpvc[0]);
            if a.voiced() && b.voiced() {
                se += (8000.0 / a.pitch - 8000.0 / b.pitch).powi(2);
                n += 1;
            }
        }
    }
    let agreement = 100.0 * agree as f64 / voiced as f64;
    let f0 = (se / n as f64).sqrt();
    let detail = format!("F0-RMSE {f0:.3} Hz over {n} frames, band-1 agreement {agreement:.2}% over {voiced} voiced frames");
    report(4, "codec round trip", f0 < 3.0 && agreement > 95.0, &detail);
}

fn random_codes(rng: &mut ChaCha8Rng) -> FrameCodes {
    let t = &TABLES;
    let mut draw = |bits: u32| rng.random_range(0..1u16 << bits) as u8;
    let mut c = FrameCodes::default();
    for (code, bits) in c.lsf.iter_mut().zip(t.lsf_bits) {
        *code = draw(bits);
    }
    c.gain_abs = draw(t.gain_abs_bits);
    c.gain_delta = draw(t.gain_delta_bits);
    c.pitch = draw(t.pitch_bits);
    c.bpvc = draw(t.bpvc_bits);
    for code in c.fourier.iter_mut() {
        *code = draw(t.fourier_bits);
    }
    c.aperiodic = draw(1) == 1;
    c.sync = draw(1) == 1;
    c
}

#[test]
fn c5_bitstream_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0usize;
    let total = 1_000_000;
    for _ in 0..total / 1000 {
        let codes: Vec<FrameCodes> = (0..1000).map(|_| random_codes(&mut rng)).collect();
        let frames: Vec<BitFrame> = codes.iter().map(BitFrame::from_codes).collect();
        let bytes = pack_stream(&frames);
        let back = unpack_stream(&bytes).unwrap();
        mismatches += back.iter().zip(&codes).filter(|(f, c)| f.codes() != **c).count();
        mismatches += back.iter().zip(&frames).filter(|(a, b)| a.bits() != b.bits() || a.as_bytes() != b.as_bytes()).count();
        mismatches += usize::from(pack_stream(&back) != bytes);
    }
    let layout_bits = TABLES.total_bits() as usize;
    let frame_ms = 1000.0 * FRAME_LEN as f64 / 8000.0;
    let pass = mismatches == 0 && layout_bits == 54 && FRAME_BITS == 54 && frame_ms == 22.5 && bitrate_bps() == 2400.0;
    let detail =
        format!("{total} frames, {mismatches} mismatches; {layout_bits} bits / {frame_ms} ms = {} bps", bitrate_bps());
    report(5, "bitstream exactness", pass, &detail);
}

#[test]
fn c6_refinement_and_normalization_identity() {
    let cfg = AnalysisConfig::default();
    let frames: Vec<MelpFrame> = (0..10)
        .flat_map(|i| analyze_utterance(&speech_utterance(utterance_seed(66, i), &SpeechConfig::default()), &cfg).unwrap())
        .collect();
    let features = refine(&frames);
    let back = unrefine(&features, None).unwrap();
    let mut worst: f64 = 0.0;
    let mut flags_differ = 0usize;
    let mut voiced = 0usize;
    for (a, b) in frames.iter().zip(&back).filter(|(a, _)| a.voiced()) {
        voiced += 1;
        flags_differ += usize::from(a.bpvc != b.bpvc || a.aperiodic != b.aperiodic);
        let pairs = a.lsf.iter().zip(&b.lsf).chain(a.gain_db.iter().zip(&b.gain_db)).chain([(&a.pitch, &b.pitch)]);
        for (x, y) in pairs {
            worst = worst.max((x - y).abs());
        }
        for (x, y) in a.fourier_mag.iter().zip(&b.fourier_mag) {
            worst = worst.max((x - y).abs() / x.abs());
        }
    }
    let stats = NormStats::fit(&features).unwrap();
    let norm_worst = features
        .iter()
        .map(|f| stats.invert(&stats.apply(f)).iter().zip(f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    let pass = voiced > 500 && flags_differ == 0 && worst < 1e-9 && norm_worst < 1e-9;
    let detail = format!(
        "{voiced} voiced frames: max error {worst:.1e}, {flags_differ} flag mismatches; normalization max error {norm_worst:.1e}"
    );
    report(6, "refinement identity", pass, &detail);
}

const DESK_SNRS: [f64; 6] = [-5.0, 0.0, 5.0, 10.0, 15.0, 20.0];
const TRAIN_UTTERANCES: usize = 200;
const MIXES_PER_UTTERANCE: usize = 4;
const TEST_UTTERANCES: usize = 20;

struct DeskNoise {
    train: Vec<AudioSignal>,
    test: Vec<AudioSignal>,
}

fn desk_noise() -> &'static DeskNoise {
    static NOISE: OnceLock<DeskNoise> = OnceLock::new();
    NOISE.get_or_init(|| {
        let make = |base: u64| NoiseKind::ALL.iter().enumerate().map(|(k, &kind)| noise_signal(kind, 8000 * 60, base + k as u64)).collect();
        DeskNoise { train: make(500), test: make(600) }
    })
}

fn desk_item(set: u64, utt: usize, snr_db: f64, kind: usize, noises: &[AudioSignal]) -> EvalItem {
    let clean = speech_utterance(utterance_seed(set, utt), &SpeechConfig::default());
    let mixture = mix_components(&clean, &noises[kind], snr_db, set * 7919 + utt as u64).unwrap();
    EvalItem { id: format!("s{set}u{utt}"), noise: NoiseKind::ALL[kind].label().into(), snr_db, clean, mixture }
}

/// Test utterances of both noise kinds at one SNR.
fn test_items(snr_db: f64) -> Vec<EvalItem> {
    let noise = &desk_noise().test;
    (0..NoiseKind::ALL.len()).flat_map(|k| (0..TEST_UTTERANCES).map(move |u| desk_item(3, u, snr_db, k, noise))).collect()
}

struct Desk {
    models: Models,
}

fn train_model(placement: Placement) -> NetworkWeights {
    let noise = &desk_noise().train;
    let train_items: Vec<EvalItem> = (0..TRAIN_UTTERANCES * MIXES_PER_UTTERANCE)
        .map(|i| desk_item(1, i / MIXES_PER_UTTERANCE, DESK_SNRS[(i * 7 / 2) % 6], i % 2, noise))
        .collect();
    let valid_items: Vec<EvalItem> = (0..40).map(|i| desk_item(2, i, DESK_SNRS[i % 6], i % 2, noise)).collect();
    let cfg = AnalysisConfig::default();
    let pairs = |items: &[EvalItem]| -> Vec<SequencePair> {
        extract_pairs(PairKind::Param(placement), items, &cfg).unwrap().into_iter().map(|f| f.pair).collect()
    };
    let tcfg = TrainConfig { max_epochs: 60, patience: 5, ..TrainConfig::default() };
    let out = train(&ModelSpec::preset("param_small").unwrap(), &pairs(&train_items), &pairs(&valid_items), &tcfg).unwrap();
    let last = out.log.last().unwrap();
    let _ = writeln!(
        std::io::stderr().lock(),
        "  {placement:?}-side model: best epoch {} of {}, valid mse {:.4}",
        out.best_epoch,
        last.epoch,
        out.log[out.best_epoch - 1].valid_mse
    );
    out.weights
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| Desk {
        models: Models {
            param_enc: Some(train_model(Placement::Encoder)),
            param_dec: Some(train_model(Placement::Decoder)),
            irm: None,
        },
    })
}

struct Means {
    vuv: f64,
    gain: f64,
    f0: f64,
    lsd: f64,
}

fn means(variant: Variant, items: &[EvalItem], models: &Models) -> Means {
    let cfg = PipelineConfig::default();
    let scores: Vec<_> = items.par_iter().map(|it| score_item(variant, it, models, &cfg).unwrap()).collect();
    let n = scores.len() as f64;
    let f0: Vec<f64> = scores.iter().filter_map(|s| s.distortion.f0_rmse_hz).collect();
    Means {
        vuv: scores.iter().map(|s| s.distortion.vuv_error_pct).sum::<f64>() / n,
        gain: scores.iter().map(|s| s.distortion.gain_rmse_db).sum::<f64>() / n,
        f0: f0.iter().sum::<f64>() / f0.len() as f64,
        lsd: scores.iter().map(|s| s.distortion.lsd_db).sum::<f64>() / n,
    }
}

#[test]
fn c7_encoder_side_enhancement_improves_all_metrics() {
    let desk = desk();
    let items = test_items(5.0);
    let mut pass = true;
    let mut detail = Vec::new();
    for kind in NoiseKind::ALL {
        let group: Vec<EvalItem> = items.iter().filter(|it| it.noise == kind.label()).cloned().collect();
        let noisy = means(Variant::Noisy, &group, &desk.models);
        let enh = means(Variant::ParamEnc, &group, &desk.models);
        let lsd_gain = 1.0 - enh.lsd / noisy.lsd;
        pass &= enh.vuv < noisy.vuv && enh.gain < noisy.gain && enh.f0 < noisy.f0 && lsd_gain >= 0.20;
        detail.push(format!(
            "{}: VUV {:.2}->{:.2}%, gain {:.2}->{:.2} dB, F0 {:.2}->{:.2} Hz, LSD {:.2}->{:.2} dB ({:.0}%)",
            kind.label(),
            noisy.vuv,
            enh.vuv,
            noisy.gain,
            enh.gain,
            noisy.f0,
            enh.f0,
            noisy.lsd,
            enh.lsd,
            100.0 * lsd_gain
        ));
    }
    report(7, "enhancement efficacy at 5 dB", pass, &detail.join("; "));
}

#[test]
fn c8_encoder_and_decoder_placement_agree() {
    let desk = desk();
    let items = test_items(5.0);
    let enc = means(Variant::ParamEnc, &items, &desk.models).lsd;
    let dec = means(Variant::ParamDec, &items, &desk.models).lsd;
    let gap = rel(dec, enc);
    report(8, "placement parity", gap < 0.10, &format!("LSD enc {enc:.3} dB, dec {dec:.3} dB, relative gap {:.1}%", 100.0 * gap));
}

#[test]
fn c9_oracle_irm_sanity() {
    let models = Models { param_enc: None, param_dec: None, irm: None };
    let cfg = PipelineConfig::default();
    let items: Vec<EvalItem> = [0.0, 5.0, 10.0].iter().flat_map(|&snr| test_items(snr)).collect();
    let worse: Vec<String> = items
        .par_iter()
        .filter_map(|it| {
            let noisy = score_item(Variant::Noisy, it, &models, &cfg).unwrap().distortion.lsd_db;
            let oracle = score_item(Variant::IrmOracle, it, &models, &cfg).unwrap().distortion.lsd_db;
            (oracle >= noisy).then(|| format!("{}/{}/{}dB", it.id, it.noise, it.snr_db))
        })
        .collect();

    let clean = test_items(5.0).swap_remove(0).clean;
    let ones = vec![vec![1.0; StftConfig::default().bins()]; StftConfig::default().frame_count(clean.len())];
    let rebuilt = enhance_with_mask(&clean, &ones).unwrap();
    let err: f64 = rebuilt.samples.iter().zip(&clean.samples).map(|(a, b)| (a - b).powi(2)).sum();
    let unit_db = 10.0 * (err / clean.samples.iter().map(|v| v * v).sum::<f64>()).log10();

    let self_stoi = stoi(&clean.samples, &clean.samples).unwrap();

    let noise = &desk_noise().test;
    let mut monotone = true;
    let mut curves = Vec::new();
    for (k, kind) in NoiseKind::ALL.iter().enumerate() {
        let curve: Vec<f64> = [20.0, 15.0, 10.0, 5.0, 0.0]
            .iter()
            .map(|&snr| {
                let s: f64 = (0..TEST_UTTERANCES)
                    .into_par_iter()
                    .map(|u| {
                        let it = desk_item(3, u, snr, k, noise);
                        stoi(&it.clean.samples, &it.mixture.mixed.samples).unwrap()
                    })
                    .sum();
                s / TEST_UTTERANCES as f64
            })
            .collect();
        monotone &= curve.windows(2).all(|w| w[1] <= w[0]);
        let shown: Vec<String> = curve.iter().map(|v| format!("{v:.3}")).collect();
        curves.push(format!("{} {}", kind.label(), shown.join(">")));
    }

    let pass = worse.is_empty() && unit_db < -60.0 && self_stoi >= 0.999 && monotone;
    let detail = format!(
        "oracle LSD worse on {}/{} utterances {worse:?}; unit mask {unit_db:.1} dB; STOI self {self_stoi:.4}; STOI 20..0 dB {}",
        worse.len(),
        items.len(),
        curves.join(", ")
    );
    report(9, "IRM sanity", pass, &detail);
}
