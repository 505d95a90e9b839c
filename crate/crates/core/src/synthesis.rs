//! MELP decoder: mixed pulse/noise excitation, LPC synthesis and post filtering.
//!
//! Synthesis is pitch-synchronous. Each pitch period is generated with parameters
//! interpolated at its start, so a period may run past the end of its frame; the remainder
//! is queued and emitted with the next frame. The causal mixing filters delay the output by
//! [`SYNTH_DELAY`] samples, which [`synthesize`] removes.

use std::collections::VecDeque;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::{AudioSignal, SAMPLE_RATE};
use crate::dsp::{self, FirState};
use crate::error::Result;
use crate::frame::*;
use crate::lpc::{self, SynthesisFilter};

pub const MIX_TAPS: usize = 65;
/// Group delay of the causal mixing filters.
pub const SYNTH_DELAY: usize = MIX_TAPS / 2;
pub const DISPERSION_TAPS: usize = 65;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub band_edges_hz: [f64; NUM_BANDS + 1],
    /// Maximum relative pitch-period jitter for aperiodic frames.
    pub jitter: f64,
    /// Numerator and denominator bandwidth factors of the spectral enhancement filter.
    pub enhance_zero: f64,
    pub enhance_pole: f64,
    /// Scale applied to the first-order predictor of the enhancement filter for tilt
    /// compensation.
    pub tilt_factor: f64,
    pub postfilter: bool,
    pub dispersion: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            band_edges_hz: [0.0, 500.0, 1000.0, 2000.0, 3000.0, 4000.0],
            jitter: 0.25,
            enhance_zero: 0.5,
            enhance_pole: 0.8,
            tilt_factor: 0.5,
            postfilter: true,
            dispersion: true,
        }
    }
}

impl SynthConfig {
    /// Both post filters switched off.
    pub fn bypass() -> Self {
        Self { postfilter: false, dispersion: false, ..Self::default() }
    }
}

/// One zero-phase pulse period of length `len` whose harmonics carry `mags` (harmonics above
/// the tenth get unit weight), normalised to unit RMS. The peak is at index 0.
fn pulse_period(len: usize, mags: &[f64; NUM_HARMONICS]) -> Vec<f64> {
    let n = len as f64;
    let mut out = vec![0.0; len];
    for k in 1..=len / 2 {
        let mut m = if k <= NUM_HARMONICS { mags[k - 1] } else { 1.0 };
        if 2 * k == len {
            m *= 0.5;
        }
        let step = 2.0 * std::f64::consts::PI * k as f64 / n;
        for (i, v) in out.iter_mut().enumerate() {
            *v += m * (step * i as f64).cos();
        }
    }
    let r = dsp::rms(&out);
    if r > 0.0 {
        out.iter_mut().for_each(|v| *v /= r);
    }
    out
}

/// Period length in samples; with `aperiodic` set, uniformly jittered within ±`jitter`.
fn period_length<R: Rng>(pitch: f64, aperiodic: bool, jitter: f64, rng: &mut R) -> usize {
    if !aperiodic || jitter <= 0.0 {
        return pitch.round().max(1.0) as usize;
    }
    let lo = ((1.0 - jitter) * pitch).ceil().max(1.0);
    let hi = ((1.0 + jitter) * pitch).floor().max(lo);
    let u: f64 = rng.random_range(-jitter..=jitter);
    (pitch * (1.0 + u)).round().clamp(lo, hi) as usize
}

fn pulse_train<R: Rng>(
    pitch: f64,
    mags: &[f64; NUM_HARMONICS],
    aperiodic: bool,
    jitter: f64,
    len: usize,
    rng: &mut R,
) -> (Vec<f64>, Vec<usize>) {
    let mut out = Vec::with_capacity(len + PITCH_MAX as usize * 2);
    let mut onsets = Vec::new();
    while out.len() < len {
        onsets.push(out.len());
        let period = period_length(pitch, aperiodic, jitter, rng);
        out.extend(pulse_period(period, mags));
    }
    out.truncate(len);
    (out, onsets)
}

/// Pulse excitation of `len` samples: consecutive periods built from the Fourier magnitudes,
/// each period jittered when `aperiodic` is set.
pub fn build_pulse_excitation<R: Rng>(
    pitch: f64,
    fourier_mag: &[f64; NUM_HARMONICS],
    aperiodic: bool,
    len: usize,
    rng: &mut R,
) -> Vec<f64> {
    pulse_train(pitch, fourier_mag, aperiodic, SynthConfig::default().jitter, len, rng).0
}

fn uniform_noise<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    let a = 3f64.sqrt();
    (0..len).map(|_| rng.random_range(-a..a)).collect()
}

/// Band-selective mix: band `b` takes the pulse when `bpvc[b]` is set and the noise otherwise.
/// Uses zero-phase filtering so the output is aligned with the inputs.
pub fn mix_excitation(pulse: &[f64], noise: &[f64], bpvc: &[bool; NUM_BANDS], band_edges_hz: &[f64]) -> Vec<f64> {
    assert_eq!(pulse.len(), noise.len(), "excitation lengths differ");
    let (hp, hn) = mixing_filters(&dsp::bandpass_bank(band_edges_hz, MIX_TAPS, SAMPLE_RATE as f64), bpvc);
    let p = dsp::filter_centered(pulse, &hp);
    let n = dsp::filter_centered(noise, &hn);
    p.iter().zip(&n).map(|(a, b)| a + b).collect()
}

/// Summed voiced-band and unvoiced-band filters.
fn mixing_filters(bank: &[Vec<f64>], bpvc: &[bool; NUM_BANDS]) -> (Vec<f64>, Vec<f64>) {
    let mut hp = vec![0.0; MIX_TAPS];
    let mut hn = vec![0.0; MIX_TAPS];
    for (h, &v) in bank.iter().zip(bpvc) {
        let dst = if v { &mut hp } else { &mut hn };
        dst.iter_mut().zip(h).for_each(|(d, s)| *d += s);
    }
    (hp, hn)
}

/// Taps of the pulse dispersion filter: an asymmetric triangle pulse whose magnitude
/// spectrum has been flattened, scaled to unit energy.
pub fn dispersion_taps() -> &'static [f64] {
    static TAPS: OnceLock<Vec<f64>> = OnceLock::new();
    TAPS.get_or_init(|| {
        let n = DISPERSION_TAPS;
        let rise = 8;
        let mut buf: Vec<Complex<f64>> = (0..n)
            .map(|i| {
                let v = if i <= rise { i as f64 / rise as f64 } else { (n - i) as f64 / (n - rise) as f64 };
                Complex::new(v, 0.0)
            })
            .collect();
        let mut planner = FftPlanner::new();
        planner.plan_fft_forward(n).process(&mut buf);
        for c in buf.iter_mut() {
            let m = c.norm();
            *c = if m > 1e-12 { *c / m } else { Complex::new(1.0, 0.0) };
        }
        planner.plan_fft_inverse(n).process(&mut buf);
        let mut h: Vec<f64> = buf.iter().map(|c| c.re / n as f64).collect();
        let e = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        h.iter_mut().for_each(|v| *v /= e);
        h
    })
}

/// `A(z/γ)` coefficients.
fn expand(a: &[f64], gamma: f64) -> Vec<f64> {
    let mut g = 1.0;
    a.iter()
        .map(|c| {
            g *= gamma;
            c * g
        })
        .collect()
}

#[derive(Debug, Clone)]
struct PoleZero {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl PoleZero {
    fn new(order: usize) -> Self {
        Self { x: vec![0.0; order], y: vec![0.0; order] }
    }

    fn step(&mut self, num: &[f64], den: &[f64], v: f64) -> f64 {
        let mut out = v;
        for (c, m) in num.iter().zip(&self.x) {
            out += c * m;
        }
        for (c, m) in den.iter().zip(&self.y) {
            out -= c * m;
        }
        self.x.rotate_right(1);
        self.x[0] = v;
        self.y.rotate_right(1);
        self.y[0] = out;
        out
    }
}

/// Tilt coefficient from the normalised lag-1 autocorrelation of the enhancement filter's
/// impulse response.
fn tilt_coefficient(num: &[f64], den: &[f64], factor: f64) -> f64 {
    let mut f = PoleZero::new(num.len());
    let h: Vec<f64> = (0..32).map(|i| f.step(num, den, if i == 0 { 1.0 } else { 0.0 })).collect();
    let r0: f64 = h.iter().map(|v| v * v).sum();
    let r1: f64 = h.windows(2).map(|w| w[0] * w[1]).sum();
    (factor * r1 / r0).max(0.0)
}

/// Spectral enhancement, tilt compensation, gain control and pulse dispersion, with memory
/// carried between blocks.
#[derive(Debug, Clone)]
pub struct PostFilter {
    enhance: PoleZero,
    tilt_mem: f64,
    agc: f64,
    dispersion: FirState,
}

impl Default for PostFilter {
    fn default() -> Self {
        Self { enhance: PoleZero::new(LPC_ORDER), tilt_mem: 0.0, agc: 1.0, dispersion: FirState::new(DISPERSION_TAPS) }
    }
}

impl PostFilter {
    /// Filters one block with predictor `a`. The gain control restores the block's input
    /// energy after enhancement and dispersion, ramping from the previous block's correction.
    pub fn process(&mut self, x: &[f64], a: &[f64], cfg: &SynthConfig) -> Vec<f64> {
        let mut y = x.to_vec();
        if cfg.postfilter {
            let num = expand(a, cfg.enhance_zero);
            let den = expand(a, cfg.enhance_pole);
            let mu = tilt_coefficient(&num, &den, cfg.tilt_factor);
            for v in y.iter_mut() {
                let e = self.enhance.step(&num, &den, *v);
                *v = e - mu * self.tilt_mem;
                self.tilt_mem = e;
            }
        }
        if cfg.dispersion {
            let h = dispersion_taps();
            y.iter_mut().for_each(|v| *v = self.dispersion.step(h, *v));
        }
        if cfg.postfilter {
            let e_in: f64 = x.iter().map(|v| v * v).sum();
            let e_out: f64 = y.iter().map(|v| v * v).sum();
            let target = if e_out > 1e-30 { (e_in / e_out).sqrt() } else { 1.0 };
            let n = y.len() as f64;
            for (i, v) in y.iter_mut().enumerate() {
                *v *= self.agc + (target - self.agc) * (i + 1) as f64 / n;
            }
            self.agc = target;
        }
        y
    }
}

/// Post-filters a signal block-wise: block `i` covers `FRAME_LEN` samples and uses `lpcs[i]`.
pub fn apply_post_filters(x: &[f64], lpcs: &[Vec<f64>], cfg: &SynthConfig) -> Vec<f64> {
    let mut pf = PostFilter::default();
    let flat = vec![0.0; LPC_ORDER];
    x.chunks(FRAME_LEN)
        .enumerate()
        .flat_map(|(i, block)| pf.process(block, lpcs.get(i).unwrap_or(&flat), cfg))
        .collect()
}

/// dB gain at offset `t` from the frame start, linear between the subframe centres.
fn interpolated_gain(prev: &MelpFrame, cur: &MelpFrame, t: f64) -> f64 {
    let half = SUBFRAME_LEN as f64 / 2.0;
    let anchors = [(-half, prev.gain_db[1]), (half, cur.gain_db[0]), (3.0 * half, cur.gain_db[1])];
    if t <= anchors[0].0 {
        return anchors[0].1;
    }
    for w in anchors.windows(2) {
        if t <= w[1].0 {
            return w[0].1 + (t - w[0].0) / (w[1].0 - w[0].0) * (w[1].1 - w[0].1);
        }
    }
    anchors[2].1
}

/// Streaming MELP synthesizer. Output lags the parameters by [`SYNTH_DELAY`] samples.
#[derive(Debug, Clone)]
pub struct Synthesizer {
    cfg: SynthConfig,
    bank: Vec<Vec<f64>>,
    seed: u64,
    rng: ChaCha8Rng,
    prev: Option<MelpFrame>,
    pending: VecDeque<f64>,
    pulse_fir: FirState,
    noise_fir: FirState,
    lpc_filter: SynthesisFilter,
    scale: Option<f64>,
    post: PostFilter,
}

impl Synthesizer {
    pub fn new(cfg: SynthConfig, seed: u64) -> Self {
        let bank = dsp::bandpass_bank(&cfg.band_edges_hz, MIX_TAPS, SAMPLE_RATE as f64);
        Self {
            cfg,
            bank,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            prev: None,
            pending: VecDeque::new(),
            pulse_fir: FirState::new(MIX_TAPS),
            noise_fir: FirState::new(MIX_TAPS),
            lpc_filter: SynthesisFilter::new(LPC_ORDER),
            scale: None,
            post: PostFilter::default(),
        }
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.cfg.clone(), self.seed);
    }

    /// Synthesizes the next 180 samples.
    pub fn process_frame(&mut self, frame: &MelpFrame) -> Result<Vec<f64>> {
        frame.validate()?;
        let prev = match self.prev.take() {
            Some(p) => p,
            None => {
                // Warm the filters up on the first frame so that the first periods are
                // scaled against settled filter output; the warm-up output is discarded.
                let mut primed = 0;
                while primed < SYNTH_DELAY {
                    primed += self.period(frame, frame, 0.0).len();
                }
                frame.clone()
            }
        };
        while self.pending.len() < FRAME_LEN {
            let t0 = self.pending.len() as f64;
            let period = self.period(&prev, frame, t0);
            self.pending.extend(period);
        }
        self.prev = Some(frame.clone());
        Ok(self.pending.drain(..FRAME_LEN).collect())
    }

    fn period(&mut self, prev: &MelpFrame, cur: &MelpFrame, t0: f64) -> Vec<f64> {
        let w = ((t0 + SUBFRAME_LEN as f64) / FRAME_LEN as f64).clamp(0.0, 1.0);
        let lerp = |a: f64, b: f64| a + w * (b - a);
        let both = prev.voiced() && cur.voiced();

        let len = if cur.voiced() {
            let pitch = if both { lerp(prev.pitch, cur.pitch) } else { cur.pitch };
            period_length(pitch, cur.aperiodic, self.cfg.jitter, &mut self.rng)
        } else {
            UNVOICED_PITCH as usize
        };

        let lsf: Vec<f64> = prev.lsf.iter().zip(&cur.lsf).map(|(a, b)| lerp(*a, *b)).collect();
        let a = lpc::lsf_to_lpc(&lsf);

        let (mut hp, mut hn) = mixing_filters(&self.bank, &cur.bpvc);
        let pulse = if cur.voiced() {
            let mut mags = cur.fourier_mag;
            if both {
                let (pp, pn) = mixing_filters(&self.bank, &prev.bpvc);
                hp.iter_mut().zip(&pp).for_each(|(c, p)| *c = lerp(*p, *c));
                hn.iter_mut().zip(&pn).for_each(|(c, p)| *c = lerp(*p, *c));
                mags.iter_mut().zip(&prev.fourier_mag).for_each(|(c, p)| *c = lerp(*p, *c));
            }
            pulse_period(len, &mags)
        } else {
            vec![0.0; len]
        };
        let noise = uniform_noise(len, &mut self.rng);
        let excitation: Vec<f64> =
            pulse.iter().zip(&noise).map(|(p, n)| self.pulse_fir.step(&hp, *p) + self.noise_fir.step(&hn, *n)).collect();

        // The synthesis filter runs on the unscaled excitation; its output is scaled to the
        // interpolated gain, ramping from the previous period's scale.
        let raw: Vec<f64> = excitation.iter().map(|v| self.lpc_filter.step(&a, *v)).collect();
        let level = dsp::rms(&raw);
        let gain_db = interpolated_gain(prev, cur, t0 + len as f64 / 2.0);
        let scale = if level > 1e-20 { 10f64.powf(gain_db / 20.0) / level } else { 0.0 };
        let from = self.scale.unwrap_or(scale);
        let n = len as f64;
        let out: Vec<f64> =
            raw.iter().enumerate().map(|(i, v)| v * (from + (scale - from) * (i + 1) as f64 / n)).collect();
        self.scale = Some(scale);
        self.post.process(&out, &a, &self.cfg)
    }
}

/// Synthesizes `180 * frames.len()` samples, aligned with the frame grid.
pub fn synthesize(frames: &[MelpFrame], cfg: &SynthConfig, seed: u64) -> Result<AudioSignal> {
    let Some(last) = frames.last() else {
        return Ok(AudioSignal::new(Vec::new(), SAMPLE_RATE));
    };
    let mut synth = Synthesizer::new(cfg.clone(), seed);
    let mut out = Vec::with_capacity((frames.len() + 1) * FRAME_LEN);
    for f in frames.iter().chain(std::iter::once(last)) {
        out.extend(synth.process_frame(f)?);
    }
    out.drain(..SYNTH_DELAY);
    out.truncate(frames.len() * FRAME_LEN);
    Ok(AudioSignal::new(out, SAMPLE_RATE))
}
