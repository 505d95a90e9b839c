//! 54-bit frame quantization and the bitstream file format.
//!
//! LSFs are coded as ten successive gaps, each quantized on a log-uniform grid
//! with a small beam search so that earlier errors are corrected by later gaps.
//! The remaining parameters use plain scalar or product codes.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::frame::{MelpFrame, LPC_ORDER, NUM_BANDS, NUM_HARMONICS, PITCH_MAX, PITCH_MIN};
use crate::lpc::{enforce_min_gap, LSF_MIN_GAP};

pub const FRAME_BITS: usize = 54;
pub const FRAME_BYTES: usize = 7;
pub const HEADER_LEN: usize = 12;
pub const MAGIC: &[u8; 4] = b"MELB";
pub const VERSION: u16 = 1;

/// Bit allocation and codebooks. All values are fixed constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantTables {
    /// Bits per LSF gap.
    pub lsf_bits: [u32; LPC_ORDER],
    /// Range of each LSF gap in radians; levels are cell centres of a log-uniform grid.
    pub lsf_gap_range: [(f64, f64); LPC_ORDER],
    pub lsf_beam: usize,
    pub gain_abs_bits: u32,
    pub gain_abs_range_db: (f64, f64),
    pub gain_delta_bits: u32,
    pub gain_delta_min_db: f64,
    pub gain_delta_step_db: f64,
    pub pitch_bits: u32,
    pub bpvc_bits: u32,
    /// Harmonic index ranges sharing one code.
    pub fourier_groups: [(usize, usize); 4],
    pub fourier_bits: u32,
    /// Log-magnitude levels of the Fourier groups.
    pub fourier_levels: [f64; 4],
    pub aperiodic_bits: u32,
    pub sync_bits: u32,
}

/// Gap ranges cover the 1st to 99th percentile of gaps measured on formant-structured
/// spectra (vowels and fricatives, bandwidth expanded like the analysis).
pub const TABLES: QuantTables = QuantTables {
    lsf_bits: [3, 2, 3, 2, 3, 2, 3, 2, 3, 2],
    lsf_gap_range: [
        (0.12, 0.90),
        (0.04, 0.45),
        (0.04, 0.75),
        (0.08, 0.50),
        (0.08, 1.05),
        (0.06, 0.33),
        (0.10, 1.20),
        (0.07, 0.33),
        (0.09, 0.87),
        (0.10, 0.42),
    ],
    lsf_beam: 8,
    gain_abs_bits: 5,
    gain_abs_range_db: (-60.0, 0.0),
    gain_delta_bits: 3,
    gain_delta_min_db: -12.0,
    gain_delta_step_db: 3.0,
    pitch_bits: 7,
    bpvc_bits: 4,
    fourier_groups: [(0, 2), (2, 4), (4, 7), (7, 10)],
    fourier_bits: 2,
    fourier_levels: [-1.0, -0.5, 0.0, 0.35],
    aperiodic_bits: 1,
    sync_bits: 1,
};

impl QuantTables {
    pub fn total_bits(&self) -> u32 {
        self.lsf_bits.iter().sum::<u32>()
            + self.gain_abs_bits
            + self.gain_delta_bits
            + self.pitch_bits
            + self.bpvc_bits
            + self.fourier_bits * self.fourier_groups.len() as u32
            + self.aperiodic_bits
            + self.sync_bits
    }

    fn lsf_levels(&self, i: usize) -> Vec<f64> {
        let n = 1usize << self.lsf_bits[i];
        let (lo, hi) = self.lsf_gap_range[i];
        let step = (hi / lo).ln() / n as f64;
        (0..n).map(|k| (lo.ln() + (k as f64 + 0.5) * step).exp()).collect()
    }

    fn gain_abs_level(&self, code: u8) -> f64 {
        let (lo, hi) = self.gain_abs_range_db;
        let top = ((1u32 << self.gain_abs_bits) - 1) as f64;
        lo + f64::from(code) * (hi - lo) / top
    }

    fn gain_delta_level(&self, code: u8) -> f64 {
        self.gain_delta_min_db + f64::from(code) * self.gain_delta_step_db
    }

    fn pitch_level(&self, code: u8) -> f64 {
        let top = ((1u32 << self.pitch_bits) - 1) as f64;
        PITCH_MIN * (PITCH_MAX / PITCH_MIN).powf(f64::from(code) / top)
    }
}

/// Per-field codewords of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FrameCodes {
    pub lsf: [u8; LPC_ORDER],
    pub gain_abs: u8,
    pub gain_delta: u8,
    pub pitch: u8,
    /// Bands 2-5 of a voiced frame; [`BPVC_UNVOICED`] for unvoiced frames.
    pub bpvc: u8,
    pub fourier: [u8; 4],
    pub aperiodic: bool,
    pub sync: bool,
}

/// Voicing pattern 1,0,0,0,1 never survives normalization, so its code marks unvoiced frames.
pub const BPVC_UNVOICED: u8 = 0b0001;

/// One 54-bit payload, MSB-first in 7 bytes with the last two bits zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct BitFrame([u8; FRAME_BYTES]);

impl BitFrame {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let arr: [u8; FRAME_BYTES] = bytes
            .try_into()
            .map_err(|_| Error::Bitstream(format!("payload is {} bytes, expected {FRAME_BYTES}", bytes.len())))?;
        if arr[FRAME_BYTES - 1] & 0b11 != 0 {
            return Err(Error::Bitstream("padding bits set".into()));
        }
        Ok(Self(arr))
    }

    /// Builds a frame from the low 54 bits of `bits`.
    pub fn from_bits(bits: u64) -> Self {
        let v = (bits & ((1u64 << FRAME_BITS) - 1)) << (FRAME_BYTES * 8 - FRAME_BITS);
        let mut out = [0u8; FRAME_BYTES];
        out.copy_from_slice(&v.to_be_bytes()[1..]);
        Self(out)
    }

    pub fn bits(&self) -> u64 {
        let mut b = [0u8; 8];
        b[1..].copy_from_slice(&self.0);
        u64::from_be_bytes(b) >> (FRAME_BYTES * 8 - FRAME_BITS)
    }

    pub fn as_bytes(&self) -> &[u8; FRAME_BYTES] {
        &self.0
    }

    pub fn from_codes(c: &FrameCodes) -> Self {
        let t = &TABLES;
        let mut w = Writer(0);
        for (code, bits) in c.lsf.iter().zip(t.lsf_bits) {
            w.put(*code, bits);
        }
        w.put(c.gain_abs, t.gain_abs_bits);
        w.put(c.gain_delta, t.gain_delta_bits);
        w.put(c.pitch, t.pitch_bits);
        w.put(c.bpvc, t.bpvc_bits);
        for code in c.fourier {
            w.put(code, t.fourier_bits);
        }
        w.put(c.aperiodic.into(), t.aperiodic_bits);
        w.put(c.sync.into(), t.sync_bits);
        Self::from_bits(w.0)
    }

    pub fn codes(&self) -> FrameCodes {
        let t = &TABLES;
        let mut r = Reader { bits: self.bits(), left: FRAME_BITS as u32 };
        let mut c = FrameCodes::default();
        for (code, bits) in c.lsf.iter_mut().zip(t.lsf_bits) {
            *code = r.take(bits);
        }
        c.gain_abs = r.take(t.gain_abs_bits);
        c.gain_delta = r.take(t.gain_delta_bits);
        c.pitch = r.take(t.pitch_bits);
        c.bpvc = r.take(t.bpvc_bits);
        for code in c.fourier.iter_mut() {
            *code = r.take(t.fourier_bits);
        }
        c.aperiodic = r.take(t.aperiodic_bits) == 1;
        c.sync = r.take(t.sync_bits) == 1;
        c
    }

    pub fn with_sync(&self, sync: bool) -> Self {
        Self::from_bits((self.bits() & !1) | u64::from(sync))
    }
}

struct Writer(u64);

impl Writer {
    fn put(&mut self, code: u8, bits: u32) {
        debug_assert!(u32::from(code) < (1 << bits));
        self.0 = (self.0 << bits) | u64::from(code);
    }
}

struct Reader {
    bits: u64,
    left: u32,
}

impl Reader {
    fn take(&mut self, bits: u32) -> u8 {
        self.left -= bits;
        ((self.bits >> self.left) & ((1 << bits) - 1)) as u8
    }
}

fn nearest(levels: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (k, l) in levels.iter().enumerate() {
        if (l - x).abs() < (levels[best] - x).abs() {
            best = k;
        }
    }
    best
}

/// Closed-loop beam search over gap codes, minimizing squared LSF error weighted by
/// the inverse distance to neighbouring LSFs. Paths whose remaining minimum gaps would
/// push the last LSF past π are pruned, so every code sequence chosen here decodes
/// without clamping.
fn quantize_lsf(lsf: &[f64; LPC_ORDER]) -> [u8; LPC_ORDER] {
    let t = &TABLES;
    let levels: Vec<Vec<f64>> = (0..LPC_ORDER).map(|i| t.lsf_levels(i)).collect();
    let mut rest_min = [0.0; LPC_ORDER + 1];
    for i in (0..LPC_ORDER).rev() {
        rest_min[i] = rest_min[i + 1] + levels[i][0];
    }
    let weight: Vec<f64> = (0..LPC_ORDER)
        .map(|i| {
            let lo = if i == 0 { 0.0 } else { lsf[i - 1] };
            let hi = if i + 1 == LPC_ORDER { PI } else { lsf[i + 1] };
            1.0 / (lsf[i] - lo).max(LSF_MIN_GAP) + 1.0 / (hi - lsf[i]).max(LSF_MIN_GAP)
        })
        .collect();

    struct Path {
        cost: f64,
        value: f64,
        codes: [u8; LPC_ORDER],
    }
    let mut beam = vec![Path { cost: 0.0, value: 0.0, codes: [0; LPC_ORDER] }];
    for i in 0..LPC_ORDER {
        let mut next = Vec::with_capacity(beam.len() * levels[i].len());
        for p in &beam {
            for (k, gap) in levels[i].iter().enumerate() {
                let value = p.value + gap;
                if value + rest_min[i + 1] >= PI - LSF_MIN_GAP {
                    break;
                }
                let err = value - lsf[i];
                let mut codes = p.codes;
                codes[i] = k as u8;
                next.push(Path { cost: p.cost + weight[i] * err * err, value, codes });
            }
        }
        next.sort_by(|a, b| a.cost.total_cmp(&b.cost));
        next.truncate(t.lsf_beam);
        beam = next;
    }
    beam[0].codes
}

fn dequantize_lsf(codes: &[u8; LPC_ORDER]) -> [f64; LPC_ORDER] {
    let mut out = [0.0; LPC_ORDER];
    let mut value = 0.0;
    for i in 0..LPC_ORDER {
        value += TABLES.lsf_levels(i)[usize::from(codes[i])];
        out[i] = value;
    }
    enforce_min_gap(&mut out, LSF_MIN_GAP);
    out
}

pub fn quantize(frame: &MelpFrame) -> BitFrame {
    let t = &TABLES;
    let mut f = frame.clone();
    f.normalize_voicing();

    let abs_top = (1u8 << t.gain_abs_bits) - 1;
    let (glo, ghi) = t.gain_abs_range_db;
    let gain_abs = ((f.gain_db[1] - glo) / (ghi - glo) * f64::from(abs_top)).round().clamp(0.0, f64::from(abs_top)) as u8;
    let delta = f.gain_db[0] - t.gain_abs_level(gain_abs);
    let delta_top = (1u8 << t.gain_delta_bits) - 1;
    let gain_delta =
        ((delta - t.gain_delta_min_db) / t.gain_delta_step_db).round().clamp(0.0, f64::from(delta_top)) as u8;

    let pitch_top = (1u8 << t.pitch_bits) - 1;
    let pitch = ((f.pitch.clamp(PITCH_MIN, PITCH_MAX) / PITCH_MIN).ln() / (PITCH_MAX / PITCH_MIN).ln()
        * f64::from(pitch_top))
    .round() as u8;

    let bpvc = if f.voiced() {
        f.bpvc[1..].iter().fold(0u8, |acc, b| (acc << 1) | u8::from(*b))
    } else {
        BPVC_UNVOICED
    };

    let mut fourier = [0u8; 4];
    for (code, (lo, hi)) in fourier.iter_mut().zip(t.fourier_groups) {
        let mean = f.fourier_mag[lo..hi].iter().map(|m| m.max(1e-6).ln()).sum::<f64>() / (hi - lo) as f64;
        *code = nearest(&t.fourier_levels, mean) as u8;
    }

    BitFrame::from_codes(&FrameCodes {
        lsf: quantize_lsf(&f.lsf),
        gain_abs,
        gain_delta,
        pitch,
        bpvc,
        fourier,
        aperiodic: f.aperiodic,
        sync: false,
    })
}

pub fn dequantize(bits: &BitFrame) -> MelpFrame {
    let t = &TABLES;
    let c = bits.codes();
    let mut f = MelpFrame::silent();
    f.lsf = dequantize_lsf(&c.lsf);
    let g2 = t.gain_abs_level(c.gain_abs);
    f.gain_db = [g2 + t.gain_delta_level(c.gain_delta), g2];
    f.pitch = t.pitch_level(c.pitch);
    if c.bpvc != BPVC_UNVOICED {
        f.bpvc[0] = true;
        for i in 1..NUM_BANDS {
            f.bpvc[i] = (c.bpvc >> (NUM_BANDS - 1 - i)) & 1 == 1;
        }
    }
    for (code, (lo, hi)) in c.fourier.iter().zip(t.fourier_groups) {
        let m = t.fourier_levels[usize::from(*code)].exp();
        f.fourier_mag[lo..hi].fill(m);
    }
    debug_assert_eq!(f.fourier_mag.len(), NUM_HARMONICS);
    f.aperiodic = c.aperiodic;
    f.normalize_voicing();
    f
}

/// Header followed by 7-byte frames.
pub fn pack_stream(frames: &[BitFrame]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + FRAME_BYTES * frames.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(frames.len() as u32).to_le_bytes());
    for f in frames {
        out.extend_from_slice(f.as_bytes());
    }
    out
}

pub fn unpack_stream(bytes: &[u8]) -> Result<Vec<BitFrame>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Bitstream(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Bitstream("bad magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Bitstream(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_LEN..];
    if body.len() != count * FRAME_BYTES {
        return Err(Error::Bitstream(format!(
            "header announces {count} frames ({} bytes) but {} bytes follow",
            count * FRAME_BYTES,
            body.len()
        )));
    }
    body.chunks_exact(FRAME_BYTES).map(BitFrame::from_bytes).collect()
}

/// Quantizes a frame sequence, alternating the sync bit.
pub fn encode_frames(frames: &[MelpFrame]) -> Vec<BitFrame> {
    frames.iter().enumerate().map(|(i, f)| quantize(f).with_sync(i % 2 == 1)).collect()
}

pub fn decode_frames(bits: &[BitFrame]) -> Vec<MelpFrame> {
    bits.iter().map(dequantize).collect()
}

pub fn bitrate_bps() -> f64 {
    FRAME_BITS as f64 * crate::frame::FRAME_RATE
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lpc::{lpc_to_lsf, lsf_to_lpc};
    use crate::testutil::{random_frame, resonance_lsf};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn allocation_is_54_bits() {
        assert_eq!(TABLES.total_bits() as usize, FRAME_BITS);
        assert!((bitrate_bps() - 2400.0).abs() < 1e-9);
        assert_eq!(44 * FRAME_BITS, 2376);
    }

    #[test]
    fn all_zero_payload_is_lowest_codewords() {
        let f = dequantize(&BitFrame::default());
        f.validate().unwrap();
        assert!(f.voiced());
        assert_eq!(f.pitch, PITCH_MIN);
        assert_eq!(f.gain_db[1], -60.0);
    }

    #[test]
    fn random_payloads_decode_to_valid_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100_000 {
            let b = BitFrame::from_bits(rng.random());
            dequantize(&b).validate().unwrap();
        }
        dequantize(&BitFrame::from_bits(u64::MAX)).validate().unwrap();
    }

    #[test]
    fn pitch_80_within_half_step() {
        let mut f = MelpFrame::silent();
        f.bpvc[0] = true;
        f.pitch = 80.0;
        let p = dequantize(&quantize(&f)).pitch;
        let half = (160f64.ln() - 20f64.ln()) / (2.0 * 127.0);
        assert!((p.ln() - 80f64.ln()).abs() <= half + 1e-12, "{p}");
    }

    #[test]
    fn unvoiced_frame_round_trip() {
        let f = MelpFrame::silent();
        let g = dequantize(&quantize(&f));
        assert!(!g.voiced());
        assert_eq!(g.fourier_mag, [1.0; NUM_HARMONICS]);
        assert_eq!(g.gain_db, f.gain_db);
    }

    #[test]
    fn bpvc_patterns_survive() {
        for bits in 0u8..16 {
            let mut f = MelpFrame::silent();
            f.bpvc[0] = true;
            f.pitch = 60.0;
            for i in 1..5 {
                f.bpvc[i] = (bits >> (4 - i)) & 1 == 1;
            }
            f.normalize_voicing();
            assert_eq!(dequantize(&quantize(&f)).bpvc, f.bpvc, "{bits:04b}");
        }
    }

    #[test]
    fn gain_error_bounded_in_range() {
        let mut f = MelpFrame::silent();
        for g2 in [-55.0, -31.3, -12.7, -2.0] {
            for d in [-10.0, -1.0, 0.0, 4.4, 8.0] {
                f.gain_db = [g2 + d, g2];
                let q = dequantize(&quantize(&f));
                assert!((q.gain_db[1] - g2).abs() <= 60.0 / 31.0 / 2.0 + 1e-9);
                assert!((q.gain_db[0] - (g2 + d)).abs() <= 1.5 + 1e-9);
            }
        }
    }

    #[test]
    fn lsf_quantization_keeps_spectral_distortion_low() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut total = 0.0;
        let n = 300;
        for _ in 0..n {
            let mut res = Vec::new();
            let mut f = rng.random_range(250.0..900.0);
            for _ in 0..4 {
                res.push((f, rng.random_range(60.0..250.0)));
                f += rng.random_range(500.0..1300.0);
                if f > 3900.0 {
                    break;
                }
            }
            res.push((200.0, 350.0));
            let lsf = resonance_lsf(&res);
            let mut frame = MelpFrame::silent();
            frame.lsf.copy_from_slice(&lsf);
            let q = dequantize(&quantize(&frame));
            total += lpc_lsd(&lsf_to_lpc(&frame.lsf), &lsf_to_lpc(&q.lsf));
        }
        let mean = total / n as f64;
        assert!(mean < 2.0, "mean LSD {mean:.2} dB");
    }

    fn lpc_lsd(a: &[f64], b: &[f64]) -> f64 {
        let n = 256;
        let pa = crate::lpc::lpc_power_spectrum(a, 1.0, n);
        let pb = crate::lpc::lpc_power_spectrum(b, 1.0, n);
        let s: f64 = pa.iter().zip(&pb).map(|(x, y)| (10.0 * (x / y).log10()).powi(2)).sum();
        (s / pa.len() as f64).sqrt()
    }

    #[test]
    fn stream_layout() {
        let empty = pack_stream(&[]);
        assert_eq!(empty.len(), HEADER_LEN);
        assert_eq!(&empty[..4], b"MELB");
        assert!(unpack_stream(&empty).unwrap().is_empty());
        let frames: Vec<BitFrame> = (0..44u64).map(|i| BitFrame::from_bits(i * 0x1234_5678_9ab)).collect();
        let bytes = pack_stream(&frames);
        assert_eq!(bytes.len(), 320);
        assert_eq!(unpack_stream(&bytes).unwrap(), frames);
    }

    #[test]
    fn stream_errors() {
        let bytes = pack_stream(&[BitFrame::from_bits(7), BitFrame::from_bits(9)]);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(unpack_stream(&bad), Err(Error::Bitstream(_))));
        assert!(unpack_stream(&bytes[..bytes.len() - 1]).is_err());
        assert!(unpack_stream(&bytes[..5]).is_err());
        let mut pad = bytes.clone();
        pad[HEADER_LEN + 6] |= 1;
        assert!(unpack_stream(&pad).is_err());
        assert!(BitFrame::from_bytes(&[0; 6]).is_err());
    }

    #[test]
    fn sync_bit_alternates() {
        let frames = vec![MelpFrame::silent(); 4];
        let sync: Vec<bool> = encode_frames(&frames).iter().map(|b| b.codes().sync).collect();
        assert_eq!(sync, [false, true, false, true]);
    }

    proptest! {
        #[test]
        fn codes_round_trip(bits in 0u64..(1 << 54)) {
            let b = BitFrame::from_bits(bits);
            prop_assert_eq!(b.bits(), bits);
            prop_assert_eq!(BitFrame::from_codes(&b.codes()), b);
            prop_assert_eq!(BitFrame::from_bytes(b.as_bytes()).unwrap(), b);
        }

        #[test]
        fn quantize_is_idempotent(seed in any::<u64>()) {
            let f = random_frame(&mut ChaCha8Rng::seed_from_u64(seed));
            let q = quantize(&f);
            prop_assert_eq!(quantize(&dequantize(&q)), q);
        }

        #[test]
        fn quantized_frames_are_valid(seed in any::<u64>()) {
            let f = random_frame(&mut ChaCha8Rng::seed_from_u64(seed));
            dequantize(&quantize(&f)).validate().unwrap();
        }

        #[test]
        fn pitch_code_is_monotone(a in 10.0f64..200.0, b in 10.0f64..200.0) {
            let code = |p: f64| {
                let mut f = MelpFrame::silent();
                f.bpvc[0] = true;
                f.pitch = p;
                quantize(&f).codes().pitch
            };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(code(lo) <= code(hi));
        }

        #[test]
        fn pitch_within_half_log_step(p in 20.0f64..160.0) {
            let mut f = MelpFrame::silent();
            f.bpvc[0] = true;
            f.pitch = p;
            let q = dequantize(&quantize(&f)).pitch;
            prop_assert!((q.ln() - p.ln()).abs() <= 8f64.ln() / 254.0 + 1e-12);
        }

        #[test]
        fn real_lsfs_round_trip_through_lpc(seed in any::<u64>()) {
            let f = random_frame(&mut ChaCha8Rng::seed_from_u64(seed));
            let q = dequantize(&quantize(&f));
            let back = lpc_to_lsf(&q.lpc()).unwrap();
            for (x, y) in back.iter().zip(&q.lsf) {
                prop_assert!((x - y).abs() < 1e-6);
            }
        }
    }
}
