//! The per-frame MELP parameter set and its text dump format.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::lpc::{self, LSF_MIN_GAP};

pub const FRAME_LEN: usize = 180;
pub const SUBFRAME_LEN: usize = FRAME_LEN / 2;
pub const LPC_ORDER: usize = 10;
pub const NUM_BANDS: usize = 5;
pub const NUM_HARMONICS: usize = 10;
pub const PITCH_MIN: f64 = 20.0;
pub const PITCH_MAX: f64 = 160.0;
/// Pitch stored for unvoiced frames.
pub const UNVOICED_PITCH: f64 = 50.0;
pub const GAIN_FLOOR_DB: f64 = -60.0;
/// Frames per second: 8000 / 180.
pub const FRAME_RATE: f64 = 8000.0 / FRAME_LEN as f64;

/// Number of values in one line of the parameter dump.
pub const DUMP_FIELDS: usize = LPC_ORDER + 2 + NUM_BANDS + 1 + 1 + NUM_HARMONICS;

#[derive(Debug, Clone, PartialEq)]
pub struct MelpFrame {
    /// Line spectral frequencies in radians, strictly ascending in (0, π).
    pub lsf: [f64; LPC_ORDER],
    /// Subframe gains in dB.
    pub gain_db: [f64; 2],
    /// Bandpass voicing, lowest band first; band 0 is the frame's voiced/unvoiced decision.
    pub bpvc: [bool; NUM_BANDS],
    pub pitch: f64,
    pub aperiodic: bool,
    pub fourier_mag: [f64; NUM_HARMONICS],
}

impl MelpFrame {
    /// Unvoiced frame with a flat spectrum at the gain floor.
    pub fn silent() -> Self {
        let mut lsf = [0.0; LPC_ORDER];
        lsf.copy_from_slice(&lpc::flat_lsf(LPC_ORDER));
        Self {
            lsf,
            gain_db: [GAIN_FLOOR_DB; 2],
            bpvc: [false; NUM_BANDS],
            pitch: UNVOICED_PITCH,
            aperiodic: false,
            fourier_mag: [1.0; NUM_HARMONICS],
        }
    }

    pub fn voiced(&self) -> bool {
        self.bpvc[0]
    }

    /// Predictor coefficients of the frame's LSFs.
    pub fn lpc(&self) -> Vec<f64> {
        lpc::lsf_to_lpc(&self.lsf)
    }

    /// Applies the voicing conventions: an unvoiced lowest band forces every band unvoiced,
    /// clears the aperiodic flag and resets the pitch; a voiced frame whose only voiced upper band is the top band has
    /// that band cleared.
    pub fn normalize_voicing(&mut self) {
        if !self.bpvc[0] {
            self.bpvc = [false; NUM_BANDS];
            self.aperiodic = false;
            self.pitch = UNVOICED_PITCH;
        } else {
            if self.bpvc[1..] == [false, false, false, true] {
                self.bpvc[4] = false;
            }
            self.pitch = self.pitch.clamp(PITCH_MIN, PITCH_MAX);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidFrame(m));
        if self.lsf.iter().any(|w| !w.is_finite() || *w <= 0.0 || *w >= std::f64::consts::PI) {
            return bad(format!("LSF outside (0, π): {:?}", self.lsf));
        }
        if self.lsf.windows(2).any(|w| w[1] - w[0] < LSF_MIN_GAP * (1.0 - 1e-9)) {
            return bad(format!("LSFs not ascending with minimum gap: {:?}", self.lsf));
        }
        if self.gain_db.iter().any(|g| !g.is_finite()) {
            return bad("non-finite gain".into());
        }
        if self.fourier_mag.iter().any(|m| !m.is_finite() || *m <= 0.0) {
            return bad("non-positive Fourier magnitude".into());
        }
        if !self.pitch.is_finite() || (self.voiced() && !(PITCH_MIN..=PITCH_MAX).contains(&self.pitch)) {
            return bad(format!("pitch {} outside [{PITCH_MIN}, {PITCH_MAX}]", self.pitch));
        }
        Ok(())
    }

    /// Values in dump order: lsf, gain, bpvc, pitch, aperiodic, fourier magnitudes.
    pub fn to_values(&self) -> [f64; DUMP_FIELDS] {
        let mut v = [0.0; DUMP_FIELDS];
        v[..10].copy_from_slice(&self.lsf);
        v[10..12].copy_from_slice(&self.gain_db);
        for (i, b) in self.bpvc.iter().enumerate() {
            v[12 + i] = f64::from(u8::from(*b));
        }
        v[17] = self.pitch;
        v[18] = f64::from(u8::from(self.aperiodic));
        v[19..].copy_from_slice(&self.fourier_mag);
        v
    }

    pub fn from_values(v: &[f64]) -> Result<Self> {
        if v.len() != DUMP_FIELDS {
            return Err(Error::Dimension { expected: DUMP_FIELDS, actual: v.len() });
        }
        let flag = |x: f64| -> Result<bool> {
            match x {
                x if x == 0.0 => Ok(false),
                x if x == 1.0 => Ok(true),
                _ => Err(Error::Format(format!("flag value {x} is not 0/1"))),
            }
        };
        let mut f = MelpFrame::silent();
        f.lsf.copy_from_slice(&v[..10]);
        f.gain_db.copy_from_slice(&v[10..12]);
        for i in 0..NUM_BANDS {
            f.bpvc[i] = flag(v[12 + i])?;
        }
        f.pitch = v[17];
        f.aperiodic = flag(v[18])?;
        f.fourier_mag.copy_from_slice(&v[19..]);
        Ok(f)
    }
}

/// One frame per line, space-separated, values in [`MelpFrame::to_values`] order.
pub fn format_dump(frames: &[MelpFrame]) -> String {
    let mut out = String::new();
    for f in frames {
        let line: Vec<String> = f
            .to_values()
            .iter()
            .enumerate()
            .map(|(i, v)| if (12..17).contains(&i) || i == 18 { format!("{}", *v as u8) } else { format!("{v}") })
            .collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

pub fn parse_dump(text: &str) -> Result<Vec<MelpFrame>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let vals = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| Error::Format(format!("dump line {}: bad number {t:?}", i + 1))))
                .collect::<Result<Vec<_>>>()?;
            MelpFrame::from_values(&vals)
        })
        .collect()
}

pub fn write_dump(frames: &[MelpFrame], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_dump(frames))?;
    Ok(())
}

pub fn read_dump(path: impl AsRef<Path>) -> Result<Vec<MelpFrame>> {
    parse_dump(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silent_frame_is_valid() {
        MelpFrame::silent().validate().unwrap();
        assert_eq!(DUMP_FIELDS, 29);
    }

    #[test]
    fn dump_round_trip_is_exact() {
        let mut f = MelpFrame::silent();
        f.bpvc = [true, true, false, true, false];
        f.pitch = 81.37;
        f.aperiodic = true;
        f.gain_db = [-23.456789, -19.0];
        f.fourier_mag[3] = 1.2345678901234;
        f.lsf[0] = 0.1234567890123;
        let text = format_dump(&[f.clone(), MelpFrame::silent()]);
        let back = parse_dump(&text).unwrap();
        assert_eq!(back, vec![f, MelpFrame::silent()]);
        assert!(text.lines().next().unwrap().split(' ').count() == 29);
    }

    #[test]
    fn voicing_conventions() {
        let mut f = MelpFrame::silent();
        f.bpvc = [false, true, true, false, false];
        f.pitch = 90.0;
        f.normalize_voicing();
        assert_eq!(f.bpvc, [false; 5]);
        assert_eq!(f.pitch, UNVOICED_PITCH);
        f.bpvc = [true, false, false, false, true];
        f.pitch = 200.0;
        f.normalize_voicing();
        assert_eq!(f.bpvc, [true, false, false, false, false]);
        assert_eq!(f.pitch, PITCH_MAX);
    }

    #[test]
    fn validation_catches_violations() {
        let mut f = MelpFrame::silent();
        f.lsf[3] = f.lsf[2];
        assert!(f.validate().is_err());
        let mut f = MelpFrame::silent();
        f.fourier_mag[0] = 0.0;
        assert!(f.validate().is_err());
        let mut f = MelpFrame::silent();
        f.bpvc[0] = true;
        f.pitch = 10.0;
        assert!(f.validate().is_err());
    }
}
