//! Shared fixtures for unit tests.

use rand::Rng;

use crate::frame::{MelpFrame, LPC_ORDER, NUM_HARMONICS};
use crate::lpc::{self, LSF_MIN_GAP};

/// LSFs of an all-pole filter built from `(centre_hz, bandwidth_hz)` resonances at 8 kHz.
/// Filters with fewer than five resonances are padded with zeros in the predictor.
pub fn resonance_lsf(resonances: &[(f64, f64)]) -> [f64; LPC_ORDER] {
    let mut a = lpc::resonator_lpc(resonances, 8000.0);
    a.resize(LPC_ORDER, 0.0);
    lpc::lpc_to_lsf(&a).unwrap().try_into().unwrap()
}

/// Vowel-like filter: four formants over a broad low resonance that supplies the spectral tilt.
pub fn vowel_lsf() -> [f64; LPC_ORDER] {
    resonance_lsf(&[(250.0, 300.0), (700.0, 80.0), (1200.0, 90.0), (2600.0, 150.0), (3500.0, 300.0)])
}

/// High-frequency, fricative-like filter.
pub fn fricative_lsf() -> [f64; LPC_ORDER] {
    resonance_lsf(&[(300.0, 600.0), (1200.0, 700.0), (2600.0, 300.0), (3300.0, 250.0), (3800.0, 400.0)])
}

pub fn voiced_frame(pitch: f64, gain_db: f64) -> MelpFrame {
    MelpFrame {
        lsf: vowel_lsf(),
        gain_db: [gain_db; 2],
        bpvc: [true, true, true, false, false],
        pitch,
        aperiodic: false,
        fourier_mag: [1.0; NUM_HARMONICS],
    }
}

/// Arbitrary frame satisfying every frame invariant.
pub fn random_frame(rng: &mut impl Rng) -> MelpFrame {
    let mut lsf = [0.0; LPC_ORDER];
    for v in lsf.iter_mut() {
        *v = rng.random_range(0.01..3.13);
    }
    lsf.sort_by(f64::total_cmp);
    lpc::enforce_min_gap(&mut lsf, LSF_MIN_GAP);
    let mut f = MelpFrame {
        lsf,
        gain_db: [rng.random_range(-70.0..5.0), rng.random_range(-70.0..5.0)],
        bpvc: std::array::from_fn(|_| rng.random_bool(0.5)),
        pitch: rng.random_range(20.0..160.0),
        aperiodic: rng.random_bool(0.3),
        fourier_mag: std::array::from_fn(|_| rng.random_range(0.2..2.5)),
    };
    f.normalize_voicing();
    f
}
