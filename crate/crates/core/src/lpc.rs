//! Linear prediction utilities.
//!
//! Polynomials use the prediction-error convention `A(z) = 1 + a[0] z^-1 + ... + a[p-1] z^-p`;
//! only `a[0..p]` is stored.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Minimum spacing enforced between adjacent line spectral frequencies, in radians.
pub const LSF_MIN_GAP: f64 = 1e-4;

pub fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    (0..=max_lag)
        .map(|lag| if lag >= x.len() { 0.0 } else { x[..x.len() - lag].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum() })
        .collect()
}

/// Levinson-Durbin recursion. Returns the predictor and the reflection coefficients;
/// stops early (remaining coefficients zero) if the recursion loses positive-definiteness.
pub fn levinson(r: &[f64], order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = vec![0.0; order];
    let mut refl = vec![0.0; order];
    let mut err = r[0];
    if err <= 0.0 {
        return (a, refl);
    }
    for i in 0..order {
        let mut acc = r[i + 1];
        for j in 0..i {
            acc += a[j] * r[i - j];
        }
        let k = -acc / err;
        if !k.is_finite() || k.abs() >= 1.0 {
            break;
        }
        let prev = a.clone();
        for j in 0..i {
            a[j] = prev[j] + k * prev[i - 1 - j];
        }
        a[i] = k;
        refl[i] = k;
        err *= 1.0 - k * k;
        if err <= 0.0 {
            break;
        }
    }
    (a, refl)
}

/// LPC analysis of an already-windowed segment, with white-noise correction and bandwidth
/// expansion. Silent input yields an all-zero (flat) predictor.
pub fn lpc_from_windowed(x: &[f64], order: usize, bw_expansion: f64) -> Vec<f64> {
    let mut r = autocorrelation(x, order);
    if r[0] <= 1e-12 {
        return vec![0.0; order];
    }
    r[0] *= 1.0001;
    let (mut a, _) = levinson(&r, order);
    let mut g = 1.0;
    for c in a.iter_mut() {
        g *= bw_expansion;
        *c *= g;
    }
    a
}

/// Step-down recursion; the polynomial is minimum phase iff every |k| < 1.
pub fn reflection_coefficients(a: &[f64]) -> Option<Vec<f64>> {
    let p = a.len();
    let mut cur = a.to_vec();
    let mut k = vec![0.0; p];
    for i in (0..p).rev() {
        let ki = cur[i];
        if !ki.is_finite() || ki.abs() >= 1.0 {
            return None;
        }
        k[i] = ki;
        let den = 1.0 - ki * ki;
        let prev = cur.clone();
        for j in 0..i {
            cur[j] = (prev[j] - ki * prev[i - 1 - j]) / den;
        }
    }
    Some(k)
}

pub fn is_stable(a: &[f64]) -> bool {
    reflection_coefficients(a).is_some()
}

/// Evaluates `2 Σ c[k] cos((m-k)ω) + c[m]` for a symmetric polynomial of degree 2m.
fn symmetric_eval(c: &[f64], w: f64) -> f64 {
    let m = c.len() - 1;
    let mut s = c[m];
    for (k, ck) in c[..m].iter().enumerate() {
        s += 2.0 * ck * ((m - k) as f64 * w).cos();
    }
    s
}

/// Sum and difference polynomials with their trivial roots at z = -1 and z = 1 removed.
/// Returns the first half (m + 1 coefficients) of each symmetric polynomial.
fn sum_diff_polys(a: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let p = a.len();
    let mut c = vec![1.0];
    c.extend_from_slice(a);
    c.push(0.0);
    let sum: Vec<f64> = (0..=p + 1).map(|k| c[k] + c[p + 1 - k]).collect();
    let diff: Vec<f64> = (0..=p + 1).map(|k| c[k] - c[p + 1 - k]).collect();
    let mut ps = vec![0.0; p + 1];
    let mut qs = vec![0.0; p + 1];
    ps[0] = sum[0];
    qs[0] = diff[0];
    for k in 1..=p {
        ps[k] = sum[k] - ps[k - 1];
        qs[k] = diff[k] + qs[k - 1];
    }
    let m = p / 2;
    (ps[..=m].to_vec(), qs[..=m].to_vec())
}

fn find_roots(c: &[f64], grid: usize) -> Vec<f64> {
    let mut roots = Vec::new();
    let mut w_prev = 0.0;
    let mut f_prev = symmetric_eval(c, w_prev);
    for i in 1..=grid {
        let w = PI * i as f64 / grid as f64;
        let f = symmetric_eval(c, w);
        if f == 0.0 && i < grid {
            roots.push(w);
        } else if f_prev != 0.0 && f_prev.signum() != f.signum() {
            let (mut lo, mut hi, mut flo) = (w_prev, w, f_prev);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                let fm = symmetric_eval(c, mid);
                if fm.signum() == flo.signum() {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-15 {
                    break;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        w_prev = w;
        f_prev = f;
    }
    roots
}

/// Converts a minimum-phase predictor of even order to ascending LSFs in (0, π).
pub fn lpc_to_lsf(a: &[f64]) -> Result<Vec<f64>> {
    let p = a.len();
    if p == 0 || p % 2 != 0 {
        return Err(Error::Config(format!("LPC order {p} must be even and positive")));
    }
    if !is_stable(a) {
        return Err(Error::UnstableFilter);
    }
    let (ps, qs) = sum_diff_polys(a);
    for grid in [1024usize, 8192, 65536] {
        let pr = find_roots(&ps, grid);
        let qr = find_roots(&qs, grid);
        if pr.len() != p / 2 || qr.len() != p / 2 {
            continue;
        }
        let mut lsf = Vec::with_capacity(p);
        for (x, y) in pr.iter().zip(&qr) {
            lsf.push(*x);
            lsf.push(*y);
        }
        if lsf.windows(2).all(|w| w[0] < w[1]) {
            enforce_min_gap(&mut lsf, LSF_MIN_GAP);
            return Ok(lsf);
        }
    }
    Err(Error::UnstableFilter)
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Inverse of [`lpc_to_lsf`].
pub fn lsf_to_lpc(lsf: &[f64]) -> Vec<f64> {
    let p = lsf.len();
    let mut pp = vec![1.0, 1.0];
    let mut qq = vec![1.0, -1.0];
    for (i, w) in lsf.iter().enumerate() {
        let factor = [1.0, -2.0 * w.cos(), 1.0];
        if i % 2 == 0 {
            pp = poly_mul(&pp, &factor);
        } else {
            qq = poly_mul(&qq, &factor);
        }
    }
    (1..=p).map(|k| 0.5 * (pp[k] + qq[k])).collect()
}

/// Sorts and pushes LSFs apart so that they are strictly ascending with spacing ≥ `gap`
/// inside (gap, π - gap).
pub fn enforce_min_gap(lsf: &mut [f64], gap: f64) {
    let p = lsf.len();
    if p == 0 {
        return;
    }
    for v in lsf.iter_mut() {
        if !v.is_finite() {
            *v = 0.0;
        }
    }
    lsf.sort_by(|a, b| a.partial_cmp(b).unwrap());
    lsf[0] = lsf[0].max(gap);
    for i in 1..p {
        lsf[i] = lsf[i].max(lsf[i - 1] + gap);
    }
    lsf[p - 1] = lsf[p - 1].min(PI - gap);
    for i in (0..p - 1).rev() {
        lsf[i] = lsf[i].min(lsf[i + 1] - gap);
    }
}

/// The LSFs of the flat predictor `A(z) = 1`: kπ/(p+1).
pub fn flat_lsf(order: usize) -> Vec<f64> {
    (1..=order).map(|k| k as f64 * PI / (order + 1) as f64).collect()
}

/// Predictor coefficients of an all-pole filter with one complex pole pair per
/// `(centre_hz, bandwidth_hz)` resonance.
pub fn resonator_lpc(resonances: &[(f64, f64)], fs: f64) -> Vec<f64> {
    let mut poly = vec![1.0];
    for &(f, bw) in resonances {
        let r = (-PI * bw / fs).exp();
        let th = 2.0 * PI * f / fs;
        let q = [1.0, -2.0 * r * th.cos(), r * r];
        let mut next = vec![0.0; poly.len() + 2];
        for (i, p) in poly.iter().enumerate() {
            for (j, c) in q.iter().enumerate() {
                next[i + j] += p * c;
            }
        }
        poly = next;
    }
    poly.remove(0);
    poly
}

/// `gain² / |A(e^{jω})|²` at `n` frequencies `ω = πk/n`, `k = 0..n`.
pub fn lpc_power_spectrum(a: &[f64], gain: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let w = PI * k as f64 / n as f64;
            let (mut re, mut im) = (1.0, 0.0);
            for (i, c) in a.iter().enumerate() {
                let ph = w * (i + 1) as f64;
                re += c * ph.cos();
                im -= c * ph.sin();
            }
            gain * gain / (re * re + im * im).max(1e-300)
        })
        .collect()
}

/// Filters `x` through `A(z)` (prediction error / inverse filter), zero initial state.
pub fn inverse_filter(a: &[f64], x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|n| {
            let mut y = x[n];
            for (k, c) in a.iter().enumerate() {
                if n > k {
                    y += c * x[n - k - 1];
                }
            }
            y
        })
        .collect()
}

/// All-pole synthesis filter `1/A(z)` with persistent memory (most recent output first).
#[derive(Debug, Clone)]
pub struct SynthesisFilter {
    mem: Vec<f64>,
}

impl SynthesisFilter {
    pub fn new(order: usize) -> Self {
        Self { mem: vec![0.0; order] }
    }

    #[inline]
    pub fn step(&mut self, a: &[f64], x: f64) -> f64 {
        let mut y = x;
        for (c, m) in a.iter().zip(&self.mem) {
            y -= c * m;
        }
        self.mem.rotate_right(1);
        self.mem[0] = y;
        y
    }

    pub fn reset(&mut self) {
        self.mem.iter_mut().for_each(|m| *m = 0.0);
    }
}
