//! Fundamental frequencies of quasi-periodic signals and Diophantine scans.
//!
//! [`naff_extract`] follows the usual frequency-map recipe: a Hann-windowed
//! correlation `|<z, e_f>|` is located on a zero-padded FFT, its maximum is
//! refined by golden-section search, and the found tone is removed from the
//! signal after modified Gram-Schmidt against the tones already extracted.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};

pub const MIN_SIGNAL_LEN: usize = 64;

/// Exhaustive-scan guard on the number of lattice points.
pub const MAX_SCAN_POINTS: u128 = 100_000_000;

/// `|omega . k|` below this is an exact resonance.
pub const RESONANCE_TOL: f64 = 1e-14;

/// Frequencies in cycles per unit time, strongest first.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyVector {
    pub omega: Vec<f64>,
    pub amplitudes: Vec<f64>,
    /// Norm of what is left after extraction, relative to the input norm.
    pub residual: f64,
}

/// One fundamental frequency per torus angle, in angle order.
#[derive(Clone, Debug, PartialEq)]
pub struct TorusFrequencies {
    pub omega: Vec<f64>,
    pub amplitudes: Vec<f64>,
    /// Worst per-angle extraction residual.
    pub residual: f64,
}

struct Windowed<'a> {
    signal: &'a [Complex64],
    window: Vec<f64>,
    norm: f64,
    dt: f64,
}

impl Windowed<'_> {
    fn tone(&self, f: f64) -> Vec<Complex64> {
        (0..self.signal.len()).map(|n| Complex64::from_polar(1.0, TAU * f * n as f64 * self.dt)).collect()
    }

    fn inner(&self, a: &[Complex64], b: &[Complex64]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for ((x, y), w) in a.iter().zip(b).zip(&self.window) {
            acc += x * y.conj() * w;
        }
        acc / self.norm
    }

    /// `<r, e_f>` without materializing the tone.
    fn correlation(&self, r: &[Complex64], f: f64) -> Complex64 {
        let step = Complex64::from_polar(1.0, -TAU * f * self.dt);
        let mut rot = Complex64::new(1.0, 0.0);
        let mut acc = Complex64::new(0.0, 0.0);
        for (n, (x, w)) in r.iter().zip(&self.window).enumerate() {
            if n % 256 == 0 {
                rot = Complex64::from_polar(1.0, -TAU * f * n as f64 * self.dt);
            }
            acc += x * rot * w;
            rot *= step;
        }
        acc / self.norm
    }
}

fn hann(len: usize) -> Vec<f64> {
    let m = (len - 1) as f64;
    (0..len).map(|n| 1.0 - (TAU * n as f64 / m).cos()).collect()
}

fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if (hi - lo).abs() <= 1e-15 * (1.0 + lo.abs()) {
            break;
        }
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        }
    }
    0.5 * (lo + hi)
}

fn wrap_nyquist(f: f64, dt: f64) -> f64 {
    let fs = 1.0 / dt;
    let w = (f + 0.5 * fs).rem_euclid(fs) - 0.5 * fs;
    if w >= 0.5 * fs {
        w - fs
    } else {
        w
    }
}

/// Extracts the `n_freq` strongest frequencies of a uniformly sampled signal.
pub fn naff_extract(signal: &[Complex64], dt: f64, n_freq: usize) -> Result<FrequencyVector> {
    if signal.len() < MIN_SIGNAL_LEN {
        return Err(Error::SignalTooShort { len: signal.len(), min: MIN_SIGNAL_LEN });
    }
    if n_freq == 0 {
        return Err(Error::InvalidParameter("n_freq must be >= 1".into()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter("dt must be > 0".into()));
    }
    if signal.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidParameter("signal contains non-finite samples".into()));
    }
    let len = signal.len();
    let window = hann(len);
    let norm: f64 = window.iter().sum();
    let ctx = Windowed { signal, window, norm, dt };
    let input_norm = ctx.inner(signal, signal).re.sqrt();
    let scale = signal.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if scale == 0.0 || input_norm <= 1e-300 {
        return Err(Error::DegenerateSignal);
    }

    let pad = (4 * len).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(pad);
    let bin = 1.0 / (pad as f64 * dt);

    let mut residual: Vec<Complex64> = signal.to_vec();
    let mut freqs: Vec<f64> = Vec::new();
    // Orthonormal basis of the extracted tones and the triangular change of basis.
    let mut basis: Vec<Vec<Complex64>> = Vec::new();
    let mut coords: Vec<Vec<Complex64>> = Vec::new();
    let mut proj: Vec<Complex64> = Vec::new();

    for _ in 0..n_freq {
        let rnorm = ctx.inner(&residual, &residual).re.sqrt();
        if rnorm <= 1e-14 * input_norm {
            break;
        }
        let mut buf: Vec<Complex64> = residual.iter().zip(&ctx.window).map(|(z, w)| z * w).collect();
        buf.resize(pad, Complex64::new(0.0, 0.0));
        fft.process(&mut buf);
        let (peak, _) = buf.iter().enumerate().map(|(i, z)| (i, z.norm_sqr())).fold((0, -1.0), |best, cur| {
            if cur.1 > best.1 {
                cur
            } else {
                best
            }
        });
        let f0 = if peak <= pad / 2 { peak as f64 * bin } else { (peak as f64 - pad as f64) * bin };
        let f = golden_max(|f| ctx.correlation(&residual, f).norm_sqr(), f0 - bin, f0 + bin);

        // Modified Gram-Schmidt of the new tone against the previous ones.
        let tone = ctx.tone(f);
        let mut u = tone.clone();
        let mut c = vec![Complex64::new(0.0, 0.0); basis.len() + 1];
        for (j, q) in basis.iter().enumerate() {
            let p = ctx.inner(&u, q);
            c[j] = p;
            for (a, b) in u.iter_mut().zip(q) {
                *a -= p * b;
            }
        }
        let unorm = ctx.inner(&u, &u).re.sqrt();
        if unorm <= 1e-10 {
            break;
        }
        for a in &mut u {
            *a /= unorm;
        }
        c[basis.len()] = Complex64::new(unorm, 0.0);
        let a = ctx.inner(&residual, &u);
        for (r, q) in residual.iter_mut().zip(&u) {
            *r -= a * q;
        }
        freqs.push(f);
        basis.push(u);
        coords.push(c);
        proj.push(a);
    }
    if freqs.is_empty() {
        return Err(Error::DegenerateSignal);
    }

    // tone_j = sum_{i<=j} coords[j][i] q_i; the signal is sum_i proj_i q_i.
    // Amplitudes in the tone basis solve the upper-triangular system T^T a = proj.
    let m = freqs.len();
    let mut amps = vec![Complex64::new(0.0, 0.0); m];
    for i in (0..m).rev() {
        let mut s = proj[i];
        for j in i + 1..m {
            s -= coords[j][i] * amps[j];
        }
        amps[i] = s / coords[i][i];
    }
    let mut pairs: Vec<(f64, f64)> = freqs.iter().zip(&amps).map(|(&f, a)| (wrap_nyquist(f, dt), a.norm())).collect();
    pairs.sort_by(|a, b| b.1.total_cmp(&a.1));
    let rest = ctx.inner(&residual, &residual).re.sqrt();
    Ok(FrequencyVector {
        omega: pairs.iter().map(|p| p.0).collect(),
        amplitudes: pairs.iter().map(|p| p.1).collect(),
        residual: (rest / input_norm).clamp(0.0, 1.0),
    })
}

/// Maps angles to the unit-circle signal `exp(2 pi i phi)`.
pub fn angle_signal(angles: impl IntoIterator<Item = f64>) -> Vec<Complex64> {
    angles.into_iter().map(|p| Complex64::from_polar(1.0, TAU * p)).collect()
}

/// Fundamental frequency of each angle of a trajectory lying on a torus.
pub fn measure_torus_frequencies(traj: &Trajectory) -> Result<TorusFrequencies> {
    if traj.len() < MIN_SIGNAL_LEN {
        return Err(Error::SignalTooShort { len: traj.len(), min: MIN_SIGNAL_LEN });
    }
    let dt = traj.dt();
    let n = traj.states[0].dof();
    let mut omega = Vec::with_capacity(n);
    let mut amplitudes = Vec::with_capacity(n);
    let mut residual: f64 = 0.0;
    let mut all_still = true;
    for j in 0..n {
        let sig = angle_signal(traj.states.iter().map(|s| s.phi[j]));
        let mean = sig.iter().sum::<Complex64>() / sig.len() as f64;
        let spread = sig.iter().map(|z| (z - mean).norm()).fold(0.0, f64::max);
        if spread > 1e-12 {
            all_still = false;
        }
        let fv = naff_extract(&sig, dt, 1)?;
        omega.push(fv.omega[0]);
        amplitudes.push(fv.amplitudes[0]);
        residual = residual.max(fv.residual);
    }
    if all_still {
        return Err(Error::DegenerateSignal);
    }
    if residual > 0.1 {
        return Err(Error::ChaoticSignal { residual });
    }
    Ok(TorusFrequencies { omega, amplitudes, residual })
}

/// Lower bound of `|omega . k| |k|_1^gamma` over `0 < |k|_1 <= K_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiophantineCertificate {
    pub gamma: f64,
    pub k_max: u32,
    pub l_lower: f64,
    pub worst_k: Vec<i64>,
}

impl DiophantineCertificate {
    pub fn is_resonant(&self) -> bool {
        self.l_lower == 0.0
    }
}

fn ball_size(dim: usize, k_max: u32) -> u128 {
    // Number of integer points with |k|_1 <= K in dimension d, by the recurrence
    // N(d, K) = N(d-1, K) + 2 sum_{j=1}^{K} N(d-1, K-j).
    let k = k_max as usize;
    let mut prev = vec![1u128; k + 1];
    for _ in 0..dim {
        let mut cur = vec![0u128; k + 1];
        for r in 0..=k {
            let mut s = prev[r];
            for j in 1..=r {
                s = s.saturating_add(prev[r - j].saturating_mul(2));
            }
            cur[r] = s;
        }
        prev = cur;
    }
    prev[k]
}

/// Exhaustive Diophantine scan over the `l1` ball.
pub fn diophantine_scan(omega: &[f64], gamma: f64, k_max: u32) -> Result<DiophantineCertificate> {
    if omega.is_empty() {
        return Err(Error::InvalidParameter("empty frequency vector".into()));
    }
    if k_max < 1 {
        return Err(Error::InvalidParameter("K_max must be >= 1".into()));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidParameter("gamma must be finite and >= 0".into()));
    }
    let points = ball_size(omega.len(), k_max);
    if points > MAX_SCAN_POINTS {
        return Err(Error::ScanTooLarge { points });
    }
    let mut best = f64::INFINITY;
    let mut worst = vec![0i64; omega.len()];
    let mut k = vec![0i64; omega.len()];
    scan_rec(omega, gamma, k_max as i64, 0, 0, 0.0, &mut k, &mut best, &mut worst);
    Ok(DiophantineCertificate { gamma, k_max, l_lower: best, worst_k: worst })
}

#[allow(clippy::too_many_arguments)]
fn scan_rec(
    omega: &[f64],
    gamma: f64,
    budget: i64,
    slot: usize,
    used: i64,
    dot: f64,
    k: &mut [i64],
    best: &mut f64,
    worst: &mut Vec<i64>,
) {
    if slot == omega.len() {
        if used == 0 {
            return;
        }
        // Visit each +-k pair once: first nonzero entry positive.
        if k.iter().find(|&&v| v != 0).is_some_and(|&v| v < 0) {
            return;
        }
        let d = dot.abs();
        let val = if d < RESONANCE_TOL { 0.0 } else { d * (used as f64).powf(gamma) };
        if val < *best {
            *best = val;
            worst.copy_from_slice(k);
        }
        return;
    }
    let rest = budget - used;
    for v in -rest..=rest {
        k[slot] = v;
        scan_rec(omega, gamma, budget, slot + 1, used + v.abs(), dot + v as f64 * omega[slot], k, best, worst);
    }
    k[slot] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(f: f64, a: f64, len: usize, dt: f64) -> Vec<Complex64> {
        (0..len).map(|n| Complex64::from_polar(a, TAU * f * n as f64 * dt)).collect()
    }

    #[test]
    fn pure_tone() {
        let fv = naff_extract(&tone(0.25, 1.0, 4096, 1.0), 1.0, 1).unwrap();
        assert!((fv.omega[0] - 0.25).abs() < 1e-10, "{}", fv.omega[0]);
        assert!((fv.amplitudes[0] - 1.0).abs() < 1e-8);
        assert!(fv.residual < 1e-6);
    }

    #[test]
    fn two_tones_sorted_by_amplitude() {
        let mut s = tone(0.381966, 0.3, 4096, 0.1);
        for (a, b) in s.iter_mut().zip(tone(0.618034, 1.0, 4096, 0.1)) {
            *a += b;
        }
        let fv = naff_extract(&s, 0.1, 2).unwrap();
        assert!((fv.omega[0] - 0.618034).abs() < 1e-8);
        assert!((fv.omega[1] - 0.381966).abs() < 1e-8);
        assert!(fv.amplitudes[0] >= fv.amplitudes[1]);
        assert!((fv.amplitudes[1] - 0.3).abs() < 1e-6);
    }

    #[test]
    fn negative_and_aliased_frequencies_wrap_into_nyquist_band() {
        let fv = naff_extract(&tone(-0.1, 1.0, 1024, 1.0), 1.0, 1).unwrap();
        assert!((fv.omega[0] + 0.1).abs() < 1e-9);
        let fv = naff_extract(&tone(1.2, 1.0, 1024, 1.0), 1.0, 1).unwrap();
        assert!((fv.omega[0] - 0.2).abs() < 1e-9);
    }

    #[test]
    fn error_paths() {
        assert!(matches!(naff_extract(&tone(0.1, 1.0, 10, 1.0), 1.0, 1), Err(Error::SignalTooShort { .. })));
        let zero = vec![Complex64::new(0.0, 0.0); 128];
        assert!(matches!(naff_extract(&zero, 1.0, 1), Err(Error::DegenerateSignal)));
    }

    #[test]
    fn exact_resonance() {
        let c = diophantine_scan(&[1.0, 0.5], 1.0, 10).unwrap();
        assert_eq!(c.l_lower, 0.0);
        assert_eq!(c.worst_k, vec![1, -2]);
    }

    #[test]
    fn scalar_frequency() {
        let w = (5f64.sqrt() - 1.0) / 2.0;
        let c = diophantine_scan(&[w], 1.0, 20).unwrap();
        assert_eq!(c.worst_k, vec![1]);
        assert!((c.l_lower - w).abs() < 1e-15);
    }

    #[test]
    fn ball_counts() {
        assert_eq!(ball_size(1, 3), 7);
        assert_eq!(ball_size(2, 1), 5);
        assert_eq!(ball_size(2, 2), 13);
        assert_eq!(ball_size(3, 1), 7);
    }

    #[test]
    fn scan_guard() {
        assert!(matches!(diophantine_scan(&[1.0; 6], 1.0, 200), Err(Error::ScanTooLarge { .. })));
    }

    #[test]
    fn monotone_in_k_max() {
        let w = [1.0, 2f64.sqrt(), 3f64.sqrt()];
        let mut last = f64::INFINITY;
        for k in 1..25 {
            let c = diophantine_scan(&w, 1.5, k).unwrap();
            assert!(c.l_lower <= last);
            last = c.l_lower;
        }
    }
}
