//! Zero-phase Butterworth filters.
//!
//! A 4th-order Butterworth is two bilinear-transform biquads. Filtering runs
//! forward then backward over an odd extension of the signal, starting each
//! pass from the section's steady state for the first sample.

use crate::model::{ShotGather, Wavelet};
use crate::{Error, Result};

/// Cutoffs of the multiscale band schedule, low to high, in Hz.
pub const BAND_SCHEDULE_HZ: [f64; 6] = [4.0, 6.0, 8.0, 10.0, 12.0, 14.0];

pub fn band_schedule() -> Vec<f64> {
    BAND_SCHEDULE_HZ.to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    Low,
    High,
}

#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn design(pass: Pass, cutoff: f64, fs: f64, q: f64) -> Self {
        let w0 = 2.0 * std::f64::consts::PI * cutoff / fs;
        let (sn, cs) = w0.sin_cos();
        let alpha = sn / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b = match pass {
            Pass::Low => [(1.0 - cs) / 2.0, 1.0 - cs, (1.0 - cs) / 2.0],
            Pass::High => [(1.0 + cs) / 2.0, -(1.0 + cs), (1.0 + cs) / 2.0],
        };
        Self { b: b.map(|v| v / a0), a: [-2.0 * cs / a0, (1.0 - alpha) / a0] }
    }

    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / (1.0 + self.a[0] + self.a[1])
    }

    /// Transposed direct form II over `x` in place, state primed for a
    /// constant input equal to `x[0]`.
    fn run(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let g = self.dc_gain();
        let mut z1 = (g - self.b[0]) * x0;
        let mut z2 = (self.b[2] - self.a[1] * g) * x0;
        for v in x.iter_mut() {
            let xi = *v;
            let y = self.b[0] * xi + z1;
            z1 = self.b[1] * xi - self.a[0] * y + z2;
            z2 = self.b[2] * xi - self.a[1] * y;
            *v = y;
        }
    }
}

fn sections(pass: Pass, cutoff: f64, dt: f64) -> Result<[Biquad; 2]> {
    let fs = 1.0 / dt;
    let nyquist = fs / 2.0;
    if !(cutoff > 0.0 && cutoff < nyquist) {
        return Err(Error::invalid(format!("cutoff {cutoff} Hz must lie in (0, {nyquist}) Hz")));
    }
    // Pole pairs of the 4th-order Butterworth prototype.
    let q = |k: f64| 1.0 / (2.0 * (k * std::f64::consts::PI / 8.0).cos());
    Ok([Biquad::design(pass, cutoff, fs, q(1.0)), Biquad::design(pass, cutoff, fs, q(3.0))])
}

/// Zero-phase filtering of one trace sampled at `dt`.
pub fn filtfilt(signal: &[f64], dt: f64, cutoff: f64, pass: Pass) -> Result<Vec<f64>> {
    let secs = sections(pass, cutoff, dt)?;
    let n = signal.len();
    if n < 2 {
        return Ok(signal.to_vec());
    }
    let pad = ((3.0 / (cutoff * dt)).ceil() as usize).max(15).min(n - 1);
    let (first, last) = (signal[0], signal[n - 1]);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - signal[i]));
    ext.extend_from_slice(signal);
    ext.extend((1..=pad).map(|i| 2.0 * last - signal[n - 1 - i]));
    for s in &secs {
        s.run(&mut ext);
    }
    ext.reverse();
    for s in &secs {
        s.run(&mut ext);
    }
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

pub fn lowpass(signal: &[f64], dt: f64, cutoff: f64) -> Result<Vec<f64>> {
    filtfilt(signal, dt, cutoff, Pass::Low)
}

pub fn highpass(signal: &[f64], dt: f64, cutoff: f64) -> Result<Vec<f64>> {
    filtfilt(signal, dt, cutoff, Pass::High)
}

pub fn filter_gather(gather: &ShotGather, cutoff: f64, pass: Pass) -> Result<ShotGather> {
    let mut out = gather.clone();
    for r in 0..gather.n_receivers() {
        let f = filtfilt(gather.trace(r), gather.dt(), cutoff, pass)?;
        out.trace_mut(r).copy_from_slice(&f);
    }
    Ok(out)
}

/// Low-pass every trace of every gather.
pub fn lowpass_band(gathers: &[ShotGather], cutoff: f64) -> Result<Vec<ShotGather>> {
    gathers.iter().map(|g| filter_gather(g, cutoff, Pass::Low)).collect()
}

pub fn lowpass_wavelet(wavelet: &Wavelet, cutoff: f64) -> Result<Wavelet> {
    Wavelet::new(wavelet.dt(), lowpass(wavelet.samples(), wavelet.dt(), cutoff)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(f: f64, dt: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| (2.0 * PI * f * k as f64 * dt).sin()).collect()
    }

    fn energy(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    /// Magnitude of the DFT of `x` at frequency `f`.
    fn dft_mag(x: &[f64], dt: f64, f: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (k, v) in x.iter().enumerate() {
            let ph = 2.0 * PI * f * k as f64 * dt;
            re += v * ph.cos();
            im -= v * ph.sin();
        }
        (re * re + im * im).sqrt()
    }

    #[test]
    fn band_schedule_values() {
        assert_eq!(band_schedule(), vec![4.0, 6.0, 8.0, 10.0, 12.0, 14.0]);
    }

    #[test]
    fn dc_passes_lowpass_unchanged() {
        let x = vec![3.25; 400];
        let y = lowpass(&x, 0.002, 4.0).unwrap();
        for v in y {
            assert!((v - 3.25).abs() < 1e-10);
        }
        let y = highpass(&x, 0.002, 4.0).unwrap();
        assert!(y.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn lowpass_rejects_out_of_band_sinusoid() {
        let dt = 0.0019;
        let x = sine(10.0, dt, 2000);
        let y = lowpass(&x, dt, 4.0).unwrap();
        assert!(energy(&y) < 1e-3 * energy(&x), "{}", energy(&y) / energy(&x));
    }

    #[test]
    fn near_nyquist_cutoff_is_transparent() {
        let dt = 0.002;
        let w = Wavelet::ricker(10.0, dt, 500).unwrap();
        let y = lowpass(w.samples(), dt, 0.5 / dt - 1e-3).unwrap();
        let err: f64 = y.iter().zip(w.samples()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err / energy(w.samples()).sqrt() < 1e-3);
    }

    #[test]
    fn highpass_attenuates_low_band_by_40_db() {
        let dt = 0.002;
        let n = 4000;
        let x: Vec<f64> = sine(2.0, dt, n).iter().zip(sine(3.0, dt, n)).zip(sine(20.0, dt, n)).map(|((a, b), c)| a + b + c).collect();
        let y = highpass(&x, dt, 6.0).unwrap();
        let pass = dft_mag(&y, dt, 20.0) / dft_mag(&x, dt, 20.0);
        for f in [2.0, 3.0] {
            let stop = dft_mag(&y, dt, f) / dft_mag(&x, dt, f);
            let db = 20.0 * (pass / stop).log10();
            assert!(db >= 40.0, "{f} Hz: {db} dB");
        }
    }

    #[test]
    fn zero_phase() {
        let dt = 0.002;
        let w = Wavelet::ricker(6.0, dt, 800).unwrap();
        let y = lowpass(w.samples(), dt, 8.0).unwrap();
        let peak = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap()).unwrap().0;
        assert_eq!(peak(&y), peak(w.samples()));
    }

    #[test]
    fn cutoff_validation() {
        assert!(lowpass(&[1.0, 2.0], 0.002, 250.0).is_err());
        assert!(lowpass(&[1.0, 2.0], 0.002, 0.0).is_err());
        assert!(highpass(&[1.0, 2.0], 0.002, -1.0).is_err());
    }
}
