use std::f64::consts::PI;

use crate::{Error, Result};

/// A sampled source time function.
#[derive(Debug, Clone, PartialEq)]
pub struct Wavelet {
    dt: f64,
    samples: Vec<f64>,
}

impl Wavelet {
    pub fn new(dt: f64, samples: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("wavelet dt must be positive, got {dt}")));
        }
        if samples.is_empty() {
            return Err(Error::invalid("wavelet needs at least one sample"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("wavelet samples must be finite"));
        }
        Ok(Self { dt, samples })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn nt(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { dt: self.dt, samples: self.samples.iter().map(|s| s * factor).collect() }
    }
}

/// Ricker wavelet `(1 - 2π²f²τ²) exp(-π²f²τ²)` with `τ = t - t0`, sampled at
/// `t = k·dt`.
pub fn ricker(peak_freq_hz: f64, dt: f64, nt: usize, t0: f64) -> Result<Wavelet> {
    if !(peak_freq_hz > 0.0 && peak_freq_hz.is_finite()) {
        return Err(Error::invalid(format!("peak frequency must be positive, got {peak_freq_hz}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("dt must be positive, got {dt}")));
    }
    if nt == 0 {
        return Err(Error::invalid("nt must be at least 1"));
    }
    let a = (PI * peak_freq_hz).powi(2);
    let samples = (0..nt)
        .map(|k| {
            let tau = k as f64 * dt - t0;
            (1.0 - 2.0 * a * tau * tau) * (-a * tau * tau).exp()
        })
        .collect();
    Wavelet::new(dt, samples)
}

impl Wavelet {
    /// Ricker with the conventional delay `t0 = 1 / peak_freq`.
    pub fn ricker(peak_freq_hz: f64, dt: f64, nt: usize) -> Result<Self> {
        ricker(peak_freq_hz, dt, nt, 1.0 / peak_freq_hz)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_is_one_at_delay() {
        // t0 = 1/8 = 0.125 s is not a multiple of 1.9 ms, so evaluate on a grid
        // that contains it.
        let w = ricker(8.0, 0.125 / 50.0, 1000, 0.125).unwrap();
        assert_eq!(w.samples()[50], 1.0);
    }

    #[test]
    fn symmetric_about_delay() {
        let dt = 0.0019;
        let t0 = 100.0 * dt;
        let w = ricker(8.0, dt, 1000, t0).unwrap();
        for k in 1..100 {
            let a = w.samples()[100 - k];
            let b = w.samples()[100 + k];
            assert!((a - b).abs() <= 1e-12, "k={k}: {a} vs {b}");
        }
    }

    #[test]
    fn spectrum_peaks_at_peak_frequency() {
        let dt = 0.001;
        let nt = 1000;
        let w = Wavelet::ricker(10.0, dt, nt).unwrap();
        // Plain DFT magnitude; bin spacing 1 Hz.
        let mag = |bin: usize| {
            let (mut re, mut im) = (0.0, 0.0);
            for (k, s) in w.samples().iter().enumerate() {
                let ph = -2.0 * PI * (bin * k) as f64 / nt as f64;
                re += s * ph.cos();
                im += s * ph.sin();
            }
            (re * re + im * im).sqrt()
        };
        let peak = (0..nt / 2).max_by(|&a, &b| mag(a).total_cmp(&mag(b))).unwrap();
        let freq = peak as f64 / (nt as f64 * dt);
        assert!((freq - 10.0).abs() <= 1.0, "peak at {freq} Hz");
    }

    #[test]
    fn zero_mean_over_support() {
        let f = 8.0;
        let dt = 0.0005;
        let nt = (6.0 / f / dt) as usize;
        let w = Wavelet::ricker(f, dt, nt).unwrap();
        let integral: f64 = w.samples().iter().sum::<f64>() * dt;
        // Peak amplitude is 1; compare the integral against 1e-3 of it.
        assert!(integral.abs() < 1e-3, "integral {integral}");
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(ricker(0.0, 0.001, 10, 0.0).is_err());
        assert!(ricker(8.0, -0.001, 10, 0.0).is_err());
        assert!(ricker(8.0, 0.001, 0, 0.0).is_err());
    }
}
