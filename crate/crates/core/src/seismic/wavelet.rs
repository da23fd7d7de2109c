use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Sampled zero-phase source wavelet.
#[derive(Debug, Clone, PartialEq)]
pub struct Wavelet {
    pub samples: Vec<f64>,
    /// Seconds per sample.
    pub dt: f64,
    /// Hz.
    pub peak_frequency: f64,
}

impl Wavelet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Index of the zero-time sample.
    pub fn center(&self) -> usize {
        self.samples.len() / 2
    }
}

/// Ricker wavelet parameters as they appear in dataset configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveletSpec {
    pub peak_frequency: f64,
    pub dt: f64,
    pub length: usize,
}

impl Default for WaveletSpec {
    fn default() -> Self {
        Self {
            peak_frequency: 30.0,
            dt: 0.001,
            length: 81,
        }
    }
}

impl WaveletSpec {
    pub fn build(&self) -> Result<Wavelet> {
        ricker_wavelet(self.peak_frequency, self.dt, self.length)
    }
}

/// `(1 − 2π²f²t²)·exp(−π²f²t²)` sampled at `dt` around a center sample.
pub fn ricker_wavelet(peak_frequency: f64, dt: f64, length: usize) -> Result<Wavelet> {
    if !(dt > 0.0) || !dt.is_finite() {
        return invalid(format!("sampling interval must be positive, got {dt}"));
    }
    if length % 2 == 0 {
        return invalid(format!("wavelet length must be odd, got {length}"));
    }
    let nyquist = 0.5 / dt;
    if !(peak_frequency > 0.0) || peak_frequency >= nyquist {
        return invalid(format!(
            "peak frequency {peak_frequency} Hz must lie in (0, {nyquist}) for dt = {dt} s"
        ));
    }
    let c = (length / 2) as isize;
    let samples = (0..length as isize)
        .map(|i| {
            let a = (PI * peak_frequency * (i - c) as f64 * dt).powi(2);
            (1.0 - 2.0 * a) * (-a).exp()
        })
        .collect();
    Ok(Wavelet {
        samples,
        dt,
        peak_frequency,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peak_and_symmetry() {
        let w = ricker_wavelet(25.0, 0.002, 41).unwrap();
        assert_eq!(w.samples[w.center()], 1.0);
        for k in 1..=20 {
            assert_eq!(w.samples[20 - k], w.samples[20 + k]);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(ricker_wavelet(500.0, 0.001, 41).is_err());
        assert!(ricker_wavelet(30.0, 0.001, 40).is_err());
        assert!(ricker_wavelet(30.0, 0.0, 41).is_err());
    }
}
