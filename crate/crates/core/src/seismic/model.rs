use rayon::prelude::*;

use super::Wavelet;
use crate::error::{invalid, shape_err, Error, Result};
use crate::tensor::{RealGrid, RngState};

/// Acoustic impedance over `(time, trace, 1)`, in m/s · g/cc.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpedanceSection {
    pub grid: RealGrid<f64>,
    pub dt: f64,
}

/// Dimensionless reflection coefficients over `(time, trace, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectivitySection {
    pub grid: RealGrid<f64>,
}

/// Recorded (or synthetic) amplitudes over `(time, trace, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSection {
    pub grid: RealGrid<f64>,
    pub dt: f64,
    /// `None` for noiseless data.
    pub snr_db: Option<f64>,
}

fn check_section(grid: &RealGrid<f64>) -> Result<(usize, usize)> {
    if grid.rank() != 3 || grid.channels() != 1 {
        return shape_err(format!("sections are (time, trace, 1), got {:?}", grid.dims()));
    }
    Ok((grid.height(), grid.width()))
}

/// Column `x` of a `(time, trace, 1)` grid.
pub fn trace(grid: &RealGrid<f64>, x: usize) -> Vec<f64> {
    let (h, w) = (grid.height(), grid.width());
    (0..h).map(|t| grid.data()[t * w + x]).collect()
}

/// Assemble a `(time, trace, 1)` grid from equal-length traces.
pub fn from_traces(traces: &[Vec<f64>]) -> Result<RealGrid<f64>> {
    let w = traces.len();
    let h = traces.first().map_or(0, Vec::len);
    if traces.iter().any(|t| t.len() != h) {
        return shape_err("traces of unequal length");
    }
    Ok(RealGrid::from_fn(&[h, w, 1], |i| traces[i % w][i / w]))
}

/// `i_p = ν·ρ`.
pub fn impedance_from_v_rho(v: &RealGrid<f64>, rho: &RealGrid<f64>, dt: f64) -> Result<ImpedanceSection> {
    check_section(v)?;
    if v.dims() != rho.dims() {
        return shape_err(format!("velocity {:?} vs density {:?}", v.dims(), rho.dims()));
    }
    if let Some(bad) = v.data().iter().chain(rho.data()).find(|&&x| !(x > 0.0)) {
        return invalid(format!("velocity and density must be positive, found {bad}"));
    }
    let data = v.data().iter().zip(rho.data()).map(|(a, b)| a * b).collect();
    Ok(ImpedanceSection {
        grid: RealGrid::from_vec(v.dims(), data)?,
        dt,
    })
}

/// `r[t] = (ln ip[t+1] − ln ip[t]) / 2`, with the last sample of each trace 0.
pub fn reflectivity_series(ip: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = ip.iter().find(|&&x| !(x > 0.0)) {
        return invalid(format!("impedance must be positive, found {bad}"));
    }
    let mut r: Vec<f64> = ip.windows(2).map(|p| 0.5 * (p[1].ln() - p[0].ln())).collect();
    if !ip.is_empty() {
        r.push(0.0);
    }
    Ok(r)
}

/// `ip[t] = ip0 · exp(2 Σ_{k<t} r[k])`.
pub fn impedance_series(r: &[f64], ip0: f64) -> Result<Vec<f64>> {
    if !(ip0 > 0.0) {
        return invalid(format!("starting impedance must be positive, got {ip0}"));
    }
    if let Some(bad) = r.iter().find(|x| !(x.abs() < 1.0)) {
        return invalid(format!("reflection coefficients must lie in (-1, 1), found {bad}"));
    }
    let mut acc = 0.0f64;
    Ok(r
        .iter()
        .map(|&v| {
            let out = ip0 * (2.0 * acc).exp();
            acc += v;
            out
        })
        .collect())
}

pub fn reflectivity_from_impedance(ip: &ImpedanceSection) -> Result<ReflectivitySection> {
    let (_, w) = check_section(&ip.grid)?;
    let traces = (0..w).map(|x| reflectivity_series(&trace(&ip.grid, x))).collect::<Result<Vec<_>>>()?;
    Ok(ReflectivitySection {
        grid: from_traces(&traces)?,
    })
}

pub fn impedance_from_reflectivity(r: &ReflectivitySection, ip0: f64, dt: f64) -> Result<ImpedanceSection> {
    let (_, w) = check_section(&r.grid)?;
    let traces = (0..w).map(|x| impedance_series(&trace(&r.grid, x), ip0)).collect::<Result<Vec<_>>>()?;
    Ok(ImpedanceSection {
        grid: from_traces(&traces)?,
        dt,
    })
}

/// `w ∗ r` cropped to `r.len()` so a spike at `t₀` yields the wavelet peak at `t₀`.
pub fn synthesize_trace(r: &[f64], dt: f64, w: &Wavelet) -> Result<Vec<f64>> {
    if (dt - w.dt).abs() > 1e-12 * dt.abs().max(w.dt.abs()) {
        return invalid(format!("reflectivity dt {dt} s does not match wavelet dt {} s", w.dt));
    }
    let n = r.len();
    let c = w.center() as isize;
    let mut s = vec![0.0; n];
    for (k, &rk) in r.iter().enumerate() {
        if rk == 0.0 {
            continue;
        }
        for (j, &wj) in w.samples.iter().enumerate() {
            let t = k as isize + j as isize - c;
            if (0..n as isize).contains(&t) {
                s[t as usize] += rk * wj;
            }
        }
    }
    Ok(s)
}

/// Noiseless trace section from reflectivity.
pub fn synthesize_section(r: &ReflectivitySection, dt: f64, w: &Wavelet) -> Result<TraceSection> {
    let (_, width) = check_section(&r.grid)?;
    let traces = (0..width)
        .into_par_iter()
        .map(|x| synthesize_trace(&trace(&r.grid, x), dt, w))
        .collect::<Result<Vec<_>>>()?;
    Ok(TraceSection {
        grid: from_traces(&traces)?,
        dt,
        snr_db: None,
    })
}

pub fn mean_power(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}

/// `10·log10(P_signal / P_noise)` where the noise is `noisy − clean`.
pub fn measured_snr_db(clean: &[f64], noisy: &[f64]) -> f64 {
    let noise: Vec<f64> = noisy.iter().zip(clean).map(|(n, c)| n - c).collect();
    10.0 * (mean_power(clean) / mean_power(&noise)).log10()
}

/// A unit-variance white Gaussian realization.
pub fn gaussian_noise(len: usize, rng: &mut RngState) -> Vec<f64> {
    (0..len).map(|_| rng.normal()).collect()
}

/// Add `noise` rescaled so the realized SNR equals `snr_db` exactly.
/// An infinite `snr_db` returns the input unchanged.
pub fn add_scaled_noise(s: &TraceSection, noise: &[f64], snr_db: f64) -> Result<TraceSection> {
    if snr_db == f64::INFINITY {
        return Ok(s.clone());
    }
    if !snr_db.is_finite() {
        return invalid(format!("SNR must be finite or +inf, got {snr_db}"));
    }
    if noise.len() != s.grid.len() {
        return shape_err(format!("{} noise samples for {} signal samples", noise.len(), s.grid.len()));
    }
    let ps = mean_power(s.grid.data());
    if ps == 0.0 {
        return Err(Error::InvalidArgument("cannot set an SNR on a zero-power signal".into()));
    }
    let pn = mean_power(noise);
    if pn == 0.0 {
        return invalid("noise realization has zero power");
    }
    let scale = (ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let data = s.grid.data().iter().zip(noise).map(|(a, n)| a + scale * n).collect();
    Ok(TraceSection {
        grid: RealGrid::from_vec(s.grid.dims(), data)?,
        dt: s.dt,
        snr_db: Some(snr_db),
    })
}

/// White Gaussian noise at `snr_db` relative to the section's mean power.
pub fn add_noise_snr(s: &TraceSection, snr_db: f64, rng: &mut RngState) -> Result<TraceSection> {
    if snr_db == f64::INFINITY {
        return Ok(s.clone());
    }
    let noise = gaussian_noise(s.grid.len(), rng);
    add_scaled_noise(s, &noise, snr_db)
}
