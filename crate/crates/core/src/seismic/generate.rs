use serde::{Deserialize, Serialize};

use super::model::{
    add_scaled_noise, gaussian_noise, reflectivity_from_impedance, synthesize_section, ImpedanceSection,
    ReflectivitySection, TraceSection,
};
use super::WaveletSpec;
use crate::error::{invalid, Result};
use crate::tensor::{RealGrid, RngState};

/// A noise level: noiseless, or a finite SNR in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Snr {
    Db(f64),
    Clean(CleanTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CleanTag {
    #[serde(rename = "clean")]
    Clean,
}

impl Snr {
    pub const CLEAN: Snr = Snr::Clean(CleanTag::Clean);

    /// `+inf` for the noiseless level.
    pub fn db(self) -> f64 {
        match self {
            Snr::Db(v) => v,
            Snr::Clean(_) => f64::INFINITY,
        }
    }

    /// File-name label: `clean` or e.g. `snr_20`.
    pub fn label(self) -> String {
        match self {
            Snr::Db(v) => format!("snr_{v}"),
            Snr::Clean(_) => "clean".to_string(),
        }
    }
}

/// Levels a dataset may request.
pub const ALLOWED_SNR_DB: [f64; 4] = [30.0, 20.0, 10.0, 0.0];

/// Synthetic layered-earth dataset description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    /// `(time samples, traces)` per section; powers of two.
    pub patch_size: (usize, usize),
    /// Training sections.
    pub sample_count: usize,
    pub val_count: usize,
    pub test_count: usize,
    /// Inclusive range of layers per section.
    pub layer_count_range: (usize, usize),
    /// Probability that an interior layer is 1–3 samples thick.
    pub thin_layer_fraction: f64,
    /// Probability that an interior thick layer pinches out inside the section.
    pub wedge_fraction: f64,
    /// Largest interface dip in samples per trace.
    pub max_dip: f64,
    /// Inclusive impedance bounds (m/s · g/cc).
    pub impedance_range: (f64, f64),
    pub wavelet: WaveletSpec,
    pub snr_db_list: Vec<Snr>,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            patch_size: (32, 32),
            sample_count: 256,
            val_count: 32,
            test_count: 32,
            layer_count_range: (3, 6),
            thin_layer_fraction: 0.2,
            wedge_fraction: 0.5,
            max_dip: 0.3,
            impedance_range: (2500.0, 10000.0),
            wavelet: WaveletSpec::default(),
            snr_db_list: vec![Snr::CLEAN, Snr::Db(30.0), Snr::Db(20.0), Snr::Db(10.0), Snr::Db(0.0)],
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.patch_size;
        if !h.is_power_of_two() || !w.is_power_of_two() {
            return invalid(format!("patch size {h}×{w} must be powers of two"));
        }
        if self.sample_count == 0 {
            return invalid("sample_count must be at least 1");
        }
        let (lo, hi) = self.layer_count_range;
        if lo == 0 || lo > hi {
            return invalid(format!("layer_count_range ({lo}, {hi}) must satisfy 1 ≤ lo ≤ hi"));
        }
        // Every interior thick layer needs four samples, thin ones at most three.
        if 4 * hi > h {
            return invalid(format!("{hi} layers do not fit in {h} time samples (need 4 per layer)"));
        }
        for (name, p) in [("thin_layer_fraction", self.thin_layer_fraction), ("wedge_fraction", self.wedge_fraction)] {
            if !(0.0..=1.0).contains(&p) {
                return invalid(format!("{name} {p} outside [0, 1]"));
            }
        }
        if !(self.max_dip >= 0.0) || !self.max_dip.is_finite() {
            return invalid(format!("max_dip {} must be a finite non-negative number", self.max_dip));
        }
        let (a, b) = self.impedance_range;
        if !(a > 0.0 && b > a && b.is_finite()) {
            return invalid(format!("impedance_range ({a}, {b}) must satisfy 0 < lo < hi"));
        }
        // Neighbouring layers differ by at least 5 % in log impedance.
        if (b / a).ln() < 0.1 {
            return invalid("impedance_range is too narrow for distinct layers");
        }
        self.wavelet.build()?;
        if self.snr_db_list.is_empty() {
            return invalid("snr_db_list must contain at least one level");
        }
        for s in &self.snr_db_list {
            if let Snr::Db(v) = s {
                if !ALLOWED_SNR_DB.contains(v) {
                    return invalid(format!("SNR {v} dB not in {{clean, 30, 20, 10, 0}}"));
                }
            }
        }
        Ok(())
    }
}

/// One synthetic section with every requested noise variant.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSection {
    pub impedance: ImpedanceSection,
    pub reflectivity: ReflectivitySection,
    /// Noiseless forward-modelled traces.
    pub clean: TraceSection,
    /// One entry per `snr_db_list` level, in order. All finite levels share
    /// a single noise realization scaled to the requested power.
    pub noisy: Vec<TraceSection>,
}

const MIN_LOG_CONTRAST: f64 = 0.05;

fn layer_impedances(count: usize, (lo, hi): (f64, f64), rng: &mut RngState) -> Vec<f64> {
    let (la, lb) = (lo.ln(), hi.ln());
    let mut out: Vec<f64> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut v = rng.uniform_range(la, lb);
        if let Some(&prev) = out.last() {
            let prev = f64::ln(prev);
            let mut tries = 0;
            while (v - prev).abs() < MIN_LOG_CONTRAST && tries < 64 {
                v = rng.uniform_range(la, lb);
                tries += 1;
            }
            if (v - prev).abs() < MIN_LOG_CONTRAST {
                v = if prev + MIN_LOG_CONTRAST <= lb { prev + MIN_LOG_CONTRAST } else { prev - MIN_LOG_CONTRAST };
            }
        }
        out.push(v.exp());
    }
    out
}

/// Interface depths at trace 0 plus per-interface dips (samples per trace).
fn interfaces(spec: &DatasetSpec, n: usize, rng: &mut RngState) -> (Vec<f64>, Vec<f64>) {
    let (h, w) = spec.patch_size;
    if n == 0 {
        return (Vec::new(), Vec::new());
    }
    // Gaps: top margin, n − 1 interior layers, bottom margin.
    let thin: Vec<bool> = (0..n - 1).map(|_| rng.uniform() < spec.thin_layer_fraction).collect();
    let mut gaps: Vec<usize> = Vec::with_capacity(n + 1);
    gaps.push(1);
    for &t in &thin {
        gaps.push(if t { rng.int_range(1, 3) } else { 4 });
    }
    gaps.push(1);
    let used: usize = gaps.iter().sum();
    let spare = (h - 1).saturating_sub(used);
    let thick: Vec<usize> = (0..gaps.len()).filter(|&i| i == 0 || i == gaps.len() - 1 || !thin[i - 1]).collect();
    let weights: Vec<f64> = thick.iter().map(|_| rng.uniform() + 0.05).collect();
    let wsum: f64 = weights.iter().sum();
    for (&i, wgt) in thick.iter().zip(&weights) {
        gaps[i] += (spare as f64 * wgt / wsum).floor() as usize;
    }
    let mut depth = 0usize;
    let mut starts = Vec::with_capacity(n);
    for g in &gaps[..n] {
        depth += g;
        starts.push(depth as f64);
    }

    let mut dips = Vec::with_capacity(n);
    for i in 0..n {
        let mut d = rng.uniform_range(-spec.max_dip, spec.max_dip);
        if i > 0 {
            let gap = starts[i] - starts[i - 1];
            if thin[i - 1] {
                // Thin beds keep their thickness.
                d = dips[i - 1];
            } else if w > 1 && rng.uniform() < spec.wedge_fraction {
                // Converge onto the interface above somewhere inside the section.
                let pinch = rng.uniform_range(0.3, 0.9) * (w - 1) as f64;
                d = dips[i - 1] - gap / pinch;
            }
        }
        dips.push(d);
    }
    (starts, dips)
}

/// A layered impedance section with dipping interfaces, thin beds and wedge
/// pinch-outs, forward-modelled to traces with every requested noise level.
pub fn generate_section(spec: &DatasetSpec, rng: &mut RngState) -> Result<GeneratedSection> {
    spec.validate()?;
    let (h, w) = spec.patch_size;
    let wavelet = spec.wavelet.build()?;
    let layers = rng.int_range(spec.layer_count_range.0, spec.layer_count_range.1);
    let imps = layer_impedances(layers, spec.impedance_range, rng);
    let (starts, dips) = interfaces(spec, layers - 1, rng);

    let mut grid = RealGrid::new(h, w, 1);
    for x in 0..w {
        // Integer depth per interface, forced non-decreasing so crossing
        // interfaces collapse the layer between them.
        let mut depths = Vec::with_capacity(starts.len());
        let mut floor = 0i64;
        for (s, d) in starts.iter().zip(&dips) {
            let z = (s + d * x as f64).round() as i64;
            let z = z.max(floor).clamp(0, h as i64);
            depths.push(z as usize);
            floor = z;
        }
        for t in 0..h {
            let layer = depths.iter().filter(|&&z| z <= t).count();
            grid.set(t, x, 0, imps[layer]);
        }
    }
    let impedance = ImpedanceSection {
        grid,
        dt: spec.wavelet.dt,
    };
    let reflectivity = reflectivity_from_impedance(&impedance)?;
    let clean = synthesize_section(&reflectivity, spec.wavelet.dt, &wavelet)?;

    let noise = gaussian_noise(clean.grid.len(), rng);
    let flat = clean.grid.data().iter().all(|&v| v == 0.0);
    let noisy = spec
        .snr_db_list
        .iter()
        .map(|s| match s {
            Snr::Clean(_) => Ok(clean.clone()),
            // A single-layer section has no reflections; its noisy variants
            // stay silent rather than failing the whole dataset.
            Snr::Db(_) if flat => Ok(TraceSection {
                snr_db: Some(s.db()),
                ..clean.clone()
            }),
            Snr::Db(v) => add_scaled_noise(&clean, &noise, *v),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GeneratedSection {
        impedance,
        reflectivity,
        clean,
        noisy,
    })
}

/// `count` sections drawn from independent forks of `rng`, one per index,
/// so the result does not depend on evaluation order or thread count.
pub fn generate_sections(spec: &DatasetSpec, count: usize, rng: &RngState) -> Result<Vec<GeneratedSection>> {
    use rayon::prelude::*;
    (0..count)
        .into_par_iter()
        .map(|i| generate_section(spec, &mut rng.fork(i as u64)))
        .collect()
}
