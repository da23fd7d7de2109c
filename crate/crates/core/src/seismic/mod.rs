//! Convolutional forward model `S = w ∗ r + ε` and synthetic section generation.

mod generate;
mod model;
mod wavelet;

pub use generate::{generate_section, generate_sections, CleanTag, DatasetSpec, GeneratedSection, Snr, ALLOWED_SNR_DB};
pub use model::{
    add_noise_snr, add_scaled_noise, from_traces, gaussian_noise, impedance_from_reflectivity, impedance_from_v_rho,
    impedance_series, mean_power, measured_snr_db, reflectivity_from_impedance, reflectivity_series,
    synthesize_section, synthesize_trace, trace, ImpedanceSection, ReflectivitySection, TraceSection,
};
pub use wavelet::{ricker_wavelet, Wavelet, WaveletSpec};
