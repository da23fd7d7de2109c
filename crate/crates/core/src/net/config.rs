use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};

/// Which feature map an encoder stage hands to its decoder partner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipSource {
    /// The normalized conv output before pooling (standard U-Net).
    PrePool,
    /// The stage's spectral output, nearest-upsampled back to the skip resolution.
    PostSpectral,
}

/// Standard deviation rule for the complex spectral weights `R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectralInit {
    /// `1/(c_in·√(k_h·k_w))`.
    ModeScaled,
    /// `1/√c_in`, which preserves activation power for band-limited inputs.
    FanIn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// `(H, W)` of input patches, powers of two.
    pub input_size: (usize, usize),
    pub base_filters: usize,
    /// Encoder stages before the bottleneck.
    pub depth: usize,
    pub bottleneck_filters: usize,
    /// Fraction of modes kept per axis at each spectral layer.
    pub mode_fraction: f64,
    pub dropout_rate: f64,
    pub output_channels: usize,
    /// `false` replaces every spectral layer by the identity (plain U-Net).
    pub spectral: bool,
    pub skip_source: SkipSource,
    /// Per-pixel softmax over output channels after the final projection.
    pub final_softmax: bool,
    /// Upper bound on group-norm groups; the layer uses `min(groups, channels)`.
    pub norm_groups: usize,
    pub norm_eps: f64,
    /// Weight of the L1 penalty on conv kernels.
    pub l1_coefficient: f64,
    pub spectral_init: SpectralInit,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            input_size: (32, 32),
            base_filters: 16,
            depth: 4,
            bottleneck_filters: 256,
            mode_fraction: 0.5,
            dropout_rate: 0.1,
            output_channels: 1,
            spectral: true,
            skip_source: SkipSource::PrePool,
            final_softmax: false,
            norm_groups: 8,
            norm_eps: 1e-5,
            l1_coefficient: 1e-5,
            spectral_init: SpectralInit::FanIn,
        }
    }
}

impl NetworkConfig {
    /// The published configuration: 128×128 inputs, otherwise defaults.
    pub fn paper() -> Self {
        Self {
            input_size: (128, 128),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        if !h.is_power_of_two() || !w.is_power_of_two() {
            return invalid(format!("input_size {:?} must be powers of two", self.input_size));
        }
        if self.depth == 0 {
            return invalid("depth must be at least 1");
        }
        let div = 1usize.checked_shl(self.depth as u32).unwrap_or(0);
        if div == 0 || h % div != 0 || w % div != 0 {
            return invalid(format!("input_size {:?} is not divisible by 2^{}", self.input_size, self.depth));
        }
        if self.base_filters == 0 {
            return invalid("base_filters must be positive");
        }
        if self.bottleneck_filters != self.base_filters << self.depth {
            return invalid(format!(
                "filters double per stage, so bottleneck_filters must be {} (got {})",
                self.base_filters << self.depth,
                self.bottleneck_filters
            ));
        }
        if !(self.mode_fraction > 0.0 && self.mode_fraction <= 1.0) {
            return invalid(format!("mode_fraction {} outside (0, 1]", self.mode_fraction));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return invalid(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if self.output_channels == 0 {
            return invalid("output_channels must be positive");
        }
        if self.norm_groups == 0 {
            return invalid("norm_groups must be positive");
        }
        if !(self.norm_eps > 0.0) {
            return invalid("norm_eps must be positive");
        }
        if !(self.l1_coefficient >= 0.0) {
            return invalid("l1_coefficient must be non-negative");
        }
        Ok(())
    }

    /// Channels produced by encoder stage `i`.
    pub fn stage_filters(&self, i: usize) -> usize {
        self.base_filters << i
    }

    /// `(H, W)` after `levels` poolings.
    pub fn resolution(&self, levels: usize) -> (usize, usize) {
        (self.input_size.0 >> levels, self.input_size.1 >> levels)
    }

    /// Modes kept along an axis of length `n`.
    pub fn modes(&self, n: usize) -> usize {
        ((self.mode_fraction * n as f64).round() as usize).clamp(1, n)
    }

    pub fn groups(&self, channels: usize) -> usize {
        let mut g = self.norm_groups.min(channels);
        while channels % g != 0 {
            g -= 1;
        }
        g
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn conv(k: usize, ci: usize, co: usize) -> usize {
    k * k * ci * co + co
}

/// Closed-form trainable scalar count; complex weights count twice.
pub fn param_count(cfg: &NetworkConfig) -> usize {
    let spectral = |level: usize, c: usize| {
        if !cfg.spectral {
            return 0;
        }
        let (h, w) = cfg.resolution(level);
        2 * cfg.modes(h) * cfg.modes(w) * c * c
    };
    let mut total = 0;
    let mut c_in = 1;
    for i in 0..cfg.depth {
        let c = cfg.stage_filters(i);
        total += conv(3, c_in, c) + 2 * c + conv(3, c, c) + 2 * c + spectral(i + 1, c);
        c_in = c;
    }
    let cb = cfg.bottleneck_filters;
    total += conv(3, c_in, cb) + 2 * cb + spectral(cfg.depth, cb);
    let mut below = cb;
    for i in (0..cfg.depth).rev() {
        let c = cfg.stage_filters(i);
        total += 4 * below * c + c + conv(3, 2 * c, c) + conv(3, c, c) + 2 * c + spectral(i, c);
        below = c;
    }
    total + conv(1, cfg.base_filters, cfg.output_channels)
}
