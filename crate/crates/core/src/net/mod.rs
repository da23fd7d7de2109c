//! The spectral U-Net: conv encoder/decoder stages that each end in a
//! Fourier-domain channel-mixing layer followed by a magnitude.

mod checkpoint;
mod config;
mod model;

pub use checkpoint::{checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use config::{param_count, NetworkConfig, SkipSource, SpectralInit};
pub use model::{
    apply_spectral, bottleneck_forward, decoder_block_forward, encoder_block_forward, init_params, spectral_layer,
    BottleneckBlock, ConvParams, DecoderBlock, EncoderBlock, Layout, ModelState, NormParams, SpectralWeights,
};
