//! Variational autoencoder whose latent state evolves under a learned
//! dynamics model, trained end to end on synthetic blob sequences.

mod synth;
mod train;
mod vae;

pub use synth::{oscillator_offset, render_blob, synth_dataset, synth_sequence, FrameSequence, SynthConfig};
pub use train::{
    fit_latent, generate_texture, latent_loss, FramePairs, LatentFitOutcome, LatentModel, LatentTrainConfig, Texture,
};
pub use vae::{kl_divergence, vae_dyn_loss, vae_forward, VaeOutput, VaeParams};
