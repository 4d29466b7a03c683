//! A compression codec whose decoder is a diffusion sampler corrected, per
//! reverse step, by a linear blend with a deterministic end-to-end decode.
//!
//! The encoder owns the original signal, so at every DDIM step it can solve
//! for the blend factor that pulls the sampler's estimate of the clean
//! signal toward the truth; those factors are a few bytes of side
//! information (binary16 each) that the decoder replays to reproduce the
//! exact trajectory. The transmitted stream is the quantized latent of a
//! small autoencoder plus the factor track, framed by the `.crdf` container.
//!
//! Module map:
//! - [`schedule`]: noise schedules and SDE coefficient functions
//! - [`score`]: x0 predictors (analytic mixture oracle, tiny trainable net)
//! - [`correction`]: metrics, blend-factor search, corrected score
//! - [`sampler`]: encoder/decoder DDIM rollouts and seeded initialization
//! - [`latent`]: autoencoder pairs, entropy model, rate estimate, range coder
//! - [`bitstream`]: the `.crdf` wire container
//! - [`toytrain`]: desk-scale two-phase training with exact gradients
//! - [`tensor`], [`rng`], [`nn`], [`error`]: shared plumbing

pub mod bitstream;
pub mod correction;
pub mod error;
pub mod latent;
pub mod nn;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod score;
pub mod tensor;
pub mod toytrain;

pub use error::{Error, ProtocolError, Result};
pub use tensor::Tensor;
