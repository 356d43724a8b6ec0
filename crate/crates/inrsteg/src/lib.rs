//! Cross-modal steganography in the weight space of sine-activated
//! coordinate networks.
//!
//! Media of any supported modality (image, audio, video, SDF samples) is
//! fitted into a small sine-MLP. Secret networks are then written into
//! disjoint diagonal blocks of a larger stego network, whose remaining
//! parameters are fitted to the cover media under a freeze mask, so the
//! secrets survive training bit-for-bit. A 128-bit key derives per-layer
//! node permutations that scatter the secret blocks without changing the
//! network function; the same key undoes them, and the secrets are
//! extracted losslessly.
//!
//! Module map:
//!
//! - [`nn`] — network types, initialization, forward, gradients, masked Adam
//! - [`codecs`] — media files <-> coordinate/target datasets
//! - [`steg`] — stego planning, allocation, masked hiding, extraction
//! - [`keyperm`] — key-derived layer permutations
//! - [`metrics`] — PSNR / SSIM / SNR / MAE distortion metrics
//! - [`robustness`] — int8 quantization, magnitude pruning, weight histograms
//! - [`modelio`] — bit-exact `.inrw` / `.qz` model files and recipe JSON
//!
//! With the default `parallel` feature, batch reductions fan out over rayon;
//! partials are folded in a fixed order, so results are bit-identical to the
//! sequential build for any thread count.

pub mod codecs;
pub mod error;
pub mod keyperm;
pub mod mat;
pub mod metrics;
pub mod modelio;
pub mod nn;
pub mod robustness;
pub mod steg;

pub use error::{Error, Result};
