//! Normal-texture inpainting augmentation for long-tailed multi-label image
//! classification.
//!
//! Head-class lesions located by class activation maps are replaced with
//! normal-looking texture from a diffusion model trained on normal images,
//! turning multi-label samples into extra tail-class samples. Head lesions
//! that are likely to overlap a tail lesion are kept, and augmented samples
//! enter fine-tuning progressively.

pub mod augment;
pub mod cam;
pub mod checkpoint;
pub mod classifier;
pub mod dataset;
pub mod error;
pub mod generator;
pub mod imageio;
pub mod lkg;
pub mod manifest;
pub mod nn;
pub mod pil;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod trainer;
pub mod types;

pub use error::{Error, Result};
