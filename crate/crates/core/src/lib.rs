//! Weak-supervision training with an adversarial labeling-function
//! discriminator.
//!
//! Texts are annotated by keyword/regex labeling functions (LFs), encoded as
//! TF-IDF vectors and fed to a shared feature extractor. A classifier learns
//! the weak labels while an LF discriminator learns which LF annotated each
//! sample; the extractor descends `J_C - lambda * J_D`, pushing its
//! representation away from LF-specific signals.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod lf;
pub mod nn;
pub mod pipeline;
pub mod registry;
pub mod search;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
