//! EEG-to-text decoding by aligning EEG latents with a frozen
//! encoder-decoder language model, trained with a contrastive term and a
//! teacher-forced generation term over multiple text variants.

pub mod aligner;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod lm;
pub mod mtv;
pub mod nn;
pub mod objectives;
pub mod synth;
pub mod train;

pub use error::{GlimError, Result};
