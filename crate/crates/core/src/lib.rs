//! Controllable voice conversion at desk scale.
//!
//! The pipeline maps explicit conditioning features (F0 contour, intensity,
//! aligned phonemes, speaker identity) to log-mel spectrograms with a fully
//! convolutional generator trained adversarially, then reconstructs audio
//! with Griffin-Lim. Prosody controls (pitch shift, ambitus scaling, vowel
//! duration scaling, target-speaker adaptation) operate on the conditioning
//! features at inference time.

pub mod align;
pub mod cli;
pub mod control;
pub mod dsp;
pub mod eval;
pub mod model;
pub mod tensor;
pub mod train;
