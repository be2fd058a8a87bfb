//! Open-set bias discovery and bias-aware training.

pub mod autodiff;
pub mod discovery;
pub mod evaluation;
pub mod pipeline;
pub mod synth;
pub mod trainer;
