//! Feature-domain adaptation for speaker recognition with cycle-consistent
//! adversarial networks, plus the surrounding pipeline: audio augmentation,
//! log-mel feature extraction, a verification backend, and EER/DCF scoring.

pub mod autodiff;
pub mod backend;
pub mod dsp;
pub mod models;
pub mod pipeline;
pub mod training;
